from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

# one line per acceptance criterion, echoed at the end of the session
CRITERION_LINES: list[str] = []


@pytest.fixture
def configs_dir():
    return CONFIGS


@pytest.fixture
def report_criterion():
    def report(criterion):
        line = criterion.line()
        CRITERION_LINES.append(line)
        print(line)
        return criterion
    return report


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERION_LINES, key=lambda s: int(s.split(".")[0].split()[-1])):
            terminalreporter.write_line(line)
