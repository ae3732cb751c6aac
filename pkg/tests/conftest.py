import os
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from banditprobe.bandit import Choice, preset
from banditprobe.records import RunLog, TrialRecord

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

REPO_ROOT = Path(__file__).resolve().parents[1]


def make_run(seq, structure="symmetric", condition_id="c", run_id=0):
    """RunLog from [(choice, reward), ...]; choice is 'X', 'Y' or 'Invalid'."""
    s = preset(structure) if isinstance(structure, str) else structure
    trials = [TrialRecord(t, Choice(c), r, c) for t, (c, r) in enumerate(seq, start=1)]
    return RunLog(condition_id, run_id, s, "test", trials=trials)


@pytest.fixture
def paper_text():
    path = REPO_ROOT / "paper.md"
    if not path.exists():
        pytest.skip("paper.md not available")
    return path.read_text(encoding="utf-8")


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
