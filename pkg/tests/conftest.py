import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def scenario_frames():
    from wmx import scenario
    return scenario.render_sequence(scenario.crossing_schedule(), scenario.SceneSpec(seed=0), 400)


@pytest.fixture(scope="session")
def views500():
    from wmx import scenario
    return scenario.sample_views(500, seed=3)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
