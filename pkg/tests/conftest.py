import pytest

from hpgseg.core import PipelineConfig
from hpgseg.synth import SceneSpec


@pytest.fixture
def cfg():
    return PipelineConfig()


@pytest.fixture
def small_spec():
    return SceneSpec(num_instances=4, instance_extent=(0.1, 0.2), min_gap=0.06,
                     bounds=((0, 0, 0), (1.0, 1.0, 0.5)), seed=7)


def pytest_terminal_summary(terminalreporter):
    from oracles import ACCEPTANCE_LOG

    if ACCEPTANCE_LOG:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LOG:
            terminalreporter.write_line(line)
