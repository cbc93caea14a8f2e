import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from app.dataset.synth import synth_generate
from app.models import SynthConfig
from app.numeric.tensor import precision_name, set_precision

# the autouse precision reset is function-scoped and harmless to share across examples
settings.register_profile("suite", deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("suite")


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale training tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def float64():
    previous = precision_name()
    set_precision("float64")
    yield
    set_precision(previous)


@pytest.fixture(autouse=True)
def _restore_precision():
    previous = precision_name()
    yield
    set_precision(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_SYNTH = dict(num_scenes=24, height=20, width=24, cell_size=6, wall_rows=2, feature_dim=8, global_dim=10, seed=3)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """24 small room scenes (16/4/4), two annotators."""
    root = tmp_path_factory.mktemp("tiny_room")
    config = SynthConfig(annotators=2, **TINY_SYNTH)
    return synth_generate(config, root, split_sizes={"train": 16, "val": 4, "test": 4}, min_token_freq=1)


@pytest.fixture(scope="session")
def tiny_radius2(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_radius2")
    config = SynthConfig(layout="radius2", **{**TINY_SYNTH, "height": 24, "wall_rows": 1})
    return synth_generate(config, root, split_sizes={"train": 16, "val": 4, "test": 4}, min_token_freq=1)
