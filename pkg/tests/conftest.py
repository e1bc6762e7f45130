import numpy as np
import pytest

from hierforecast.hierarchy import make_hierarchy, split_at
from hierforecast.model import HeraConfig


def toy_hierarchy(total_frames=1000):
    # 2 coarse / 4 fine: coarse [0.4, 0.6], children halves and 0.3/0.7
    return make_hierarchy([(0, 0.4), (1, 0.6)],
                          [(0, 0.5, 0), (1, 0.5, 0), (2, 0.3, 1), (3, 0.7, 1)],
                          task_id="toy", total_frames=total_frames)


@pytest.fixture
def toy():
    return toy_hierarchy()


@pytest.fixture
def toy_split(toy):
    return split_at(toy, 0.5)


@pytest.fixture
def small_config():
    return HeraConfig(hidden_size=4, embed_dim=3, mlp_width=4, batch_size=4, epochs=2, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS):
        terminalreporter.write_line(line)
