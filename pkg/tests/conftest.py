import numpy as np
import pytest

from pickrank.eoat import Material, default_layout
from pickrank.geometry import Point2
from pickrank.scene import Package


@pytest.fixture(scope="session")
def layout():
    return default_layout()


def box(pid, x, y, w, l, h, base=0.0, yaw=0.0, material=Material.RIGID, normal=(0.0, 0.0, 1.0)):
    return Package(pid, Point2(x, y), w, l, yaw, base, h, material, normal)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_model(tmp_path_factory):
    """Ensemble trained on a short TopoZ-Random collection; cheap stand-in for the desk model."""
    from pickrank.gbdt import GbdtParams, train_ensemble
    from pickrank.harness import ExperimentArm, SimContext, collect_training_data, load_dataset

    path = tmp_path_factory.mktemp("data") / "data.ndjson"
    collect_training_data(60, ExperimentArm.parse("TopoZ-Random"), SimContext(), 5, path)
    X, y = load_dataset(path)
    return train_ensemble(X, y, GbdtParams(subsample=0.8, depth=4), (20, 15), (1, 2))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = [mod.RESULTS[k] for k in sorted(mod.RESULTS)] if mod else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
