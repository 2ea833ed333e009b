import json

import pytest

from pickrank.config import ConfigError, RunConfig, load_config
from pickrank.constants import DESK_TREE_COUNTS, ENSEMBLE_SEEDS


def test_packaged_default():
    cfg = load_config()
    assert cfg.gbdt.tree_counts == DESK_TREE_COUNTS and cfg.gbdt.seeds == ENSEMBLE_SEEDS
    assert (cfg.gbdt.params.depth, cfg.gbdt.params.learning_rate) == (6, 0.05)
    assert cfg.arms[0] == "TopoZ-Center" and len(cfg.arms) == 6
    assert cfg.collect_arm == "TopoZ-Random" and cfg.inducts_per_arm == cfg.collect_inducts == 2000


def test_default_file_is_canonical():
    cfg = load_config()
    assert RunConfig(seed=cfg.seed).to_dict() == cfg.to_dict()


def test_round_trip(tmp_path):
    cfg = RunConfig(seed=5, arms=("Z-Center", "LPR-Random"), inducts_per_arm=7)
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert load_config(path) == cfg


@pytest.mark.parametrize(
    "patch,message",
    [
        ({"seed": None}, "seed"),
        ({"version": 2}, "version"),
        ({"bogus": 1}, "unknown"),
        ({"scene": {"n_packages": 3, "colour": "red"}}, "unknown"),
        ({"gbdt": {"n_trees": 5}}, "tree_counts"),
        ({"arms": ["Z-Center", "Z-Center"]}, "unique"),
        ({"arms": ["Height-Center"]}, "unknown arm"),
        ({"ground_truth": {"weights": [1, 1, 1, 1, -1, -1, -1]}}, "sign"),
    ],
)
def test_rejections(tmp_path, patch, message):
    d = RunConfig(seed=1).to_dict()
    for k, v in patch.items():
        if v is None:
            d.pop(k)
        else:
            d[k] = v
    path = tmp_path / "c.json"
    path.write_text(json.dumps(d))
    with pytest.raises(ConfigError, match=message):
        load_config(path)


def test_missing_and_malformed(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
