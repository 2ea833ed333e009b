"""Run configuration: a versioned JSON document with every knob of a run."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from .constants import DESK_TREE_COUNTS, ENSEMBLE_SEEDS, SUBSAMPLE
from .eoat import PlannerConfig
from .gbdt import GbdtParams
from .harness import CANONICAL_ARMS, ExperimentArm, SimContext
from .scene import DEFAULT_GT, GroundTruthModel, SceneParams

CONFIG_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def _dataclass_from(cls, data: Optional[dict], what: str):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{what}: unknown keys {sorted(unknown)}")
    for k, v in list(data.items()):
        if isinstance(v, list):
            data[k] = tuple(v)
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from exc


@dataclass(frozen=True)
class EnsembleConfig:
    params: GbdtParams = GbdtParams(subsample=SUBSAMPLE)
    tree_counts: tuple[int, ...] = DESK_TREE_COUNTS
    seeds: tuple[int, ...] = ENSEMBLE_SEEDS

    def __post_init__(self):
        if len(self.tree_counts) != len(self.seeds) or not self.tree_counts:
            raise ConfigError("gbdt: tree_counts and seeds must be non-empty and of equal length")


@dataclass(frozen=True)
class RunConfig:
    seed: int
    scene: SceneParams = SceneParams()
    planner: PlannerConfig = PlannerConfig()
    ground_truth: GroundTruthModel = DEFAULT_GT
    gbdt: EnsembleConfig = EnsembleConfig()
    arms: tuple[str, ...] = tuple(a.name for a in CANONICAL_ARMS)
    inducts_per_arm: int = 2000
    collect_inducts: int = 2000
    collect_arm: str = "TopoZ-Random"
    output_dir: str = "out"

    def __post_init__(self):
        if len(set(self.arms)) != len(self.arms) or not self.arms:
            raise ConfigError("arms must be a non-empty list of unique names")
        try:
            for name in (*self.arms, self.collect_arm):
                ExperimentArm.parse(name)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.inducts_per_arm < 1 or self.collect_inducts < 1:
            raise ConfigError("induct counts must be positive")

    @property
    def experiment_arms(self) -> list[ExperimentArm]:
        return [ExperimentArm.parse(n) for n in self.arms]

    @property
    def context(self) -> SimContext:
        return SimContext(cfg=self.planner, gt=self.ground_truth, scene_params=self.scene)

    def to_dict(self) -> dict[str, Any]:
        gt = self.ground_truth
        return {
            "version": CONFIG_SCHEMA_VERSION,
            "seed": self.seed,
            "scene": asdict(self.scene),
            "planner": asdict(self.planner),
            "ground_truth": {"weights": list(gt.weights), "bias": gt.bias, "height_scale": gt.height_scale,
                             "offset_cap": gt.offset_cap},
            "gbdt": {**{k: v for k, v in asdict(self.gbdt.params).items() if k not in ("n_trees", "seed")},
                     "tree_counts": list(self.gbdt.tree_counts),
                     "seeds": list(self.gbdt.seeds)},
            "arms": list(self.arms),
            "inducts_per_arm": self.inducts_per_arm,
            "collect": {"n_inducts": self.collect_inducts, "arm": self.collect_arm},
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        d = dict(d)
        version = d.pop("version", None)
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"unsupported config version {version!r} (expected {CONFIG_SCHEMA_VERSION})")
        if "seed" not in d:
            raise ConfigError("config needs an explicit integer seed")
        if not isinstance(d["seed"], int) or isinstance(d["seed"], bool):
            raise ConfigError("seed must be an integer")
        known = {"seed", "scene", "planner", "ground_truth", "gbdt", "arms", "inducts_per_arm", "collect", "output_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
        gb = dict(d.get("gbdt") or {})
        counts = tuple(gb.pop("tree_counts", DESK_TREE_COUNTS))
        seeds = tuple(gb.pop("seeds", ENSEMBLE_SEEDS))
        gb.setdefault("subsample", SUBSAMPLE)
        if "n_trees" in gb or "seed" in gb:
            raise ConfigError("gbdt: per-member tree counts and seeds go in tree_counts / seeds")
        gt = dict(d.get("ground_truth") or {})
        gt_default = {"weights": DEFAULT_GT.weights, "bias": DEFAULT_GT.bias, "height_scale": DEFAULT_GT.height_scale}
        collect = dict(d.get("collect") or {})
        extra = set(collect) - {"n_inducts", "arm"}
        if extra:
            raise ConfigError(f"collect: unknown keys {sorted(extra)}")
        return cls(
            seed=d["seed"],
            scene=_dataclass_from(SceneParams, d.get("scene"), "scene"),
            planner=_dataclass_from(PlannerConfig, d.get("planner"), "planner"),
            ground_truth=_dataclass_from(GroundTruthModel, {**gt_default, **gt}, "ground_truth"),
            gbdt=EnsembleConfig(_dataclass_from(GbdtParams, gb, "gbdt"), counts, seeds),
            arms=tuple(d.get("arms", [a.name for a in CANONICAL_ARMS])),
            inducts_per_arm=int(d.get("inducts_per_arm", 2000)),
            collect_inducts=int(collect.get("n_inducts", 2000)),
            collect_arm=collect.get("arm", "TopoZ-Random"),
            output_dir=str(d.get("output_dir", "out")),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def load_config(path: Optional[str | Path] = None) -> RunConfig:
    """Read a config file, or the packaged default when ``path`` is None."""
    if path is None:
        text = resources.files("pickrank").joinpath("default_config.json").read_text(encoding="utf-8")
        where = "default config"
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        text = p.read_text(encoding="utf-8")
        where = str(p)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{where}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: top level must be an object")
    return RunConfig.from_dict(data)
