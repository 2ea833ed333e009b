"""Induct loops, training-data collection, the paired A/B runner and its statistics."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import NormalDist
from typing import Iterable, Optional, Sequence

import numpy as np

from .eoat import EoatLayout, LookupTable, PlannerConfig, build_lookup_table, default_layout, register_lookup_table
from .errors import InvalidCounts, MissingModel
from .features import FEATURE_NAMES, pick_features
from .ranking import PickStrategy, SegmentStrategy, plan_from, prepare, with_scores
from .scene import DEFAULT_GT, GroundTruthModel, SceneParams, execute_pick, generate_scene, segment_scene

DATASET_FORMAT_VERSION = 1
REPORT_FORMAT_VERSION = 1
ATTEMPT_FACTOR = 3
TABLE_HEADER = ("Method", "Total Picks", "Failed Picks", "Success Rate")

# independent streams inside one induct
_SCENE, _OUTCOME, _PLANNER, _CANDIDATES = 0, 1, 2, 3
_COLLECT_DOMAIN = 0x636F6C6C


# -- statistics --------------------------------------------------------------------------


def success_rate(total: int, failed: int) -> float:
    if total <= 0 or failed < 0 or failed > total:
        raise InvalidCounts(f"need 0 <= failed <= total and total > 0, got total={total}, failed={failed}")
    return (total - failed) / total


def format_rate(rate: float) -> str:
    return f"{100.0 * rate:.2f}%"


def _normal_sf(x: float) -> float:
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def two_proportion_ztest(s1: int, n1: int, s2: int, n2: int) -> tuple[float, float]:
    """Pooled two-proportion z test; returns ``(z, two-sided p)``.

    A pool with no successes or no failures leaves z undefined; both rates are
    then equal and the result is reported as ``(0.0, 1.0)``.
    """
    if n1 <= 0 or n2 <= 0:
        raise InvalidCounts("both samples need at least one trial")
    if not (0 <= s1 <= n1 and 0 <= s2 <= n2):
        raise InvalidCounts("successes must lie in [0, trials]")
    pooled = (s1 + s2) / (n1 + n2)
    if pooled in (0.0, 1.0):
        return 0.0, 1.0
    se = math.sqrt(pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2))
    z = (s1 / n1 - s2 / n2) / se
    return z, 2.0 * _normal_sf(abs(z))


def wilson_ci(s: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    if n <= 0 or not 0 <= s <= n:
        raise InvalidCounts("need n > 0 and 0 <= s <= n")
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    z = NormalDist().inv_cdf(0.5 + confidence / 2.0)
    phat = s / n
    denom = 1.0 + z * z / n
    centre = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    low = 0.0 if s == 0 else max(0.0, centre - half)
    high = 1.0 if s == n else min(1.0, centre + half)
    return low, high


# -- seeds ------------------------------------------------------------------------------------


def derive_seed(*keys: int) -> int:
    """64-bit seed mixed from integer keys; order-sensitive, platform-independent."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def scene_seed(master_seed: int, induct: int) -> int:
    return derive_seed(master_seed, _SCENE, induct)


def induct_rngs(master_seed: int, induct: int) -> tuple[np.random.Generator, np.random.Generator]:
    """(outcome, planner) generators of one induct, shared by every arm."""
    return (
        np.random.default_rng(derive_seed(master_seed, _OUTCOME, induct)),
        np.random.default_rng(derive_seed(master_seed, _PLANNER, induct)),
    )


# -- arms ---------------------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentArm:
    name: str
    seg_strategy: SegmentStrategy
    pick_strategy: PickStrategy

    @property
    def needs_model(self) -> bool:
        return self.seg_strategy.needs_model or self.pick_strategy.needs_model

    @classmethod
    def parse(cls, name: str) -> "ExperimentArm":
        seg, _, pick = name.partition("-")
        try:
            return cls(name, SegmentStrategy(seg), PickStrategy(pick))
        except ValueError:
            raise ValueError(f"unknown arm {name!r}; expected <SegmentStrategy>-<PickStrategy>") from None


CANONICAL_ARMS = tuple(
    ExperimentArm.parse(n)
    for n in ("TopoZ-Center", "Z-Center", "TopoZ-Random", "TopoLPR-Center", "LPR-Center", "LPR-Random")
)
HEURISTIC_ARMS = ("TopoZ-Center", "Z-Center", "TopoZ-Random")
LEARNED_ARMS = ("TopoLPR-Center", "LPR-Center", "LPR-Random")


# -- inducts ------------------------------------------------------------------------------------


@dataclass(frozen=True)
class PickRecord:
    features: tuple[float, ...]
    label: int
    arm: str
    scene_seed: int
    induct: int
    attempt: int

    def to_json(self) -> str:
        return json.dumps(
            {"arm": self.arm, "scene_seed": self.scene_seed, "induct": self.induct, "attempt": self.attempt,
             "label": self.label, "features": list(self.features)}
        )

    @classmethod
    def from_json(cls, line: str) -> "PickRecord":
        r = json.loads(line)
        return cls(tuple(r["features"]), int(r["label"]), r["arm"], int(r["scene_seed"]), int(r["induct"]), int(r["attempt"]))


@dataclass(frozen=True)
class SimContext:
    """Everything an induct needs besides its seeds; cheap to ship to workers."""

    cfg: PlannerConfig = PlannerConfig()
    gt: GroundTruthModel = DEFAULT_GT
    scene_params: SceneParams = SceneParams()
    layout: EoatLayout = field(default_factory=default_layout)

    @property
    def table(self) -> LookupTable:
        return build_lookup_table(self.layout, self.cfg)


def _state_rng(master_seed: int, induct: int, remaining: Sequence[int]) -> np.random.Generator:
    mask = sum(1 << pid for pid in remaining)
    return np.random.default_rng(derive_seed(master_seed, _CANDIDATES, induct, len(remaining), mask))


def run_induct(
    scene_seed: int,
    arm: ExperimentArm,
    model=None,
    ctx: SimContext = SimContext(),
    master_seed: int = 0,
    induct: int = 0,
    scene=None,
    force_probability: Optional[float] = None,
    cache: Optional[dict] = None,
) -> list[PickRecord]:
    """Pick until the pile is empty, no viable pick is left, or the attempt cap hits.

    The plan is rebuilt from a fresh segmentation after every attempt.  Pick
    candidates depend only on the pile state, so arms replaying the same
    induct can share them through ``cache``.
    """
    if arm.needs_model and model is None:
        raise MissingModel(f"arm {arm.name} needs a trained model")
    if scene is None:
        scene = generate_scene(scene_seed, ctx.scene_params)
    if cache is None:
        cache = {}
    outcome_rng, planner_rng = induct_rngs(master_seed, induct)
    table = ctx.table
    cap = ATTEMPT_FACTOR * len(scene.packages)
    records: list[PickRecord] = []
    while scene.packages and len(records) < cap:
        remaining = tuple(pkg.id for pkg in scene.packages)
        key = (scene_seed, remaining)
        inputs = cache.get(key)
        if inputs is None:
            segments, graph = segment_scene(scene)
            inputs = prepare(segments, graph, table, ctx.cfg, ctx.layout, _state_rng(master_seed, induct, remaining))
            cache[key] = inputs
        if arm.needs_model:
            skey = (key, id(model))
            if skey not in cache:
                cache[skey] = with_scores(inputs, model)
            inputs = cache[skey]
        p = plan_from(inputs, arm.seg_strategy, arm.pick_strategy, model, planner_rng) if inputs.segments else None
        if not p:
            break
        pick = p.picks[0]
        seg = next(s for s in inputs.segments if s.id == pick.segment_id)
        row = pick_features(pick, seg, inputs.graph, inputs.ranks)
        out = execute_pick(scene, pick, inputs.segments, inputs.graph, ctx.layout, ctx.gt, outcome_rng, force_probability)
        records.append(PickRecord(tuple(float(v) for v in row), int(out.success), arm.name, scene_seed, induct, len(records)))
        scene = out.scene
    return records


# -- datasets ------------------------------------------------------------------------------------


def dataset_header() -> dict:
    return {"format": "pickrank-dataset", "version": DATASET_FORMAT_VERSION, "features": list(FEATURE_NAMES)}


def collect_training_data(
    n_inducts: int,
    arm: ExperimentArm,
    ctx: SimContext,
    seed: int,
    out_path: str | Path,
    jobs: int = 1,
) -> int:
    """Write one header line and one record per attempt; returns the record count.

    Collection draws its scenes from a domain of ``seed`` disjoint from the
    A/B runs, so a model is never evaluated on piles it was trained on.
    """
    if n_inducts < 1:
        raise ValueError("n_inducts must be >= 1")
    if arm.needs_model:
        raise MissingModel("training data is collected under a model-free arm")
    records = _run_units([arm], n_inducts, None, ctx, derive_seed(seed, _COLLECT_DOMAIN), jobs)[0]
    path = Path(out_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(dataset_header()) + "\n")
        for r in records:
            fh.write(r.to_json() + "\n")
    return len(records)


def load_dataset(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    with Path(path).open(encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != "pickrank-dataset":
            raise ValueError(f"{path}: not a pickrank dataset")
        if tuple(header["features"]) != FEATURE_NAMES:
            from .errors import FeatureMismatch

            raise FeatureMismatch(f"{path}: feature descriptor differs from this build")
        recs = [PickRecord.from_json(line) for line in fh if line.strip()]
    X = np.array([r.features for r in recs], dtype=float).reshape(len(recs), len(FEATURE_NAMES))
    y = np.array([r.label for r in recs], dtype=float)
    return X, y


# -- A/B ---------------------------------------------------------------------------------------------


@dataclass(frozen=True)
class ArmResult:
    name: str
    total_picks: int
    failed_picks: int

    def __post_init__(self):
        if not 0 <= self.failed_picks <= self.total_picks:
            raise InvalidCounts("failed picks cannot exceed total picks")

    @property
    def successes(self) -> int:
        return self.total_picks - self.failed_picks

    @property
    def success_rate(self) -> float:
        return success_rate(self.total_picks, self.failed_picks) if self.total_picks else float("nan")

    @property
    def wilson_ci_95(self) -> tuple[float, float]:
        return wilson_ci(self.successes, self.total_picks) if self.total_picks else (float("nan"), float("nan"))

    @classmethod
    def from_records(cls, name: str, records: Sequence[PickRecord]) -> "ArmResult":
        return cls(name, len(records), sum(1 for r in records if r.label == 0))


@dataclass
class AbReport:
    arms: list[ArmResult]
    pairwise: dict[tuple[str, str], tuple[float, float]]
    config: dict
    master_seed: int

    @classmethod
    def build(cls, results: Sequence[ArmResult], config: dict, master_seed: int) -> "AbReport":
        pairs = {}
        for i, a in enumerate(results):
            for b in results[i + 1:]:
                if a.total_picks and b.total_picks:
                    pairs[(a.name, b.name)] = two_proportion_ztest(a.successes, a.total_picks, b.successes, b.total_picks)
        return cls(list(results), pairs, config, master_seed)

    def arm(self, name: str) -> ArmResult:
        return next(a for a in self.arms if a.name == name)

    def test(self, a: str, b: str) -> tuple[float, float]:
        if (a, b) in self.pairwise:
            return self.pairwise[(a, b)]
        z, p = self.pairwise[(b, a)]
        return -z, p

    def family_mean(self, names: Sequence[str]) -> float:
        rates = [self.arm(n).success_rate for n in names]
        return sum(rates) / len(rates)

    def to_dict(self) -> dict:
        return {
            "format": "pickrank-ab-report",
            "version": REPORT_FORMAT_VERSION,
            "master_seed": self.master_seed,
            "design": "paired: every arm replays the same scene seeds and outcome streams",
            "arms": [
                {"name": a.name, "total_picks": a.total_picks, "failed_picks": a.failed_picks,
                 "success_rate": a.success_rate, "wilson_ci_95": list(a.wilson_ci_95)}
                for a in self.arms
            ],
            "pairwise": [{"a": a, "b": b, "z": z, "p": p} for (a, b), (z, p) in self.pairwise.items()],
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "AbReport":
        arms = [ArmResult(a["name"], a["total_picks"], a["failed_picks"]) for a in d["arms"]]
        pairs = {(t["a"], t["b"]): (t["z"], t["p"]) for t in d["pairwise"]}
        return cls(arms, pairs, d.get("config", {}), d["master_seed"])

    def table(self) -> str:
        return render_table([(a.name, a.total_picks, a.failed_picks) for a in self.arms])

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.json").write_text(self.to_json(), encoding="utf-8")
        (d / "table.txt").write_text(self.table(), encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path) -> "AbReport":
        return cls.from_dict(json.loads((Path(directory) / "report.json").read_text(encoding="utf-8")))


def render_table(rows: Sequence[tuple[str, int, int]]) -> str:
    """Aligned text table with one row per arm, in the given order."""
    body = [(name, f"{t:,}", f"{f:,}", format_rate(success_rate(t, f)) if t else "n/a") for name, t, f in rows]
    widths = [max(len(r[i]) for r in [TABLE_HEADER, *body]) for i in range(4)]

    def fmt(cells):
        return " | ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths))).rstrip()

    lines = [fmt(TABLE_HEADER), "-+-".join("-" * w for w in widths)]
    lines += [fmt(r) for r in body]
    return "\n".join(lines) + "\n"


# worker state; set once per process so the model is not pickled per task
_WORKER: dict = {}


def _init_worker(model, ctx: SimContext, table: Optional[LookupTable] = None) -> None:
    _WORKER["model"] = model
    _WORKER["ctx"] = ctx
    if table is not None:
        register_lookup_table(ctx.layout, ctx.cfg, table)
    ctx.table  # warm the lookup cache


def _work(unit):
    arms, inducts, master_seed = unit
    model, ctx = _WORKER["model"], _WORKER["ctx"]
    out = []
    for i in inducts:
        seed = scene_seed(master_seed, i)
        scene = generate_scene(seed, ctx.scene_params)
        cache: dict = {}
        per_arm = [
            run_induct(seed, arm, model if arm.needs_model else None, ctx, master_seed, i, scene=scene, cache=cache)
            for arm in arms
        ]
        out.append((i, per_arm))
    return out


def _run_units(arms: Sequence[ExperimentArm], n_inducts: int, model, ctx: SimContext, master_seed: int, jobs: int):
    """Records per arm, each list ordered by induct; independent of ``jobs``."""
    arms = tuple(arms)
    size = max(1, min(25, n_inducts // max(1, 4 * jobs))) if jobs > 1 else max(1, n_inducts)
    units = [(arms, list(range(i, min(n_inducts, i + size))), master_seed) for i in range(0, n_inducts, size)]
    if jobs <= 1:
        _init_worker(model, ctx)
        results = [_work(u) for u in units]
    else:
        # ship the parent's table instead of rebuilding it in every worker
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(model, ctx, ctx.table)) as ex:
            results = list(ex.map(_work, units))
    by_arm: list[list[PickRecord]] = [[] for _ in arms]
    for _, per_arm in sorted((item for chunk in results for item in chunk), key=lambda item: item[0]):
        for k, recs in enumerate(per_arm):
            by_arm[k].extend(recs)
    return by_arm


def run_inducts(arm: ExperimentArm, inducts: Iterable[int], model, ctx: SimContext, master_seed: int) -> list[PickRecord]:
    """Serial helper: one arm over the given induct indices."""
    out: list[PickRecord] = []
    for i in inducts:
        out.extend(run_induct(scene_seed(master_seed, i), arm, model, ctx, master_seed, i))
    return out


def run_ab(
    arms: Sequence[ExperimentArm],
    n_inducts: int,
    model,
    ctx: SimContext = SimContext(),
    master_seed: int = 0,
    jobs: int = 1,
    config_echo: Optional[dict] = None,
) -> AbReport:
    """Paired A/B run: every arm replays induct seeds ``0..n_inducts-1``."""
    if not arms:
        raise ValueError("at least one arm is required")
    names = [a.name for a in arms]
    if len(set(names)) != len(names):
        raise ValueError("arm names must be unique")
    if model is None and any(a.needs_model for a in arms):
        raise MissingModel("learned arms need a trained model")
    by_arm = _run_units(arms, n_inducts, model, ctx, master_seed, jobs)
    results = [ArmResult.from_records(a.name, by_arm[i]) for i, a in enumerate(arms)]
    echo = dict(config_echo) if config_echo is not None else {"arms": names, "n_inducts": n_inducts}
    return AbReport.build(results, echo, master_seed)


def default_jobs() -> int:
    return max(1, os.cpu_count() or 1)
