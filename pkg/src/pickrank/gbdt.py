"""Gradient-boosted decision trees for binary pick-success prediction.

Logistic loss, histogram-binned greedy splits chosen by variance reduction of
the negative gradients, Newton leaf values with an L2 term.  An ensemble
averages member probabilities.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .constants import (
    DESK_TREE_COUNTS,
    ENSEMBLE_DEPTH,
    ENSEMBLE_LEARNING_RATE,
    ENSEMBLE_SEEDS,
    HISTOGRAM_BINS,
    L2_LEAF,
    MIN_SAMPLES_LEAF,
    SUBSAMPLE,
)
from .errors import DegenerateLabels, EmptyDataset, EmptyEnsemble, FeatureMismatch, NoSplits
from .features import FEATURE_NAMES

MODEL_FORMAT_VERSION = 1
# single-class fits clip the base rate away from 0 and 1
_BASE_RATE_CLIP = 1e-6


@dataclass(frozen=True)
class GbdtParams:
    n_trees: int = 100
    depth: int = ENSEMBLE_DEPTH
    learning_rate: float = ENSEMBLE_LEARNING_RATE
    n_bins: int = HISTOGRAM_BINS
    seed: int = 0
    subsample: float = 1.0
    l2: float = L2_LEAF
    min_samples_leaf: int = MIN_SAMPLES_LEAF

    def __post_init__(self):
        if self.n_trees < 0:
            raise ValueError("n_trees must be non-negative")
        if not 1 <= self.depth <= 16:
            raise ValueError("depth must lie in [1, 16]")
        if not 0 <= self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in [0, 1]")
        if not 2 <= self.n_bins <= 256:
            raise ValueError("n_bins must lie in [2, 256]")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must lie in (0, 1]")
        if self.min_samples_leaf < 1 or self.l2 < 0:
            raise ValueError("invalid regularisation")


@dataclass
class Tree:
    """Node arrays; a leaf has ``feature == -1`` and ``left == right == -1``."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)
    gain: list[float] = field(default_factory=list)

    def add(self, feature=-1, threshold=0.0, value=0.0, gain=0.0) -> int:
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        self.gain.append(gain)
        return len(self.feature) - 1

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))

        return walk(0)

    def leaf_value(self, x: Sequence[float]) -> float:
        i = 0
        while self.feature[i] >= 0:
            i = self.left[i] if x[self.feature[i]] <= self.threshold[i] else self.right[i]
        return self.value[i]

    def to_record(self) -> dict:
        return asdict(self)


def bin_edges(column: np.ndarray, max_bins: int) -> np.ndarray:
    """Split thresholds: midpoints of distinct values, or quantiles when there are too many."""
    u = np.unique(column)
    if len(u) <= max_bins:
        return (u[:-1] + u[1:]) / 2.0
    qs = np.quantile(column, np.linspace(0.0, 1.0, max_bins + 1)[1:-1])
    return np.unique(qs)


def logloss(y: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@njit(cache=True)
def _leaf_sums(X, feat, thr, left, right, val):
    n, T = X.shape[0], feat.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for t in range(T):
            node = 0
            while left[t, node] != node:
                node = left[t, node] if X[i, feat[t, node]] <= thr[t, node] else right[t, node]
            acc += val[t, node]
        out[i] = acc
    return out


@dataclass
class GbdtModel:
    base_score: float
    trees: list[Tree]
    params: GbdtParams
    feature_names: tuple[str, ...] = FEATURE_NAMES
    train_loss: list[float] = field(default_factory=list, repr=False, compare=False)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @cached_property
    def _flat(self):
        # trees padded into (T, max_nodes) arrays; leaves loop onto themselves
        T = len(self.trees)
        width = max((len(t.feature) for t in self.trees), default=1)
        feat = np.zeros((T, width), dtype=np.intp)
        thr = np.full((T, width), np.inf)
        left = np.tile(np.arange(width), (T, 1))
        right = left.copy()
        val = np.zeros((T, width))
        for ti, t in enumerate(self.trees):
            n = len(t.feature)
            f = np.asarray(t.feature)
            internal = f >= 0
            feat[ti, :n] = np.where(internal, f, 0)
            thr[ti, :n] = np.where(internal, t.threshold, np.inf)
            left[ti, :n] = np.where(internal, t.left, np.arange(n))
            right[ti, :n] = np.where(internal, t.right, np.arange(n))
            val[ti, :n] = t.value
        return feat, thr, left, right, val

    def raw_score(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise FeatureMismatch(f"expected {self.n_features} features, got shape {X.shape}")
        n = X.shape[0]
        if not self.trees:
            return np.full(n, self.base_score)
        feat, thr, left, right, val = self._flat
        return self.base_score + self.params.learning_rate * _leaf_sums(np.ascontiguousarray(X), feat, thr, left, right, val)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.raw_score(X))

    def predict(self, x: Sequence[float]) -> float:
        return float(self.predict_proba(np.asarray(x, dtype=float)[None, :])[0])

    # -- persistence --------------------------------------------------------
    def header(self) -> dict:
        return {
            "format": "pickrank-gbdt",
            "version": MODEL_FORMAT_VERSION,
            "features": list(self.feature_names),
            "params": asdict(self.params),
            "base_score": self.base_score,
            "n_trees": len(self.trees),
        }

    def to_text(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [json.dumps(t.to_record(), sort_keys=True) for t in self.trees]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GbdtModel":
        lines = text.splitlines()
        header = json.loads(lines[0])
        if header.get("format") != "pickrank-gbdt" or header.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError("not a pickrank gbdt model")
        trees = [Tree(**json.loads(line)) for line in lines[1:] if line.strip()]
        return cls(header["base_score"], trees, GbdtParams(**header["params"]), tuple(header["features"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "GbdtModel":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def _best_split(Bn, g, n_edges, min_leaf):
    """Best (feature, bin, gain) for one node, or None.

    ``Bn`` holds the node's binned rows.  Ties prefer the lower feature, then
    the lower threshold.
    """
    n, F = Bn.shape
    width = int(n_edges.max()) + 1
    flat = (Bn + (np.arange(F) * width)[None, :]).ravel()
    hg = np.bincount(flat, weights=np.repeat(g, F), minlength=F * width).reshape(F, width)
    hn = np.bincount(flat, minlength=F * width).reshape(F, width)
    gl = np.cumsum(hg, axis=1)[:, :-1]
    nl = np.cumsum(hn, axis=1)[:, :-1]
    G = g.sum()
    gr = G - gl
    nr = n - nl
    valid = (nl >= min_leaf) & (nr >= min_leaf) & (np.arange(width - 1)[None, :] < n_edges[:, None])
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = gl * gl / nl + gr * gr / nr - G * G / n
    gain = np.where(valid, gain, -np.inf)
    k = int(np.argmax(gain))
    f, b = divmod(k, width - 1)
    return f, b, float(gain[f, b])


def _grow(B, g, h, rows, edges, n_edges, params) -> Tree:
    tree = Tree()
    root = tree.add()
    stack = [(root, rows, 0)]
    while stack:
        node, idx, depth = stack.pop()
        gs, hs = g[idx], h[idx]
        tree.value[node] = -float(gs.sum()) / (float(hs.sum()) + params.l2)
        if depth >= params.depth or len(idx) < 2 * params.min_samples_leaf:
            continue
        # pure nodes stay leaves; zero-gain splits are still taken otherwise
        if float(np.sum((gs - gs.mean()) ** 2)) <= 1e-12:
            continue
        found = _best_split(B[idx], gs, n_edges, params.min_samples_leaf)
        if found is None:
            continue
        f, b, gain = found
        if gain < -1e-12:
            continue
        tree.feature[node] = f
        tree.threshold[node] = float(edges[f][b])
        tree.gain[node] = max(gain, 0.0)
        go_left = B[idx, f] <= b
        lnode, rnode = tree.add(), tree.add()
        tree.left[node], tree.right[node] = lnode, rnode
        # right pushed first so the left subtree is numbered first
        stack.append((rnode, idx[~go_left], depth + 1))
        stack.append((lnode, idx[go_left], depth + 1))
    return tree


def _tree_predict_binned(tree: Tree, B: np.ndarray, bin_of_threshold) -> np.ndarray:
    out = np.empty(B.shape[0])
    todo = [(0, np.arange(B.shape[0]))]
    while todo:
        node, idx = todo.pop()
        f = tree.feature[node]
        if f < 0:
            out[idx] = tree.value[node]
            continue
        go_left = B[idx, f] <= bin_of_threshold[node]
        todo.append((tree.left[node], idx[go_left]))
        todo.append((tree.right[node], idx[~go_left]))
    return out


def train(
    X: np.ndarray,
    y: np.ndarray,
    params: GbdtParams = GbdtParams(),
    feature_names: Sequence[str] = FEATURE_NAMES,
    require_both_classes: bool = True,
) -> GbdtModel:
    """Fit a boosted logistic model; deterministic given ``params.seed``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyDataset("training needs a non-empty 2-D feature matrix")
    if X.shape[1] != len(feature_names):
        raise FeatureMismatch(f"expected {len(feature_names)} features, got {X.shape[1]}")
    if len(y) != X.shape[0]:
        raise ValueError("X and y lengths differ")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    rate = float(y.mean())
    if rate in (0.0, 1.0):
        if require_both_classes or X.shape[0] < 1:
            raise DegenerateLabels("training labels contain a single class")
        rate = min(max(rate, _BASE_RATE_CLIP), 1.0 - _BASE_RATE_CLIP)
    elif X.shape[0] < 2:
        raise EmptyDataset("training needs at least 2 samples")
    base = math.log(rate / (1.0 - rate))

    edges = [bin_edges(X[:, f], params.n_bins) for f in range(X.shape[1])]
    n_edges = np.array([len(e) for e in edges])
    B = np.column_stack([np.searchsorted(e, X[:, f], side="left") for f, e in enumerate(edges)]).astype(np.intp)
    rng = np.random.default_rng(params.seed)
    n = X.shape[0]
    n_sub = max(1, int(round(params.subsample * n)))

    F = np.full(n, base)
    trees: list[Tree] = []
    losses = [logloss(y, _sigmoid(F))]
    for _ in range(params.n_trees):
        p = _sigmoid(F)
        g = p - y
        h = p * (1.0 - p)
        rows = np.arange(n) if n_sub == n else np.sort(rng.choice(n, size=n_sub, replace=False))
        tree = _grow(B, g, h, rows, edges, n_edges, params)
        bins = [
            int(np.searchsorted(edges[f], t, side="left")) if f >= 0 else 0
            for f, t in zip(tree.feature, tree.threshold)
        ]
        F = F + params.learning_rate * _tree_predict_binned(tree, B, bins)
        trees.append(tree)
        losses.append(logloss(y, _sigmoid(F)))
    return GbdtModel(base, trees, params, tuple(feature_names), losses)


def feature_importance(model: GbdtModel) -> dict[int, float]:
    """Total split gain per feature, normalised to sum to one."""
    totals = np.zeros(model.n_features)
    used = np.zeros(model.n_features, dtype=bool)
    for t in model.trees:
        for f, gain in zip(t.feature, t.gain):
            if f >= 0:
                totals[f] += gain
                used[f] = True
    if not used.any():
        raise NoSplits("model has no split")
    if totals.sum() <= 0:
        totals = used.astype(float)
    totals /= totals.sum()
    return {f: float(totals[f]) for f in range(model.n_features)}


@dataclass
class GbdtEnsemble:
    members: list[GbdtModel]
    feature_names: tuple[str, ...] = FEATURE_NAMES

    def __post_init__(self):
        if any(m.feature_names != self.feature_names for m in self.members):
            raise FeatureMismatch("ensemble members disagree on the feature descriptor")

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        if not self.members:
            raise EmptyEnsemble("ensemble has no members")
        return np.mean(np.stack([m.predict_proba(X) for m in self.members]), axis=0)

    def predict(self, x: Sequence[float]) -> float:
        return float(self.predict_proba(np.asarray(x, dtype=float)[None, :])[0])

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        names = []
        for i, m in enumerate(self.members):
            name = f"member_{i}.jsonl"
            m.save(d / name)
            names.append(name)
        manifest = {"format": "pickrank-ensemble", "version": MODEL_FORMAT_VERSION,
                    "features": list(self.feature_names), "members": names}
        (d / "ensemble.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path) -> "GbdtEnsemble":
        d = Path(directory)
        manifest = json.loads((d / "ensemble.json").read_text(encoding="utf-8"))
        if manifest.get("format") != "pickrank-ensemble" or manifest.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"{d}: not a pickrank ensemble")
        return cls([GbdtModel.load(d / name) for name in manifest["members"]], tuple(manifest["features"]))


def predict(model: GbdtModel, x: Sequence[float]) -> float:
    return model.predict(x)


def predict_ensemble(e: GbdtEnsemble, x: Sequence[float]) -> float:
    return e.predict(x)


def train_ensemble(
    X: np.ndarray,
    y: np.ndarray,
    base_params: Optional[GbdtParams] = None,
    member_tree_counts: Sequence[int] = DESK_TREE_COUNTS,
    seeds: Sequence[int] = ENSEMBLE_SEEDS,
    feature_names: Sequence[str] = FEATURE_NAMES,
) -> GbdtEnsemble:
    """One member per (tree count, seed); members differ only in those two."""
    if len(member_tree_counts) != len(seeds):
        raise ValueError("tree counts and seeds must have the same length")
    if base_params is None:
        base_params = GbdtParams(subsample=SUBSAMPLE)
    members = [
        train(X, y, replace(base_params, n_trees=int(n), seed=int(s)), feature_names)
        for n, s in zip(member_tree_counts, seeds)
    ]
    return GbdtEnsemble(members, tuple(feature_names))
