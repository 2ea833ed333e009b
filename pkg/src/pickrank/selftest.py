"""Quick agreement checks between the production routines and :mod:`pickrank.oracles`."""

from __future__ import annotations

import math
import sys
from typing import Callable, TextIO

import numpy as np

from . import oracles
from .eoat import NoFeasibleCup, default_layout, mask_bits, optimal_cup_placement
from .gbdt import GbdtParams, train
from .geometry import Ellipse, Point2, Polygon, convex_hull, max_inscribed_ellipse
from .harness import two_proportion_ztest, wilson_ci
from .ranking import topo_ranks
from .scene import AdjacencyGraph


def check_ellipse(rng: np.random.Generator, n: int = 5) -> str:
    for _ in range(n):
        w, h = rng.uniform(20, 300, size=2)
        e = max_inscribed_ellipse(Polygon([(0, 0), (w, 0), (w, h), (0, h)]))
        if abs(e.a - max(w, h) / 2) > 1e-3 * max(w, h) / 2 or abs(e.b - min(w, h) / 2) > 1e-3 * min(w, h) / 2:
            raise AssertionError(f"rectangle {w:.1f}x{h:.1f}: axes {e.a:.4f}, {e.b:.4f}")
    for _ in range(n):
        hull = convex_hull([Point2(*p) for p in rng.uniform(0, 200, size=(10, 2))])
        e = max_inscribed_ellipse(hull)
        ref, _ = oracles.ellipse_grid_search(hull.array)
        if e.area < 0.99 * ref:
            raise AssertionError(f"area {e.area:.2f} below 0.99 x oracle {ref:.2f}")
        if oracles.ellipse_violation(hull.array, e.center.x, e.center.y, e.a, e.b, e.theta) > 1e-9:
            raise AssertionError("ellipse crosses the polygon boundary")
    return f"{2 * n} polygons"


def check_cups(rng: np.random.Generator, n: int = 8) -> str:
    layout = default_layout()
    for _ in range(n):
        b = rng.uniform(15, 70)
        a = b * rng.uniform(1.0, 2.5)
        rot = rng.uniform(0, math.pi)
        ref = oracles.cup_placement_bruteforce(a, b, rot, layout.array, layout.cup_radius)
        try:
            p = optimal_cup_placement(Ellipse(Point2(0, 0), a, b, 0.0), layout, rot)
            got = (p.n_active, (p.offset.x, p.offset.y), mask_bits(p.cups))
        except NoFeasibleCup:
            got = None
        if got != ref:
            raise AssertionError(f"ellipse ({a:.2f}, {b:.2f}) rot {rot:.3f}: {got} != {ref}")
    return f"{n} ellipses"


def _random_dag(rng, n, p=0.3):
    order = rng.permutation(n)
    return [(int(order[i]), int(order[j])) for i in range(n) for j in range(i + 1, n) if rng.random() < p]


def check_topo(rng: np.random.Generator, n: int = 20) -> str:
    for k in range(n):
        size = int(rng.integers(1, 13))
        edges = _random_dag(rng, size)
        if k % 4 == 3 and size >= 2:
            a, b = rng.choice(size, 2, replace=False)
            edges += [(int(a), int(b)), (int(b), int(a))]
        edges = sorted(set(edges))
        got = topo_ranks(AdjacencyGraph(tuple(range(size)), tuple(edges)))
        ref = oracles.longest_path_ranks(list(range(size)), edges)
        if got != ref:
            raise AssertionError(f"ranks differ on {edges}: {got} != {ref}")
    return f"{n} graphs"


def check_split(rng: np.random.Generator, n: int = 10) -> str:
    for _ in range(n):
        X = rng.normal(size=(int(rng.integers(8, 40)), int(rng.integers(1, 5))))
        y = (rng.random(len(X)) < 0.5).astype(float)
        y[:2] = [0, 1]
        m = train(X, y, GbdtParams(n_trees=1, depth=1, learning_rate=1.0, min_samples_leaf=1),
                  feature_names=tuple(f"f{i}" for i in range(X.shape[1])))
        g = 1.0 / (1.0 + math.exp(-m.base_score)) - y
        f, t, _ = oracles.exhaustive_split(X, g, min_leaf=1)
        tree = m.trees[0]
        if (tree.feature[0], tree.threshold[0]) != (f, t):
            raise AssertionError(f"split ({tree.feature[0]}, {tree.threshold[0]}) != oracle ({f}, {t})")
    return f"{n} datasets"


def check_stats(rng: np.random.Generator, n: int = 20) -> str:
    for _ in range(n):
        n1, n2 = (int(v) for v in rng.integers(5, 5000, size=2))
        s1, s2 = int(rng.integers(1, n1)), int(rng.integers(1, n2))
        z, p = two_proportion_ztest(s1, n1, s2, n2)
        rz, rp = oracles.ztest_oracle(s1, n1, s2, n2)
        if abs(z - rz) > 1e-6 or abs(p - rp) > 1e-6:
            raise AssertionError(f"z test ({s1}/{n1} vs {s2}/{n2}): ({z}, {p}) != ({rz}, {rp})")
        lo, hi = wilson_ci(s1, n1)
        rlo, rhi = oracles.wilson_oracle(s1, n1)
        if abs(lo - rlo) > 1e-6 or abs(hi - rhi) > 1e-6:
            raise AssertionError(f"Wilson ({s1}/{n1}): ({lo}, {hi}) != ({rlo}, {rhi})")
    return f"{n} pairs"


CHECKS: dict[str, Callable[[np.random.Generator], str]] = {
    "ellipse-grid-search": check_ellipse,
    "cup-placement-bruteforce": check_cups,
    "topo-longest-path": check_topo,
    "split-oracle": check_split,
    "statistics-oracle": check_stats,
}


def run(seed: int = 0, out: TextIO = sys.stdout) -> bool:
    ok = True
    for name, fn in CHECKS.items():
        rng = np.random.default_rng([seed, len(name)])
        try:
            detail = fn(rng)
            print(f"PASS {name}: {detail}", file=out)
        except AssertionError as exc:
            ok = False
            print(f"FAIL {name}: {exc}", file=out)
    return ok
