"""Slow, independent reference implementations used by ``selftest`` and the tests.

Each oracle solves the same problem as a production routine by a different
method (grid search, brute-force enumeration, numerical integration) so that
agreement is evidence rather than tautology.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

# -- inscribed ellipse ---------------------------------------------------------------


def _halfplanes(vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    e = np.roll(vertices, -1, axis=0) - vertices
    n = np.column_stack([e[:, 1], -e[:, 0]])
    n /= np.linalg.norm(n, axis=1)[:, None]
    return n, np.einsum("ij,ij->i", n, vertices)


def _best_scale(A, b, cx, cy, theta, rho):
    """Largest s with the ellipse (s, rho*s, theta) at (cx, cy) inside every halfplane."""
    c, s = np.cos(theta), np.sin(theta)
    # support of the unit-major ellipse along each normal
    along = A[:, 0] * c + A[:, 1] * s
    across = -A[:, 0] * s + A[:, 1] * c
    h = np.sqrt(along**2 + (rho * across) ** 2)
    slack = b - (A[:, 0] * cx + A[:, 1] * cy)
    return np.min(slack / h, axis=-1)


def ellipse_grid_search(vertices: Sequence[Sequence[float]], n_grid: int = 24, refine: int = 60) -> tuple[float, tuple]:
    """Approximate maximum-area inscribed ellipse by grid search plus pattern refinement.

    For fixed centre, angle and axis ratio the largest admissible scale is
    closed form, so only four parameters are searched.  Returns
    ``(area, (cx, cy, a, b, theta))``.
    """
    V = np.asarray(vertices, dtype=float)
    A, b = _halfplanes(V)
    lo, hi = V.min(axis=0), V.max(axis=0)

    def area(p):
        cx, cy, th, rho = p
        if not 0.0 < rho <= 1.0:
            return -1.0
        s = _best_scale(A, b, cx, cy, th, rho)
        return math.pi * s * s * rho if s > 0 else -1.0

    xs = np.linspace(lo[0], hi[0], n_grid)
    ys = np.linspace(lo[1], hi[1], n_grid)
    ths = np.linspace(0.0, math.pi, 18, endpoint=False)
    rhos = np.linspace(0.05, 1.0, 20)
    CX, CY, TH, RH = np.meshgrid(xs, ys, ths, rhos, indexing="ij")
    c, s = np.cos(TH)[..., None], np.sin(TH)[..., None]
    along = A[:, 0] * c + A[:, 1] * s
    across = -A[:, 0] * s + A[:, 1] * c
    h = np.sqrt(along**2 + (RH[..., None] * across) ** 2)
    slack = b - (A[:, 0] * CX[..., None] + A[:, 1] * CY[..., None])
    S = np.min(slack / h, axis=-1)
    areas = np.where(S > 0, math.pi * S * S * RH, -1.0)
    k = np.unravel_index(int(np.argmax(areas)), areas.shape)
    best = np.array([CX[k], CY[k], TH[k], RH[k]])
    best_area = area(best)
    step = np.array([(hi[0] - lo[0]) / n_grid, (hi[1] - lo[1]) / n_grid, math.pi / 18, 0.05])
    for _ in range(refine):
        improved = False
        for i in range(4):
            for sign in (1.0, -1.0):
                trial = best.copy()
                trial[i] += sign * step[i]
                v = area(trial)
                if v > best_area:
                    best, best_area, improved = trial, v, True
        if not improved:
            step *= 0.5
    cx, cy, th, rho = best
    sc = _best_scale(A, b, cx, cy, th, rho)
    return best_area, (cx, cy, sc, rho * sc, th % math.pi)


def ellipse_violation(vertices: Sequence[Sequence[float]], cx, cy, a, b, theta) -> float:
    """Largest amount by which the ellipse crosses any edge line (<= 0 when contained)."""
    V = np.asarray(vertices, dtype=float)
    A, off = _halfplanes(V)
    c, s = math.cos(theta), math.sin(theta)
    along = A[:, 0] * c + A[:, 1] * s
    across = -A[:, 0] * s + A[:, 1] * c
    support = A[:, 0] * cx + A[:, 1] * cy + np.sqrt((a * along) ** 2 + (b * across) ** 2)
    return float(np.max(support - off))


# -- cup placement --------------------------------------------------------------------------


def _hull_centroid(pts: np.ndarray) -> np.ndarray:
    """Centroid of the convex hull of a small point set (gift wrapping + shoelace)."""
    uniq = np.unique(np.round(pts, 12), axis=0)
    if len(uniq) == 1:
        return uniq[0]
    start = int(np.lexsort((uniq[:, 1], uniq[:, 0]))[0])
    hull = [start]
    while True:
        p = hull[-1]
        q = (p + 1) % len(uniq)
        for r in range(len(uniq)):
            cross = (uniq[q, 0] - uniq[p, 0]) * (uniq[r, 1] - uniq[p, 1]) - (uniq[q, 1] - uniq[p, 1]) * (uniq[r, 0] - uniq[p, 0])
            if cross < -1e-12 or (
                abs(cross) <= 1e-12 and np.hypot(*(uniq[r] - uniq[p])) > np.hypot(*(uniq[q] - uniq[p]))
            ):
                q = r
        if q == start:
            break
        hull.append(q)
    H = uniq[hull]
    x, y = H[:, 0], H[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    area = 0.5 * cr.sum()
    if abs(area) < 1e-12:
        order = np.lexsort((uniq[:, 1], uniq[:, 0]))
        return 0.5 * (uniq[order[0]] + uniq[order[-1]])
    return np.array([((x + xn) * cr).sum(), ((y + yn) * cr).sum()]) / (6.0 * area)


def cup_placement_bruteforce(a, b, rotation, cups: np.ndarray, cup_radius, step=2.0):
    """Every lattice offset times every cup subset; returns ``(n_active, offset, subset_bits)``.

    A subset is feasible when all of its cup centres lie in the ellipse shrunk
    by the cup radius.  Ranking: more cups, then smaller hull-centroid distance
    (to 1e-9), then the lexicographically smallest offset.
    """
    sa, sb = a - cup_radius, b - cup_radius
    c, s = math.cos(rotation), math.sin(rotation)
    hx = math.sqrt((a * c) ** 2 + (b * s) ** 2)
    hy = math.sqrt((a * s) ** 2 + (b * c) ** 2)
    kx = int(math.floor(hx / step + 1e-9))
    ky = int(math.floor(hy / step + 1e-9))
    n = len(cups)
    subsets = np.array([[(bits >> k) & 1 for k in range(n)] for bits in range(1, 1 << n)], dtype=bool)
    sizes = subsets.sum(axis=1)
    best = None
    centroid_cache: dict[int, np.ndarray] = {}
    for ix in range(-kx, kx + 1):
        for iy in range(-ky, ky + 1):
            off = np.array([ix * step, iy * step])
            P = cups + off
            wx = c * P[:, 0] - s * P[:, 1]
            wy = s * P[:, 0] + c * P[:, 1]
            inside = (wx / sa) ** 2 + (wy / sb) ** 2 <= 1.0 + 1e-12
            feasible = ~np.any(subsets & ~inside[None, :], axis=1)
            if not feasible.any():
                continue
            m = int(sizes[feasible].max())
            if best is not None and m < best[0]:
                continue
            for row in np.flatnonzero(feasible & (sizes == m)):
                bits = row + 1
                if bits not in centroid_cache:
                    centroid_cache[bits] = _hull_centroid(cups[subsets[row]])
                d = round(float(np.hypot(*(centroid_cache[bits] + off))), 9)
                key = (-m, d, off[0], off[1])
                if best is None or key < best[1]:
                    best = (m, key, (float(off[0]), float(off[1])), bits)
    if best is None:
        return None
    return best[0], best[2], best[3]


# -- occlusion layering ------------------------------------------------------------------------


def longest_path_ranks(nodes: Sequence[int], edges: Sequence[tuple[int, int]]) -> dict[int, int]:
    """Layer of each node by explicit enumeration of simple paths on the condensation.

    Strongly connected components come from a transitive closure: two nodes
    share a component iff each reaches the other.
    """
    idx = {v: i for i, v in enumerate(nodes)}
    n = len(nodes)
    R = np.eye(n, dtype=bool)
    for a_, b_ in edges:
        R[idx[a_], idx[b_]] = True
    for k in range(n):
        R |= R[:, [k]] & R[[k], :]
    comp = {}
    for i in range(n):
        comp[i] = min(j for j in range(n) if R[i, j] and R[j, i])
    cedges = {(comp[idx[a_]], comp[idx[b_]]) for a_, b_ in edges if comp[idx[a_]] != comp[idx[b_]]}
    succ: dict[int, list[int]] = {}
    for a_, b_ in cedges:
        succ.setdefault(a_, []).append(b_)
    depth = {c: 0 for c in set(comp.values())}

    def walk(c, d):
        if d > depth[c]:
            depth[c] = d
        for nxt in succ.get(c, ()):
            walk(nxt, d + 1)

    has_pred = {b_ for _, b_ in cedges}
    for c in depth:
        if c not in has_pred:
            walk(c, 0)
    return {v: depth[comp[idx[v]]] for v in nodes}


# -- boosted-tree split ----------------------------------------------------------------------------


def exhaustive_split(X: np.ndarray, g: np.ndarray, min_leaf: int = 1):
    """Best (feature, threshold, gain) over every midpoint of every feature.

    Gain is the drop in the sum of squared deviations of ``g``; ties go to the
    lowest feature, then the lowest threshold.
    """
    def sse(v):
        return float(np.sum((v - v.mean()) ** 2)) if len(v) else 0.0

    total = sse(g)
    best = None
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for lo, hi in zip(vals[:-1], vals[1:]):
            t = (lo + hi) / 2.0
            left = X[:, f] <= t
            if left.sum() < min_leaf or (~left).sum() < min_leaf:
                continue
            gain = total - sse(g[left]) - sse(g[~left])
            if best is None or gain > best[2] + 1e-12:
                best = (f, t, gain)
    return best


# -- statistics -----------------------------------------------------------------------------------------


def _normal_cdf_quad(x: float, n: int = 20000) -> float:
    """Standard normal CDF by composite Simpson integration of the density."""
    if x < 0:
        return 1.0 - _normal_cdf_quad(-x, n)
    h = x / n
    k = np.arange(n + 1)
    w = np.where((k == 0) | (k == n), 1.0, np.where(k % 2 == 1, 4.0, 2.0))
    vals = np.exp(-0.5 * (k * h) ** 2) / math.sqrt(2 * math.pi)
    return 0.5 + float(np.dot(w, vals)) * h / 3.0


def ztest_oracle(s1, n1, s2, n2) -> tuple[float, float]:
    p1, p2 = s1 / n1, s2 / n2
    pool = (s1 + s2) / (n1 + n2)
    var = pool * (1 - pool) * (1 / n1 + 1 / n2)
    z = (p1 - p2) / math.sqrt(var)
    if abs(z) > 8:
        # the tail below 1e-15 is beyond the quadrature's resolution
        tail = math.exp(-0.5 * z * z) / (abs(z) * math.sqrt(2 * math.pi)) * (1 - 1 / z**2 + 3 / z**4)
        return z, 2 * tail
    return z, 2.0 * (1.0 - _normal_cdf_quad(abs(z)))


def _bisect(f, lo, hi, iters=200):
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def wilson_oracle(s, n, confidence=0.95) -> tuple[float, float]:
    """Invert the score test by bisection: the p with |phat - p| = z sqrt(p(1-p)/n)."""
    z = _bisect(lambda x: _normal_cdf_quad(x, 4000) - (0.5 + confidence / 2), 0.0, 10.0, 80)
    phat = s / n

    def score(p):
        return abs(phat - p) - z * math.sqrt(p * (1 - p) / n)

    low = 0.0 if s == 0 else _bisect(score, 0.0, phat)
    high = 1.0 if s == n else _bisect(score, phat, 1.0)
    return low, high

