"""Planar primitives, convex hulls and the maximum-area inscribed ellipse.

All lengths are millimetres.  Polygons are counter-clockwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, lru_cache
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from ._mvie import MAX_NEWTON_STEPS, STATUS_ITERATION_CAP, STATUS_OK, solve_mvie
from .errors import DegenerateInput, InvalidShrink, NoConvergence

# relative slack used by every closed (boundary-inclusive) containment test
CONTAIN_EPS = 1e-12


class Point2(NamedTuple):
    x: float
    y: float


def orient2d(a: Sequence[float], b: Sequence[float], c: Sequence[float]) -> float:
    """Twice the signed area of triangle abc; exact sign.

    Uses a floating-point filter and falls back to rational arithmetic when
    the result is too close to zero to trust.
    """
    detleft = (a[0] - c[0]) * (b[1] - c[1])
    detright = (a[1] - c[1]) * (b[0] - c[0])
    det = detleft - detright
    errbound = 3.3306690738754716e-16 * (abs(detleft) + abs(detright))
    if abs(det) > errbound:
        return det
    ax, ay, bx, by, cx, cy = (Fraction(v) for v in (a[0], a[1], b[0], b[1], c[0], c[1]))
    return float((ax - cx) * (by - cy) - (ay - cy) * (bx - cx))


def _signed_area(xy: np.ndarray) -> float:
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_cross(p1, p2, q1, q2) -> bool:
    d1 = orient2d(q1, q2, p1)
    d2 = orient2d(q1, q2, p2)
    d3 = orient2d(p1, p2, q1)
    d4 = orient2d(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and d1 != 0 and d2 != 0 and ((d3 > 0) != (d4 > 0)) and d3 != 0 and d4 != 0:
        return True

    def on_seg(a, b, c, d):
        return d == 0 and min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    return on_seg(q1, q2, p1, d1) or on_seg(q1, q2, p2, d2) or on_seg(p1, p2, q1, d3) or on_seg(p1, p2, q2, d4)


def _is_simple(verts: Sequence[Point2]) -> bool:
    n = len(verts)
    if n == 3:
        return True
    edges = [(verts[i], verts[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(*edges[i], *edges[j]):
                return False
    return True


@dataclass(frozen=True)
class Polygon:
    """Simple counter-clockwise polygon."""

    vertices: tuple[Point2, ...]

    def __post_init__(self):
        verts = tuple(Point2(float(v[0]), float(v[1])) for v in self.vertices)
        object.__setattr__(self, "vertices", verts)
        if len(verts) < 3:
            raise DegenerateInput("polygon needs at least 3 vertices")
        if not all(math.isfinite(c) for v in verts for c in v):
            raise DegenerateInput("non-finite vertex")
        if _signed_area(self.array) <= 0:
            raise DegenerateInput("polygon must be counter-clockwise with positive area")
        if not _is_simple(verts):
            raise DegenerateInput("polygon is self-intersecting")

    @classmethod
    def _trusted(cls, verts: Iterable[Sequence[float]]) -> "Polygon":
        # hull output: already CCW, simple and non-degenerate
        poly = object.__new__(cls)
        object.__setattr__(poly, "vertices", tuple(Point2(float(v[0]), float(v[1])) for v in verts))
        return poly

    @cached_property
    def array(self) -> np.ndarray:
        arr = np.array(self.vertices, dtype=float)
        arr.flags.writeable = False
        return arr

    def __len__(self) -> int:
        return len(self.vertices)

    def is_convex(self) -> bool:
        n = len(self.vertices)
        return all(
            orient2d(self.vertices[i], self.vertices[(i + 1) % n], self.vertices[(i + 2) % n]) >= 0
            for i in range(n)
        )

    @cached_property
    def edge_ends(self) -> np.ndarray:
        return np.roll(self.array, -1, axis=0)

    @cached_property
    def bbox(self) -> tuple[float, float, float, float]:
        v = self.array
        return float(v[:, 0].min()), float(v[:, 1].min()), float(v[:, 0].max()), float(v[:, 1].max())

    @cached_property
    def _halfplanes(self) -> tuple[np.ndarray, np.ndarray, float]:
        v = self.array
        e = self.edge_ends - v
        normals = np.column_stack([e[:, 1], -e[:, 0]])
        normals /= np.linalg.norm(normals, axis=1)[:, None]
        b = np.einsum("ij,ij->i", normals, v)
        return normals, b, 1.0 + float(np.max(np.abs(b)))

    def halfplanes(self) -> tuple[np.ndarray, np.ndarray]:
        """Outward unit normals ``A`` and offsets ``b`` with ``A @ x <= b`` inside.

        Only meaningful for convex polygons.
        """
        A, b, _ = self._halfplanes
        return A, b


def polygon_area(p: Polygon) -> float:
    return _signed_area(p.array)


def polygon_centroid(p: Polygon) -> Point2:
    v = p.array
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a6 = 3.0 * float(cross.sum())
    return Point2(float(((x + xn) * cross).sum()) / a6, float(((y + yn) * cross).sum()) / a6)


def _monotone_chain(pts: list, orient) -> list:
    """Andrew's monotone chain over sorted unique points; collinear points dropped."""

    def half(seq):
        chain: list = []
        for p in seq:
            while len(chain) >= 2 and orient(chain[-2], chain[-1], p) <= 0:
                chain.pop()
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(reversed(pts))
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise DegenerateInput("all points are collinear")
    start = min(range(len(hull)), key=lambda i: (hull[i][1], hull[i][0]))
    return hull[start:] + hull[:start]


def _orient_int(a, b, c) -> int:
    return (a[0] - c[0]) * (b[1] - c[1]) - (a[1] - c[1]) * (b[0] - c[0])


def convex_hull(points: Iterable[Sequence[float]]) -> Polygon:
    """Minimal convex hull, CCW, starting at the lowest-y (then lowest-x) vertex.

    Collinear boundary points are dropped.
    """
    pts = sorted({(float(p[0]), float(p[1])) for p in points})
    if len(pts) < 3:
        raise DegenerateInput("convex hull needs at least 3 distinct points")
    return Polygon._trusted(_monotone_chain(pts, orient2d))


def lattice_hull(cells: Iterable[Sequence[int]], origin: Sequence[float], spacing: float) -> Polygon:
    """Convex hull of integer lattice points mapped to ``origin + spacing * cell``.

    Exact integer orientation tests; the vertex order matches :func:`convex_hull`.
    """
    pts = sorted({(int(c[0]), int(c[1])) for c in cells})
    if len(pts) < 3:
        raise DegenerateInput("convex hull needs at least 3 distinct points")
    hull = _monotone_chain(pts, _orient_int)
    return Polygon._trusted([(origin[0] + spacing * i, origin[1] + spacing * j) for i, j in hull])


def point_in_convex(p: Polygon, pt: Sequence[float], margin: float = 0.0) -> bool:
    """Closed test: ``pt`` at distance >= ``margin`` inside every edge of convex ``p``."""
    A, b, scale = p._halfplanes
    slack = b - A @ np.asarray(pt, dtype=float) - margin
    return bool(np.all(slack >= -CONTAIN_EPS * scale))


def points_in_convex(p: Polygon, pts: np.ndarray, margin: float = 0.0) -> np.ndarray:
    A, b, scale = p._halfplanes
    slack = b[None, :] - pts @ A.T - margin
    return np.all(slack >= -CONTAIN_EPS * scale, axis=1)


def segment_point_distance(a: np.ndarray, b: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Distance from each of ``pts`` (k,2) to each segment a[i]-b[i]; shape (k, n)."""
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    ap = pts[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("kij,ij->ki", ap, ab) / denom, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.linalg.norm(pts[:, None, :] - closest, axis=2)


def polygon_intersects_disc(p: Polygon, center: Sequence[float], radius: float) -> bool:
    """True if the convex polygon and the closed disc share any point."""
    x0, y0, x1, y1 = p.bbox
    cx, cy = float(center[0]), float(center[1])
    if cx < x0 - radius or cx > x1 + radius or cy < y0 - radius or cy > y1 + radius:
        return False
    c = np.array([cx, cy])
    if point_in_convex(p, c):
        return True
    d = segment_point_distance(p.array, p.edge_ends, c[None, :])
    return bool(d.min() <= radius)


def clip_convex(subject: np.ndarray, clip: Polygon) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex vertex array against convex ``clip``."""
    out = [tuple(v) for v in subject]
    cv = clip.vertices
    n = len(cv)
    for i in range(n):
        a, b = cv[i], cv[(i + 1) % n]
        inp, out = out, []
        if not inp:
            break
        prev = inp[-1]
        prev_in = orient2d(a, b, prev) >= 0
        for cur in inp:
            cur_in = orient2d(a, b, cur) >= 0
            if cur_in != prev_in:
                # intersection of prev-cur with line a-b
                dx, dy = cur[0] - prev[0], cur[1] - prev[1]
                ex, ey = b[0] - a[0], b[1] - a[1]
                den = dx * ey - dy * ex
                t = ((a[0] - prev[0]) * ey - (a[1] - prev[1]) * ex) / den
                out.append((prev[0] + t * dx, prev[1] + t * dy))
            if cur_in:
                out.append(cur)
            prev, prev_in = cur, cur_in
    return np.array(out, dtype=float).reshape(-1, 2)


def intersection_area(p: Polygon, q: Polygon) -> float:
    """Area of the intersection of two convex polygons."""
    pts = clip_convex(p.array, q)
    if len(pts) < 3:
        return 0.0
    return max(0.0, _signed_area(pts))


@dataclass(frozen=True)
class Ellipse:
    center: Point2
    a: float
    b: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", Point2(float(self.center[0]), float(self.center[1])))
        if not (self.b > 0 and self.a >= self.b):
            raise DegenerateInput(f"ellipse needs a >= b > 0, got a={self.a}, b={self.b}")
        object.__setattr__(self, "theta", float(self.theta) % math.pi)

    @property
    def area(self) -> float:
        return math.pi * self.a * self.b

    def boundary_points(self, n: int = 64) -> np.ndarray:
        t = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
        c, s = math.cos(self.theta), math.sin(self.theta)
        x, y = self.a * np.cos(t), self.b * np.sin(t)
        return np.column_stack([self.center.x + c * x - s * y, self.center.y + s * x + c * y])

    def to_local(self, pts: np.ndarray) -> np.ndarray:
        """Express workspace points in the ellipse frame (major axis = +x)."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        d = np.asarray(pts, dtype=float) - np.asarray(self.center)
        return np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1]], axis=-1)


def inside_axis_ellipse(local: np.ndarray, a: float, b: float) -> np.ndarray:
    """Closed inside test for points already in the ellipse frame."""
    u = local[..., 0] / a
    v = local[..., 1] / b
    return u * u + v * v <= 1.0 + CONTAIN_EPS


def ellipse_contains(e: Ellipse, pt: Sequence[float], shrink: float = 0.0) -> bool:
    if shrink < 0 or shrink >= e.b:
        raise InvalidShrink(f"shrink must lie in [0, b={e.b}), got {shrink}")
    local = e.to_local(np.asarray(pt, dtype=float))
    return bool(inside_axis_ellipse(local, e.a - shrink, e.b - shrink))


# -- maximum-area inscribed ellipse ------------------------------------------


def _ellipse_from_shape(B: np.ndarray, d: np.ndarray) -> Ellipse:
    evals, evecs = np.linalg.eigh(B)
    a, b = float(evals[1]), float(evals[0])
    if a - b <= 1e-12 * a:
        theta = 0.0
        b = a = 0.5 * (a + b)
    else:
        major = evecs[:, 1]
        theta = math.atan2(major[1], major[0]) % math.pi
    return Ellipse(Point2(float(d[0]), float(d[1])), a, b, theta)


def max_inscribed_ellipse(p: Polygon, min_area: float = 1.0) -> Ellipse:
    """Maximum-area ellipse inside ``p`` (its convex hull if ``p`` is not convex).

    Maximises ``log det B`` over ellipses ``{B u + d : |u| <= 1}`` subject to
    ``|B a_i| + a_i . d <= b_i`` for every edge, by a barrier method with
    damped Newton centering (see :mod:`pickrank._mvie`).
    """
    hull = p if p.is_convex() else convex_hull(p.vertices)
    if polygon_area(hull) < min_area:
        raise DegenerateInput(f"polygon area below {min_area} mm^2")
    c0 = np.asarray(polygon_centroid(hull))
    scale = float(np.max(np.linalg.norm(hull.array - c0, axis=1)))
    # normalised problem: centroid at origin, circumradius 1
    A, b = Polygon._trusted((hull.array - c0) / scale).halfplanes()
    z, status = solve_mvie(np.ascontiguousarray(A), np.ascontiguousarray(b), MAX_NEWTON_STEPS)
    if status == STATUS_ITERATION_CAP:
        raise NoConvergence(f"inscribed-ellipse solver exceeded {MAX_NEWTON_STEPS} Newton steps")
    if status != STATUS_OK:
        raise NoConvergence("inscribed-ellipse line search failed")
    pz, qz, rz, dx, dy = z
    B = scale * np.array([[pz, qz], [qz, rz]])
    d = c0 + scale * np.array([dx, dy])
    return _ellipse_from_shape(B, d)


@lru_cache(maxsize=65536)
def _cached_fit(vertices: tuple[Point2, ...]) -> Ellipse:
    return max_inscribed_ellipse(Polygon._trusted(vertices))


def fit_hull_ellipse(hull: Polygon) -> Ellipse:
    """Memoised :func:`max_inscribed_ellipse` for convex hulls."""
    return _cached_fit(hull.vertices)
