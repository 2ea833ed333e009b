"""Synthetic package piles, oracle segmentation and the hidden pick-success model.

The segmentation is exact by construction: the ROI is rasterised and every
cell is attributed to the package whose flat top is highest there.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .constants import GT_BIAS, GT_HEIGHT_SCALE, GT_WEIGHTS
from .eoat import EoatLayout, Material, PickCandidate
from .errors import DegenerateInput, NoConvergence, PlacementExhausted, UnknownSegment
from .geometry import (
    Ellipse,
    Point2,
    Polygon,
    fit_hull_ellipse,
    lattice_hull,
    intersection_area,
    polygon_area,
)

SCENE_FORMAT_VERSION = 1
STACK_THRESHOLD = 0.25


@dataclass(frozen=True)
class Package:
    id: int
    center: Point2
    width: float
    length: float
    yaw: float
    base_z: float
    height: float
    material: Material
    normal: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not (self.width > 0 and self.length > 0 and self.height > 0):
            raise ValueError("package dimensions must be positive")
        if self.base_z < 0:
            raise ValueError("base_z must be non-negative")
        if self.normal[2] < 0.7:
            raise ValueError("top-surface tilt exceeds the allowed range")

    @property
    def top(self) -> float:
        return self.base_z + self.height

    @property
    def footprint_area(self) -> float:
        return self.width * self.length

    @cached_property
    def footprint(self) -> Polygon:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hw, hl = self.width / 2, self.length / 2
        corners = [(-hw, -hl), (hw, -hl), (hw, hl), (-hw, hl)]
        return Polygon._trusted([(self.center.x + c * x - s * y, self.center.y + s * x + c * y) for x, y in corners])

    def covers(self, pts: np.ndarray) -> np.ndarray:
        """Closed point-in-footprint test for an (..., 2) array."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        dx = pts[..., 0] - self.center.x
        dy = pts[..., 1] - self.center.y
        u = c * dx + s * dy
        v = -s * dx + c * dy
        tol = 1e-9
        return (np.abs(u) <= self.width / 2 + tol) & (np.abs(v) <= self.length / 2 + tol)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "center": list(self.center),
            "width": self.width,
            "length": self.length,
            "yaw": self.yaw,
            "base_z": self.base_z,
            "height": self.height,
            "material": self.material.value,
            "normal": list(self.normal),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Package":
        return cls(
            rec["id"],
            Point2(*rec["center"]),
            rec["width"],
            rec["length"],
            rec["yaw"],
            rec["base_z"],
            rec["height"],
            Material(rec["material"]),
            tuple(rec["normal"]),
        )


@dataclass(frozen=True)
class Scene:
    packages: tuple[Package, ...]
    roi: tuple[float, float, float, float] = (0.0, 0.0, 600.0, 600.0)
    grid_resolution: float = 5.0

    def package(self, pid: int) -> Package:
        for p in self.packages:
            if p.id == pid:
                return p
        raise UnknownSegment(pid)

    def without(self, pid: int) -> "Scene":
        """Remove one package; the rest settle again in placement order."""
        self.package(pid)
        settled: list[Package] = []
        for p in self.packages:
            if p.id == pid:
                continue
            base = stack_elevation(p.footprint, settled)
            settled.append(p if base == p.base_z else replace(p, base_z=base))
        return replace(self, packages=tuple(settled))

    def support_fraction(self, pid: int) -> float:
        """Share of the footprint resting on the floor or on packages topped at base_z."""
        pkg = self.package(pid)
        if pkg.base_z == 0.0:
            return 1.0
        area = sum(
            intersection_area(pkg.footprint, other.footprint)
            for other in self.packages
            if other.id != pid and abs(other.top - pkg.base_z) < 1e-9
        )
        return min(1.0, area / pkg.footprint_area)

    # -- serialisation --------------------------------------------------------
    def to_text(self) -> str:
        header = {"format": "pickrank-scene", "version": SCENE_FORMAT_VERSION, "roi": list(self.roi),
                  "grid_resolution": self.grid_resolution}
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps(p.to_record(), sort_keys=True) for p in self.packages]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Scene":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        header = json.loads(lines[0])
        if header.get("format") != "pickrank-scene" or header.get("version") != SCENE_FORMAT_VERSION:
            raise ValueError("not a pickrank scene file")
        return cls(tuple(Package.from_record(json.loads(ln)) for ln in lines[1:]), tuple(header["roi"]),
                   header["grid_resolution"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Scene":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class SceneParams:
    n_packages: int = 6
    width_range: tuple[float, float] = (80.0, 300.0)
    length_range: tuple[float, float] = (80.0, 350.0)
    height_range: tuple[float, float] = (20.0, 250.0)
    deformable_fraction: float = 0.4
    roi: tuple[float, float, float, float] = (0.0, 0.0, 600.0, 600.0)
    grid_resolution: float = 5.0
    rigid_max_tilt_deg: float = 15.0
    deformable_tilt_sigma_deg: float = 10.0

    def __post_init__(self):
        if self.n_packages < 0:
            raise ValueError("n_packages must be >= 0")
        for lo, hi in (self.width_range, self.length_range, self.height_range):
            if not 0 < lo <= hi:
                raise ValueError("size ranges must be positive and ordered")
        if not 0.0 <= self.deformable_fraction <= 1.0:
            raise ValueError("deformable_fraction must lie in [0, 1]")


def _tilt_normal(angle: float, azimuth: float) -> tuple[float, float, float]:
    s = math.sin(angle)
    return (s * math.cos(azimuth), s * math.sin(azimuth), math.cos(angle))


def stack_elevation(footprint: Polygon, existing: Sequence[Package]) -> float:
    """Floor unless >= 25 % of the footprint overlaps a package top; then the highest such top."""
    area = polygon_area(footprint)
    tops = [p.top for p in existing if intersection_area(footprint, p.footprint) >= STACK_THRESHOLD * area]
    return max(tops, default=0.0)


def generate_scene(seed: int, params: SceneParams = SceneParams()) -> Scene:
    """Drop packages one at a time at uniform poses inside the ROI."""
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = params.roi
    packages: list[Package] = []
    for pid in range(params.n_packages):
        width = float(rng.uniform(*params.width_range))
        length = float(rng.uniform(*params.length_range))
        height = float(rng.uniform(*params.height_range))
        material = Material.DEFORMABLE if rng.random() < params.deformable_fraction else Material.RIGID
        azimuth = float(rng.uniform(0.0, 2 * math.pi))
        if material is Material.RIGID:
            tilt = float(rng.uniform(0.0, math.radians(params.rigid_max_tilt_deg)))
        else:
            tilt = min(abs(float(rng.normal(0.0, math.radians(params.deformable_tilt_sigma_deg)))), math.radians(40.0))
        normal = _tilt_normal(tilt, azimuth)
        for _ in range(100):
            yaw = float(rng.uniform(0.0, math.pi))
            c, s = abs(math.cos(yaw)), abs(math.sin(yaw))
            ex = 0.5 * (width * c + length * s)
            ey = 0.5 * (width * s + length * c)
            if 2 * ex > x1 - x0 or 2 * ey > y1 - y0:
                continue
            center = Point2(float(rng.uniform(x0 + ex, x1 - ex)), float(rng.uniform(y0 + ey, y1 - ey)))
            probe = Package(pid, center, width, length, yaw, 0.0, height, material, normal)
            base = stack_elevation(probe.footprint, packages)
            packages.append(replace(probe, base_z=base))
            break
        else:
            raise PlacementExhausted(f"package {pid} could not be placed in 100 tries")
    return Scene(tuple(packages), params.roi, params.grid_resolution)


@dataclass(frozen=True)
class Segment:
    """Visible top region of one package.  ``id`` equals the package id."""

    id: int
    package_id: int
    hull: Polygon
    surface_z: float
    normal: tuple[float, float, float]
    material: Material
    visible_area: float
    package_height: float
    footprint_area: float

    @cached_property
    def ellipse(self) -> Optional[Ellipse]:
        try:
            return fit_hull_ellipse(self.hull)
        except (DegenerateInput, NoConvergence):
            return None

    @property
    def tilt(self) -> float:
        return math.acos(max(-1.0, min(1.0, self.normal[2])))


@dataclass(frozen=True)
class AdjacencyGraph:
    """Occlusion graph; an edge ``(a, b)`` means segment a occludes segment b."""

    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        nodes = set(self.nodes)
        for a, b in self.edges:
            if a == b:
                raise ValueError("self-edges are not allowed")
            if a not in nodes or b not in nodes:
                raise ValueError(f"edge {(a, b)} references an unknown node")
        object.__setattr__(self, "edges", tuple(sorted(set(self.edges))))

    def in_degree(self, node: int) -> int:
        return sum(1 for _, b in self.edges if b == node)

    def out_degree(self, node: int) -> int:
        return sum(1 for a, _ in self.edges if a == node)

    def predecessors(self, node: int) -> list[int]:
        return [a for a, b in self.edges if b == node]


@dataclass
class Raster:
    """Per-cell attribution produced by :func:`rasterize`."""

    centers: np.ndarray  # (ny, nx, 2)
    covers: np.ndarray  # (K, ny, nx) footprint masks, package order
    visible: np.ndarray  # (ny, nx) package index or -1


def rasterize(s: Scene, dropout: float = 0.0, rng: Optional[np.random.Generator] = None) -> Raster:
    x0, y0, x1, y1 = s.roi
    res = s.grid_resolution
    nx = int(round((x1 - x0) / res))
    ny = int(round((y1 - y0) / res))
    xs = x0 + (np.arange(nx) + 0.5) * res
    ys = y0 + (np.arange(ny) + 0.5) * res
    gx, gy = np.meshgrid(xs, ys)
    centers = np.stack([gx, gy], axis=-1)
    if not s.packages:
        return Raster(centers, np.zeros((0, ny, nx), bool), np.full((ny, nx), -1))
    covers = np.stack([p.covers(centers) for p in s.packages])
    tops = np.array([p.top for p in s.packages])
    elev = np.where(covers, tops[:, None, None], -np.inf)
    # ties go to the most recently dropped package
    k = len(s.packages)
    top_idx = (k - 1) - np.argmax(elev[::-1], axis=0)
    visible = np.where(covers.any(axis=0), top_idx, -1)
    if dropout > 0.0:
        if rng is None:
            raise ValueError("dropout needs an rng")
        visible = np.where(rng.random(visible.shape) < dropout, -1, visible)
    return Raster(centers, covers, visible)


def _cells_hull(ij: np.ndarray, origin: tuple[float, float], res: float) -> Polygon:
    """Hull of visible cell centres given as (col, row) indices."""
    # only row extremes can be hull vertices
    order = np.lexsort((ij[:, 0], ij[:, 1]))
    ij = ij[order]
    _, first = np.unique(ij[:, 1], return_index=True)
    last = np.r_[first[1:] - 1, len(ij) - 1]
    extremes = np.vstack([ij[first], ij[last]])
    try:
        return lattice_hull(extremes.tolist(), origin, res)
    except DegenerateInput:
        # sliver: hull of the cells' corner squares, on the half-cell lattice
        corners = np.vstack([2 * extremes + [dx, dy] for dx in (-1, 1) for dy in (-1, 1)])
        return lattice_hull(corners.tolist(), origin, res / 2)


def segment_scene(
    s: Scene, dropout: float = 0.0, rng: Optional[np.random.Generator] = None
) -> tuple[list[Segment], AdjacencyGraph]:
    """Visible segments (package order) and the occlusion graph.

    Segment hulls span the visible cell centres; slivers whose centres are
    collinear fall back to the cells' corner squares.
    """
    raster = rasterize(s, dropout, rng)
    res = s.grid_resolution
    # centre of cell (col, row) = origin + res * (col, row)
    origin = (s.roi[0] + 0.5 * res, s.roi[1] + 0.5 * res)
    segments: list[Segment] = []
    for k, pkg in enumerate(s.packages):
        cells = raster.visible == k
        count = int(cells.sum())
        if count == 0:
            continue
        rows, cols = np.nonzero(cells)
        hull = _cells_hull(np.column_stack([cols, rows]), origin, res)
        segments.append(
            Segment(pkg.id, pkg.id, hull, pkg.top, pkg.normal, pkg.material, count * res * res, pkg.height,
                    pkg.footprint_area)
        )
    present = {seg.id for seg in segments}
    index = {p.id: k for k, p in enumerate(s.packages)}
    edges = []
    for a in segments:
        for b in segments:
            if a.id == b.id:
                continue
            pa, pb = s.packages[index[a.id]], s.packages[index[b.id]]
            if pa.top > pb.top and np.any(raster.covers[index[a.id]] & raster.covers[index[b.id]]):
                edges.append((a.id, b.id))
    return segments, AdjacencyGraph(tuple(sorted(present)), tuple(edges))


# -- hidden ground truth ---------------------------------------------------------

GT_FEATURES = (
    "cup_fraction",
    "face_fraction",
    "occluder_count",
    "support",
    "height",
    "deformable",
    "centroid_offset",
)


@dataclass(frozen=True)
class GroundTruthModel:
    """Logistic success model over :data:`GT_FEATURES`.

    ``support`` enters as ``support_fraction - 1`` and ``height`` as the top
    elevation over ``height_scale`` so a pick contributes positively only
    through its cups.
    """

    weights: tuple[float, ...]
    bias: float
    height_scale: float = 250.0
    offset_cap: float = 2.0

    def __post_init__(self):
        if len(self.weights) != len(GT_FEATURES):
            raise ValueError(f"expected {len(GT_FEATURES)} weights")
        signs = (1, 1, -1, 1, -1, -1, -1)
        if any(w * sgn < 0 for w, sgn in zip(self.weights, signs)):
            raise ValueError("ground-truth weights violate the fixed sign pattern")

    def probability(self, features: Sequence[float]) -> float:
        return logistic(float(np.dot(self.weights, features)) + self.bias)


DEFAULT_GT = GroundTruthModel(GT_WEIGHTS, GT_BIAS, GT_HEIGHT_SCALE)


def logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    ex = math.exp(x)
    return ex / (1.0 + ex)


def success_features(
    pick: PickCandidate, s: Scene, segments: Sequence[Segment], graph: AdjacencyGraph, layout: EoatLayout,
    gt: GroundTruthModel,
) -> np.ndarray:
    seg = next((sg for sg in segments if sg.id == pick.segment_id), None)
    if seg is None:
        raise UnknownSegment(pick.segment_id)
    pkg = s.package(seg.package_id)
    n = pick.n_active
    cups = pick.cup_positions(layout)
    face = float(pkg.covers(cups).mean()) if n else 0.0
    if n:
        cx, cy = pick.active_centroid(layout)
        offset = math.hypot(cx - pkg.center.x, cy - pkg.center.y) / (0.5 * math.sqrt(pkg.width * pkg.length))
        offset = min(offset, gt.offset_cap)
    else:
        offset = gt.offset_cap
    return np.array(
        [
            n / len(layout.cup_centers),
            face,
            float(graph.in_degree(seg.id)),
            s.support_fraction(pkg.id) - 1.0,
            pkg.top / gt.height_scale,
            1.0 if pkg.material is Material.DEFORMABLE else 0.0,
            offset,
        ]
    )


def success_probability(
    pick: PickCandidate, s: Scene, segments: Sequence[Segment], graph: AdjacencyGraph, layout: EoatLayout,
    gt: GroundTruthModel,
) -> float:
    return gt.probability(success_features(pick, s, segments, graph, layout, gt))


@dataclass(frozen=True)
class PickOutcome:
    success: bool
    probability: float
    features: np.ndarray = field(repr=False)
    scene: Scene = field(repr=False)


def execute_pick(
    s: Scene, pick: PickCandidate, segments: Sequence[Segment], graph: AdjacencyGraph, layout: EoatLayout,
    gt: GroundTruthModel, rng: np.random.Generator, force_probability: Optional[float] = None,
) -> PickOutcome:
    """One Bernoulli draw; a success removes the picked package from the scene."""
    features = success_features(pick, s, segments, graph, layout, gt)
    p = gt.probability(features) if force_probability is None else float(force_probability)
    success = bool(rng.random() < p)
    after = s.without(pick.segment_id) if success else s
    return PickOutcome(success, p, features, after)
