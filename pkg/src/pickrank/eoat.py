"""Suction tool model, cup placement, the pick lookup table and pick generation."""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateInput,
    EmptySegment,
    InvalidNormal,
    NoConvergence,
    NoFeasibleCup,
    SamplingExhausted,
)
from .geometry import (
    CONTAIN_EPS,
    Ellipse,
    Point2,
    Polygon,
    convex_hull,
    fit_hull_ellipse,
    point_in_convex,
    points_in_convex,
    polygon_centroid,
)

N_CUPS = 8
# distances are compared after rounding so symmetric offsets tie exactly
DIST_DECIMALS = 9
LOOKUP_FORMAT_VERSION = 1
MAX_SAMPLE_TRIES = 100


class Material(str, enum.Enum):
    RIGID = "rigid"
    DEFORMABLE = "deformable"


VERTICAL = (0.0, 0.0, 1.0)


@dataclass(frozen=True)
class Approach:
    """Tool axis at contact: aligned with the surface normal, or straight down."""

    kind: str  # "surface_normal" | "vertical"
    direction: tuple[float, float, float] = VERTICAL

    @property
    def tilt(self) -> float:
        return math.acos(max(-1.0, min(1.0, self.direction[2])))


APPROACH_VERTICAL = Approach("vertical", VERTICAL)


def approach_angle(material: Material, surface_normal: Sequence[float]) -> Approach:
    n = tuple(float(c) for c in surface_normal)
    if len(n) != 3 or abs(math.sqrt(sum(c * c for c in n)) - 1.0) > 1e-6:
        raise InvalidNormal(f"surface normal must be unit length, got {surface_normal}")
    if n[2] <= 0:
        raise InvalidNormal("surface normal must point up")
    if Material(material) is Material.RIGID:
        return Approach("surface_normal", n)
    return APPROACH_VERTICAL


@dataclass(frozen=True)
class EoatLayout:
    """Cup centres in the tool frame.  Must be symmetric under a half turn."""

    cup_centers: tuple[Point2, ...]
    cup_radius: float

    def __post_init__(self):
        centers = tuple(Point2(float(c[0]), float(c[1])) for c in self.cup_centers)
        object.__setattr__(self, "cup_centers", centers)
        if len(centers) != N_CUPS:
            raise ValueError(f"layout needs exactly {N_CUPS} cups, got {len(centers)}")
        if len(set(centers)) != N_CUPS:
            raise ValueError("cup centres must be distinct")
        if not self.cup_radius > 0:
            raise ValueError("cup_radius must be positive")
        if self.half_turn_permutation is None:
            raise ValueError("layout must be symmetric under a 180 degree rotation")

    @cached_property
    def array(self) -> np.ndarray:
        arr = np.array(self.cup_centers, dtype=float)
        arr.flags.writeable = False
        return arr

    @cached_property
    def half_turn_permutation(self) -> Optional[tuple[int, ...]]:
        """``perm[k]`` is the cup that lands on cup ``k``'s spot after rotating by pi."""
        lookup = {(round(c.x, 9), round(c.y, 9)): i for i, c in enumerate(self.cup_centers)}
        perm = []
        for c in self.cup_centers:
            j = lookup.get((round(-c.x, 9) + 0.0, round(-c.y, 9) + 0.0))
            if j is None:
                return None
            perm.append(j)
        return tuple(perm)

    @cached_property
    def reach(self) -> float:
        """Radius of the tool footprint disc around the tool origin."""
        return float(np.max(np.hypot(*self.array.T))) + self.cup_radius

    @property
    def layout_hash(self) -> str:
        blob = json.dumps([[c.x, c.y] for c in self.cup_centers] + [self.cup_radius])
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def default_layout(pitch: float = 30.0, cup_radius: float = 12.0) -> EoatLayout:
    """2 x 4 grid centred on the tool origin, long axis along tool x."""
    xs = [(i - 1.5) * pitch for i in range(4)]
    ys = [(j - 0.5) * pitch for j in range(2)]
    return EoatLayout(tuple(Point2(x, y) for y in ys for x in xs), cup_radius)


CupMask = tuple[bool, ...]


def mask_from_bits(bits: int) -> CupMask:
    return tuple(bool(bits >> k & 1) for k in range(N_CUPS))


def mask_bits(mask: CupMask) -> int:
    return sum(1 << k for k, on in enumerate(mask) if on)


def permute_mask(mask: CupMask, perm: Sequence[int]) -> CupMask:
    out = [False] * N_CUPS
    for k, on in enumerate(mask):
        if on:
            out[perm[k]] = True
    return tuple(out)


@lru_cache(maxsize=16)
def mask_centroids(layout: EoatLayout) -> np.ndarray:
    """Convex-hull centroid (tool frame) of the active cups for every bitmask.

    Collinear cup sets use the midpoint of their extreme cups; row 0 is NaN.
    """
    C = layout.array
    out = np.full((1 << N_CUPS, 2), np.nan)
    for bits in range(1, 1 << N_CUPS):
        pts = C[[k for k in range(N_CUPS) if bits >> k & 1]]
        if len(pts) == 1:
            out[bits] = pts[0]
            continue
        try:
            out[bits] = polygon_centroid(convex_hull(pts))
        except DegenerateInput:
            order = np.lexsort((pts[:, 1], pts[:, 0]))
            out[bits] = 0.5 * (pts[order[0]] + pts[order[-1]])
    out.flags.writeable = False
    return out


class Placement(NamedTuple):
    offset: Point2  # tool origin relative to the ellipse centre, tool frame
    cups: CupMask
    n_active: int
    centroid_dist: float


def _rot(points: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.stack([c * points[..., 0] - s * points[..., 1], s * points[..., 0] + c * points[..., 1]], axis=-1)


def offset_grid(e: Ellipse, rotation: float, step: float) -> np.ndarray:
    """Tool-frame offsets on a ``step`` lattice covering the ellipse bounding box.

    Rows are in lexicographic (x, then y) order.
    """
    c, s = math.cos(rotation), math.sin(rotation)
    hx = math.sqrt((e.a * c) ** 2 + (e.b * s) ** 2)
    hy = math.sqrt((e.a * s) ** 2 + (e.b * c) ** 2)
    ix = int(math.floor(hx / step + 1e-9))
    iy = int(math.floor(hy / step + 1e-9))
    gx, gy = np.meshgrid(np.arange(-ix, ix + 1) * step, np.arange(-iy, iy + 1) * step, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def optimal_cup_placement(
    e: Ellipse, layout: EoatLayout, rotation: float, step: float = 2.0
) -> Placement:
    """Best tool offset for the ellipse with the tool turned ``rotation`` from its major axis.

    Maximises the number of cups whose centres lie in the ellipse shrunk by the
    cup radius, then minimises the distance from the active-cup hull centroid
    to the ellipse centre, then takes the lexicographically smallest offset.
    """
    r = layout.cup_radius
    if e.b <= r:
        raise NoFeasibleCup(f"minor semi-axis {e.b} does not exceed cup radius {r}")
    sa, sb = e.a - r, e.b - r
    C = layout.array
    centroids = mask_centroids(layout)
    weights = 1 << np.arange(N_CUPS)

    all_bits = (1 << N_CUPS) - 1
    if np.hypot(*centroids[all_bits]) < 1e-9:
        # whole tool fits at the centre: unique optimum with zero distance
        local = _rot(C, rotation)
        if np.all((local[:, 0] / sa) ** 2 + (local[:, 1] / sb) ** 2 <= 1.0 + CONTAIN_EPS):
            return Placement(Point2(0.0, 0.0), (True,) * N_CUPS, N_CUPS, 0.0)

    U = offset_grid(e, rotation, step)
    local = _rot(C[None, :, :] + U[:, None, :], rotation)
    inside = (local[..., 0] / sa) ** 2 + (local[..., 1] / sb) ** 2 <= 1.0 + CONTAIN_EPS
    counts = inside.sum(axis=1)
    best = int(counts.max())
    if best == 0:
        raise NoFeasibleCup("no cup centre of the offset lattice lands inside the shrunk ellipse")
    cand = np.flatnonzero(counts == best)
    bits = inside[cand] @ weights
    dist = np.hypot(*(centroids[bits] + U[cand]).T)
    rounded = np.round(dist, DIST_DECIMALS)
    win = int(np.flatnonzero(rounded == rounded.min())[0])
    ux, uy = U[cand[win]]
    return Placement(Point2(float(ux), float(uy)), mask_from_bits(int(bits[win])), best, float(dist[win]))


def quality_score(n_active: int, centroid_dist: float, e: Ellipse, n_cups: int = N_CUPS) -> float:
    """Cup-count fraction times a centring factor that falls to zero at sqrt(ab)."""
    if n_active <= 0:
        return 0.0
    return (n_active / n_cups) * max(0.0, 1.0 - centroid_dist / math.sqrt(e.a * e.b))


@dataclass(frozen=True)
class PlannerConfig:
    n_picks: int = 8
    n_rotations: int = 8
    lookup_bin: float = 5.0
    lookup_max: float = 200.0
    offset_step: float = 2.0
    workspace: tuple[float, float, float, float] = (0.0, 0.0, 600.0, 600.0)
    clearance: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.n_picks < 1 or self.n_rotations < 1:
            raise ValueError("n_picks and n_rotations must be positive")
        if self.n_picks > self.n_rotations:
            # one lookup entry per rotation
            raise ValueError("n_picks cannot exceed n_rotations x entries per rotation (1)")
        if not (self.lookup_bin > 0 and self.lookup_max >= self.lookup_bin and self.offset_step > 0):
            raise ValueError("invalid lookup discretisation")
        x0, y0, x1, y1 = self.workspace
        if not (x1 > x0 and y1 > y0):
            raise ValueError("workspace must be a non-empty rectangle")

    def rotation(self, index: int) -> float:
        return index * math.pi / self.n_rotations


@dataclass
class LookupTable:
    """Precomputed placements keyed by ``(a_bin, b_bin, rotation_index)``."""

    layout_hash: str
    bin_size: float
    n_rotations: int
    n_bins: int
    offset_step: float
    entries: dict[tuple[int, int, int], Optional[Placement]] = field(default_factory=dict)

    def bins_for(self, a: float, b: float) -> tuple[int, int]:
        ai = min(int(math.floor(a / self.bin_size + 1e-9)), self.n_bins)
        bi = min(int(math.floor(b / self.bin_size + 1e-9)), ai)
        return ai, bi

    def representative(self, ai: int, bi: int) -> Optional[Ellipse]:
        if bi <= 0:
            return None
        return Ellipse(Point2(0.0, 0.0), ai * self.bin_size, bi * self.bin_size, 0.0)

    def row(self, a: float, b: float) -> list[Optional[Placement]]:
        ai, bi = self.bins_for(a, b)
        return [self.entries.get((ai, bi, r)) for r in range(self.n_rotations)]

    # -- persistence ------------------------------------------------------
    def header(self) -> dict:
        return {
            "format": "pickrank-lookup",
            "version": LOOKUP_FORMAT_VERSION,
            "layout_hash": self.layout_hash,
            "bin_size": self.bin_size,
            "n_rotations": self.n_rotations,
            "n_bins": self.n_bins,
            "offset_step": self.offset_step,
        }

    def save(self, path: str | Path) -> None:
        lines = [json.dumps(self.header(), sort_keys=True)]
        for key in sorted(self.entries):
            p = self.entries[key]
            ai, bi, ri = key
            if p is None:
                lines.append(f"{ai}\t{bi}\t{ri}\t-")
            else:
                lines.append(
                    f"{ai}\t{bi}\t{ri}\t{p.offset.x!r}\t{p.offset.y!r}\t{mask_bits(p.cups)}\t{p.n_active}\t{p.centroid_dist!r}"
                )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LookupTable":
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("format") != "pickrank-lookup" or header.get("version") != LOOKUP_FORMAT_VERSION:
                raise ValueError(f"{path}: not a v{LOOKUP_FORMAT_VERSION} lookup table")
            table = cls(
                header["layout_hash"], header["bin_size"], header["n_rotations"], header["n_bins"], header["offset_step"]
            )
            for line in fh:
                parts = line.rstrip("\n").split("\t")
                key = (int(parts[0]), int(parts[1]), int(parts[2]))
                if parts[3] == "-":
                    table.entries[key] = None
                else:
                    ux, uy, bits, n, dist = parts[3:]
                    table.entries[key] = Placement(Point2(float(ux), float(uy)), mask_from_bits(int(bits)), int(n), float(dist))
        return table


_TABLES: dict[tuple, LookupTable] = {}


def _table_key(layout: EoatLayout, cfg: PlannerConfig) -> tuple:
    n_bins = int(round(cfg.lookup_max / cfg.lookup_bin))
    return (layout, cfg.lookup_bin, cfg.n_rotations, n_bins, cfg.offset_step)


def register_lookup_table(layout: EoatLayout, cfg: PlannerConfig, table: LookupTable) -> None:
    """Seed the per-process memo, e.g. in a worker that received a prebuilt table."""
    if (table.layout_hash, table.n_rotations, table.n_bins) != (layout.layout_hash, cfg.n_rotations, _table_key(layout, cfg)[3]):
        raise ValueError("table does not match the layout and planner discretisation")
    _TABLES.setdefault(_table_key(layout, cfg), table)


def build_lookup_table(layout: EoatLayout, cfg: PlannerConfig) -> LookupTable:
    """Placement for every (a, b) bin up to ``cfg.lookup_max`` and every rotation.

    Each bin is represented by its lower-edge ellipse so a stored pick stays
    valid for every ellipse that falls in the bin.  Tables are memoised per
    process.
    """
    key = _table_key(layout, cfg)
    n_bins = key[3]
    if key in _TABLES:
        return _TABLES[key]
    table = LookupTable(layout.layout_hash, cfg.lookup_bin, cfg.n_rotations, n_bins, cfg.offset_step)
    for ai in range(1, n_bins + 1):
        for bi in range(1, ai + 1):
            rep = table.representative(ai, bi)
            for ri in range(cfg.n_rotations):
                try:
                    table.entries[(ai, bi, ri)] = optimal_cup_placement(rep, layout, cfg.rotation(ri), cfg.offset_step)
                except NoFeasibleCup:
                    table.entries[(ai, bi, ri)] = None
    _TABLES[key] = table
    return table


def load_or_build_lookup_table(layout: EoatLayout, cfg: PlannerConfig, cache_dir: str | Path) -> LookupTable:
    """Reuse a cached table file unless the layout or discretisation changed."""
    n_bins = int(round(cfg.lookup_max / cfg.lookup_bin))
    path = Path(cache_dir) / f"lookup-{layout.layout_hash}-{cfg.lookup_bin:g}-{cfg.n_rotations}-{n_bins}-{cfg.offset_step:g}.tsv"
    if path.exists():
        table = LookupTable.load(path)
        if (table.layout_hash, table.n_rotations, table.n_bins) == (layout.layout_hash, cfg.n_rotations, n_bins):
            _TABLES.setdefault(_table_key(layout, cfg), table)
            return table
    table = build_lookup_table(layout, cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.save(path)
    return table


@dataclass(frozen=True)
class PickCandidate:
    segment_id: int
    position: Point2
    tool_rotation: float
    cups: CupMask
    approach: Approach
    quality: float
    n_active: int
    centroid_dist: float
    rotation_index: int
    index: int
    source: str = "lookup"  # "lookup" | "random"
    predicted_success: Optional[float] = None

    def cup_positions(self, layout: EoatLayout) -> np.ndarray:
        """Workspace centres of the active cups."""
        C = layout.array[list(self.cups)]
        return np.asarray(self.position) + _rot(C, self.tool_rotation)

    def active_centroid(self, layout: EoatLayout) -> Point2:
        bits = mask_bits(self.cups)
        local = mask_centroids(layout)[bits]
        x, y = np.asarray(self.position) + _rot(local, self.tool_rotation)
        return Point2(float(x), float(y))


def _canonical_pose(rotation: float, cups: CupMask, layout: EoatLayout) -> tuple[float, CupMask]:
    """Reduce a tool rotation to [0, pi) using the layout's half-turn symmetry."""
    rotation %= 2 * math.pi
    if rotation >= math.pi:
        return rotation - math.pi, permute_mask(cups, layout.half_turn_permutation)
    return rotation, cups


def segment_ellipse(segment) -> Ellipse:
    ellipse = getattr(segment, "ellipse", None)
    if ellipse is None:
        try:
            ellipse = fit_hull_ellipse(segment.hull)
        except (DegenerateInput, NoConvergence) as exc:
            raise EmptySegment(f"segment {segment.id}: ellipse fit failed ({exc})") from exc
    return ellipse


def generate_picks(segment, table: LookupTable, cfg: PlannerConfig, layout: EoatLayout, rng=None) -> list[PickCandidate]:
    """Up to ``cfg.n_picks`` lookup picks for a segment, best quality first.

    ``segment`` needs ``id``, ``hull``, ``material`` and ``normal`` and may carry
    a precomputed ``ellipse``.  Entries whose tool origin falls outside the
    hull are skipped.  ``rng`` is accepted for interface symmetry; lookup picks
    are deterministic.
    """
    e = segment_ellipse(segment)
    ai, bi = table.bins_for(e.a, e.b)
    rep = table.representative(ai, bi)
    approach = approach_angle(segment.material, segment.normal)
    found = []
    for ri, entry in enumerate(table.row(e.a, e.b)):
        if entry is None:
            continue
        world = e.theta + cfg.rotation(ri)
        pos = np.asarray(e.center) + _rot(np.asarray(entry.offset), world)
        if not point_in_convex(segment.hull, pos):
            continue
        rotation, cups = _canonical_pose(world, entry.cups, layout)
        q = quality_score(entry.n_active, entry.centroid_dist, rep)
        found.append((q, ri, Point2(float(pos[0]), float(pos[1])), rotation, cups, entry))
    if not found:
        raise EmptySegment(f"segment {segment.id}: no feasible lookup pick")
    found.sort(key=lambda item: (-item[0], item[1]))
    return [
        PickCandidate(segment.id, pos, rotation, cups, approach, q, entry.n_active, entry.centroid_dist, ri, idx)
        for idx, (q, ri, pos, rotation, cups, entry) in enumerate(found[: cfg.n_picks])
    ]


def random_pick(segment, layout: EoatLayout, rng: np.random.Generator, rotation_index: int, index: int) -> PickCandidate:
    """Uniform position in the hull and uniform rotation; cups must sit fully in the hull."""
    e = segment_ellipse(segment)
    hull: Polygon = segment.hull
    lo = hull.array.min(axis=0)
    hi = hull.array.max(axis=0)
    C = layout.array
    centroids = mask_centroids(layout)
    for _ in range(MAX_SAMPLE_TRIES):
        pos = rng.uniform(lo, hi)
        rotation = float(rng.uniform(0.0, math.pi))
        if not point_in_convex(hull, pos):
            continue
        cups_world = pos + _rot(C, rotation)
        active = points_in_convex(hull, cups_world, margin=layout.cup_radius)
        n = int(active.sum())
        if n == 0:
            continue
        bits = int(active @ (1 << np.arange(N_CUPS)))
        cx, cy = pos + _rot(centroids[bits], rotation)
        dist = math.hypot(cx - e.center.x, cy - e.center.y)
        return PickCandidate(
            segment.id,
            Point2(float(pos[0]), float(pos[1])),
            rotation,
            mask_from_bits(bits),
            approach_angle(segment.material, segment.normal),
            quality_score(n, dist, e),
            n,
            dist,
            rotation_index,
            index,
            source="random",
        )
    raise SamplingExhausted(f"segment {segment.id}: no random pick after {MAX_SAMPLE_TRIES} samples")


def replace_infeasible(
    picks: list[PickCandidate], failed_indices, segment, layout: EoatLayout, rng: np.random.Generator
) -> list[PickCandidate]:
    """Swap each rejected pick for a random one; slots that cannot be refilled are dropped."""
    failed = set(failed_indices)
    out = []
    for i, pick in enumerate(picks):
        if i not in failed:
            out.append(pick)
            continue
        try:
            out.append(random_pick(segment, layout, rng, pick.rotation_index, pick.index))
        except SamplingExhausted:
            continue
    return out
