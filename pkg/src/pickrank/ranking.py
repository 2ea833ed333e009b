"""Segment and in-segment pick ranking, viability checks and the two-step planner."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .eoat import (
    EoatLayout,
    LookupTable,
    PickCandidate,
    PlannerConfig,
    generate_picks,
    replace_infeasible,
)
from .errors import EmptySegment, MissingModel
from .features import feature_row, segment_context
from .geometry import polygon_intersects_disc
from .scene import AdjacencyGraph, Segment


class SegmentStrategy(str, enum.Enum):
    SIZE = "Size"
    Z = "Z"
    TOPO = "Topo"
    TOPOZ = "TopoZ"
    LPR = "LPR"
    TOPOLPR = "TopoLPR"

    @property
    def needs_model(self) -> bool:
        return self in (SegmentStrategy.LPR, SegmentStrategy.TOPOLPR)


class PickStrategy(str, enum.Enum):
    CENTER = "Center"
    RANDOM = "Random"
    LEARNED = "Learned"

    @property
    def needs_model(self) -> bool:
        return self is PickStrategy.LEARNED


# -- occlusion layering -----------------------------------------------------------


def strongly_connected_components(nodes: Sequence[int], edges: Sequence[tuple[int, int]]) -> list[list[int]]:
    """Tarjan's algorithm, iterative; components in discovery order."""
    succ: dict[int, list[int]] = {v: [] for v in nodes}
    for a, b in edges:
        succ[a].append(b)
    index: dict[int, int] = {}
    low: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    comps: list[list[int]] = []
    counter = 0
    for root in nodes:
        if root in index:
            continue
        work = [(root, iter(succ[root]))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(succ[w])))
                    advanced = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                u = work[-1][0]
                low[u] = min(low[u], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                comps.append(sorted(comp))
    return comps


def topo_ranks(g: AdjacencyGraph) -> dict[int, int]:
    """Occlusion layer of every segment: 0 if unoccluded, else 1 + max over occluders.

    Cycles are condensed first; all members of a component share its rank.
    """
    comps = strongly_connected_components(g.nodes, g.edges)
    comp_of = {v: i for i, comp in enumerate(comps) for v in comp}
    preds: dict[int, set[int]] = {i: set() for i in range(len(comps))}
    for a, b in g.edges:
        ca, cb = comp_of[a], comp_of[b]
        if ca != cb:
            preds[cb].add(ca)
    memo: dict[int, int] = {}
    for start in range(len(comps)):
        # iterative longest-path from sources on the condensation
        todo = [start]
        while todo:
            c = todo[-1]
            if c in memo:
                todo.pop()
                continue
            pending = [p for p in preds[c] if p not in memo]
            if pending:
                todo.extend(pending)
                continue
            memo[c] = 1 + max((memo[p] for p in preds[c]), default=-1)
            todo.pop()
    return {v: memo[comp_of[v]] for v in g.nodes}


# -- ranking ---------------------------------------------------------------------------


def lpr_score(picks: Sequence[PickCandidate]) -> float:
    """Segment score: the best predicted success among its picks."""
    return max(p.predicted_success for p in picks)


def rank_segments(
    strategy: SegmentStrategy,
    segments: Sequence[Segment],
    picks_per_segment: Mapping[int, Sequence[PickCandidate]],
    graph: Optional[AdjacencyGraph] = None,
    model=None,
) -> list[int]:
    """Segment ids in picking order; segments without picks always go last."""
    strategy = SegmentStrategy(strategy)
    if strategy.needs_model and model is None:
        raise MissingModel(f"{strategy.value} ranking needs a trained model")
    ranks: dict[int, int] = {}
    if strategy in (SegmentStrategy.TOPO, SegmentStrategy.TOPOZ, SegmentStrategy.TOPOLPR):
        if graph is None:
            raise ValueError(f"{strategy.value} ranking needs the adjacency graph")
        ranks = topo_ranks(graph)

    def key(seg: Segment):
        picks = picks_per_segment.get(seg.id, ())
        empty = 0 if picks else 1
        if strategy is SegmentStrategy.SIZE:
            k = (-seg.visible_area,)
        elif strategy is SegmentStrategy.Z:
            k = (-seg.surface_z,)
        elif strategy is SegmentStrategy.TOPO:
            k = (ranks[seg.id],)
        elif strategy is SegmentStrategy.TOPOZ:
            k = (ranks[seg.id], -seg.surface_z)
        else:
            score = -lpr_score(picks) if picks else 0.0
            k = (score,) if strategy is SegmentStrategy.LPR else (ranks[seg.id], score)
        return (empty, *k, seg.id)

    return [seg.id for seg in sorted(segments, key=key)]


def rank_picks_in_segment(
    strategy: PickStrategy,
    picks: Sequence[PickCandidate],
    model=None,
    rng: Optional[np.random.Generator] = None,
) -> list[PickCandidate]:
    strategy = PickStrategy(strategy)
    if strategy is PickStrategy.RANDOM:
        if rng is None:
            raise ValueError("Random pick ranking needs an rng")
        return [picks[i] for i in rng.permutation(len(picks))]
    if strategy is PickStrategy.LEARNED:
        if model is None:
            raise MissingModel("Learned pick ranking needs a trained model")
        order = sorted(range(len(picks)), key=lambda i: (-picks[i].predicted_success, picks[i].rotation_index, i))
    else:
        order = sorted(range(len(picks)), key=lambda i: (-picks[i].quality, picks[i].rotation_index, i))
    return [picks[i] for i in order]


# -- viability ------------------------------------------------------------------------------


def reachable(pick: PickCandidate, cfg: PlannerConfig) -> bool:
    x0, y0, x1, y1 = cfg.workspace
    return x0 <= pick.position.x <= x1 and y0 <= pick.position.y <= y1


def collision_free(pick: PickCandidate, segments: Sequence[Segment], cfg: PlannerConfig, layout: EoatLayout) -> bool:
    """No clearly taller segment intersects the tool footprint disc."""
    target = next(s for s in segments if s.id == pick.segment_id)
    limit = target.surface_z + cfg.clearance
    return not any(
        other.surface_z > limit and polygon_intersects_disc(other.hull, pick.position, layout.reach)
        for other in segments
        if other.id != target.id
    )


def viability_check(pick: PickCandidate, segments: Sequence[Segment], cfg: PlannerConfig, layout: EoatLayout) -> bool:
    return reachable(pick, cfg) and collision_free(pick, segments, cfg, layout)


# -- planning --------------------------------------------------------------------------------


@dataclass(frozen=True)
class Plan:
    picks: tuple[PickCandidate, ...]
    segment_order: tuple[int, ...]
    tag: str = ""

    def __len__(self) -> int:
        return len(self.picks)

    def __bool__(self) -> bool:
        return bool(self.picks)

    def to_ndjson(self) -> str:
        lines = []
        for p in self.picks:
            rec = {
                "segment_id": p.segment_id,
                "position": [p.position.x, p.position.y],
                "rotation": p.tool_rotation,
                "cups": "".join("1" if c else "0" for c in p.cups),
                "quality": p.quality,
                "predicted_success": p.predicted_success,
                "source": p.source,
                "strategy": self.tag,
            }
            lines.append(json.dumps(rec))
        return "".join(line + "\n" for line in lines)


def score_picks(
    picks_per_segment: Mapping[int, list[PickCandidate]],
    segments: Sequence[Segment],
    graph: AdjacencyGraph,
    model,
    ranks: Optional[Mapping[int, int]] = None,
) -> dict[int, list[PickCandidate]]:
    """Attach ``predicted_success`` to every pick using one batched model call."""
    if ranks is None:
        ranks = topo_ranks(graph)
    rows, owners = [], []
    for seg in segments:
        picks = picks_per_segment.get(seg.id, [])
        if not picks:
            continue
        ctx = segment_context(seg, graph, ranks)
        for i, p in enumerate(picks):
            rows.append(feature_row(p, ctx))
            owners.append((seg.id, i))
    out = {sid: list(picks) for sid, picks in picks_per_segment.items()}
    if not rows:
        return out
    probs = model.predict_proba(np.asarray(rows))
    for (sid, i), prob in zip(owners, probs):
        out[sid][i] = replace(out[sid][i], predicted_success=float(prob))
    return out


def candidate_picks(
    segments: Sequence[Segment],
    table: LookupTable,
    cfg: PlannerConfig,
    layout: EoatLayout,
    rng: np.random.Generator,
) -> dict[int, list[PickCandidate]]:
    """Lookup picks per segment with collision-rejected slots resampled at random."""
    out: dict[int, list[PickCandidate]] = {}
    for seg in segments:
        try:
            picks = generate_picks(seg, table, cfg, layout)
        except EmptySegment:
            out[seg.id] = []
            continue
        failed = [i for i, p in enumerate(picks) if not collision_free(p, segments, cfg, layout)]
        out[seg.id] = replace_infeasible(picks, failed, seg, layout, rng) if failed else picks
    return out


@dataclass(frozen=True)
class PlanningInputs:
    """Everything the ranking step needs about one pile state.

    Candidates are kept whether or not they are viable; ``viable`` flags them
    so segment scores see every pick while only viable ones are returned.
    """

    segments: tuple[Segment, ...]
    graph: AdjacencyGraph
    ranks: Mapping[int, int]
    candidates: Mapping[int, list[PickCandidate]]
    viable: Mapping[int, list[bool]]
    scored: bool = False


def prepare(
    segments: Sequence[Segment],
    graph: AdjacencyGraph,
    table: LookupTable,
    cfg: PlannerConfig,
    layout: EoatLayout,
    rng: np.random.Generator,
) -> PlanningInputs:
    per_seg = candidate_picks(segments, table, cfg, layout, rng)
    viable = {sid: [viability_check(p, segments, cfg, layout) for p in picks] for sid, picks in per_seg.items()}
    return PlanningInputs(tuple(segments), graph, topo_ranks(graph), per_seg, viable)


def with_scores(inputs: PlanningInputs, model) -> PlanningInputs:
    if inputs.scored:
        return inputs
    per_seg = score_picks(inputs.candidates, inputs.segments, inputs.graph, model, inputs.ranks)
    return replace(inputs, candidates=per_seg, scored=True)


def plan_from(
    inputs: PlanningInputs,
    seg_strategy: SegmentStrategy,
    pick_strategy: PickStrategy,
    model=None,
    rng: Optional[np.random.Generator] = None,
) -> Plan:
    seg_strategy = SegmentStrategy(seg_strategy)
    pick_strategy = PickStrategy(pick_strategy)
    tag = f"{seg_strategy.value}-{pick_strategy.value}"
    learned = seg_strategy.needs_model or pick_strategy.needs_model
    if learned and model is None:
        raise MissingModel(f"{tag} needs a trained model")
    if learned:
        inputs = with_scores(inputs, model)
    per_seg = inputs.candidates
    order = rank_segments(seg_strategy, inputs.segments, per_seg, inputs.graph, model)
    ordered: list[PickCandidate] = []
    for sid in order:
        picks = per_seg.get(sid, [])
        if not picks:
            continue
        flags = {id(p): ok for p, ok in zip(picks, inputs.viable[sid])}
        ordered.extend(p for p in rank_picks_in_segment(pick_strategy, picks, model, rng) if flags[id(p)])
    return Plan(tuple(ordered), tuple(order), tag)


def plan(
    segments: Sequence[Segment],
    graph: AdjacencyGraph,
    table: LookupTable,
    cfg: PlannerConfig,
    layout: EoatLayout,
    seg_strategy: SegmentStrategy,
    pick_strategy: PickStrategy,
    model=None,
    rng: Optional[np.random.Generator] = None,
) -> Plan:
    """Rank segments, then picks inside each segment; keep only viable picks."""
    seg_strategy = SegmentStrategy(seg_strategy)
    pick_strategy = PickStrategy(pick_strategy)
    if (seg_strategy.needs_model or pick_strategy.needs_model) and model is None:
        raise MissingModel(f"{seg_strategy.value}-{pick_strategy.value} needs a trained model")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if not segments:
        return Plan((), (), f"{seg_strategy.value}-{pick_strategy.value}")
    return plan_from(prepare(segments, graph, table, cfg, layout, rng), seg_strategy, pick_strategy, model, rng)
