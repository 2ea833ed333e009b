"""Learner-visible pick features.

Only quantities a perception stack could report are used; the simulator's
hidden state (true support, ground-truth weights) never enters.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .eoat import Material, PickCandidate

FEATURE_NAMES = (
    "package_height",
    "pick_x",
    "pick_y",
    "normal_tilt",
    "occluder_in_degree",
    "occluded_out_degree",
    "topo_rank",
    "visible_area",
    "ellipse_a",
    "ellipse_b",
    "n_active",
    "quality",
    "centroid_dist",
    "deformable",
    "support_proxy",
)
N_FEATURES = len(FEATURE_NAMES)


def segment_context(segment, graph, ranks: Mapping[int, int]) -> list[float]:
    """Per-segment feature block shared by all of its picks."""
    e = segment.ellipse
    return [
        segment.surface_z,
        segment.tilt,
        float(graph.in_degree(segment.id)),
        float(graph.out_degree(segment.id)),
        float(ranks.get(segment.id, 0)),
        segment.visible_area,
        e.a if e is not None else 0.0,
        e.b if e is not None else 0.0,
        1.0 if segment.material is Material.DEFORMABLE else 0.0,
        segment.visible_area / segment.footprint_area,
    ]


def feature_row(pick: PickCandidate, ctx: Sequence[float]) -> list[float]:
    height, tilt, indeg, outdeg, rank, area, ea, eb, deformable, support = ctx
    return [
        height,
        pick.position.x,
        pick.position.y,
        tilt,
        indeg,
        outdeg,
        rank,
        area,
        ea,
        eb,
        float(pick.n_active),
        pick.quality,
        pick.centroid_dist,
        deformable,
        support,
    ]


def pick_features(pick: PickCandidate, segment, graph, ranks: Mapping[int, int]) -> np.ndarray:
    return np.array(feature_row(pick, segment_context(segment, graph, ranks)))
