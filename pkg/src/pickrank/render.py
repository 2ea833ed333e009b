"""Standalone SVG drawings of a pile: footprints, visible hulls, ellipses and picks."""

from __future__ import annotations

import math
from typing import Optional, Sequence
from xml.sax.saxutils import escape

from .eoat import EoatLayout, PickCandidate, default_layout
from .scene import Scene, Segment

_PALETTE = ("#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f")


def _points(verts) -> str:
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in verts)


def render_svg(
    scene: Scene,
    segments: Sequence[Segment] = (),
    picks: Sequence[PickCandidate] = (),
    layout: Optional[EoatLayout] = None,
    scale: float = 1.0,
) -> str:
    """SVG text; y grows upwards in the scene, so the drawing is flipped."""
    layout = layout or default_layout()
    x0, y0, x1, y1 = scene.roi
    w, h = (x1 - x0) * scale, (y1 - y0) * scale
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" '
        f'viewBox="{x0} {y0} {x1 - x0} {y1 - y0}">',
        f'<g transform="translate(0,{y0 + y1}) scale(1,-1)">',
        f'<rect x="{x0}" y="{y0}" width="{x1 - x0}" height="{y1 - y0}" fill="#f4f4f4" stroke="#999"/>',
    ]
    for pkg in sorted(scene.packages, key=lambda p: p.top):
        colour = _PALETTE[pkg.id % len(_PALETTE)]
        out.append(
            f'<polygon points="{_points(pkg.footprint.vertices)}" fill="{colour}" fill-opacity="0.25" '
            f'stroke="{colour}" stroke-dasharray="4 3"><title>package {pkg.id} top {pkg.top:.0f} mm '
            f'{escape(pkg.material.value)}</title></polygon>'
        )
    for seg in segments:
        colour = _PALETTE[seg.package_id % len(_PALETTE)]
        out.append(f'<polygon points="{_points(seg.hull.vertices)}" fill="{colour}" fill-opacity="0.45" stroke="{colour}"/>')
        e = seg.ellipse
        if e is not None:
            out.append(
                f'<ellipse cx="{e.center.x:.2f}" cy="{e.center.y:.2f}" rx="{e.a:.2f}" ry="{e.b:.2f}" '
                f'transform="rotate({math.degrees(e.theta):.3f} {e.center.x:.2f} {e.center.y:.2f})" '
                f'fill="none" stroke="#222" stroke-width="1"/>'
            )
    for rank, pick in enumerate(picks):
        for k, (cx, cy) in enumerate(layout.array):
            c, s = math.cos(pick.tool_rotation), math.sin(pick.tool_rotation)
            px = pick.position.x + c * cx - s * cy
            py = pick.position.y + s * cx + c * cy
            fill = "#111" if pick.cups[k] else "none"
            out.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="{layout.cup_radius:.1f}" fill="{fill}" '
                       f'fill-opacity="0.35" stroke="#111" stroke-width="0.8"/>')
        out.append(f'<circle cx="{pick.position.x:.2f}" cy="{pick.position.y:.2f}" r="3" fill="#d00">'
                   f'<title>pick {rank} on segment {pick.segment_id}, q={pick.quality:.3f}</title></circle>')
    out.append("</g></svg>")
    return "\n".join(out) + "\n"
