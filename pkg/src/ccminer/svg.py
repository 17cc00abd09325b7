"""Static SVG plots of a scene with detections highlighted.

Output depends only on the inputs, so the same scene always renders to
the same bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .detectors import Detection
from .environment import EnvironmentMap
from .io import IoError
from .trajectory import Dataset

WIDTH_PX = 1000.0
MARGIN_PX = 20.0
PALETTE = ("#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
HIGHLIGHT = "#d62728"


class _Frame:
    def __init__(self, points: np.ndarray):
        lo = points.min(axis=0)
        hi = points.max(axis=0)
        span = np.maximum(hi - lo, 1.0)
        self.scale = (WIDTH_PX - 2 * MARGIN_PX) / span[0]
        self.x0 = lo[0]
        self.y1 = hi[1]
        self.width = WIDTH_PX
        self.height = span[1] * self.scale + 2 * MARGIN_PX

    def xy(self, pts) -> list[tuple[float, float]]:
        pts = np.atleast_2d(pts)
        return [
            ((x - self.x0) * self.scale + MARGIN_PX, (self.y1 - y) * self.scale + MARGIN_PX)
            for x, y in pts
        ]

    def path(self, pts) -> str:
        return " ".join(f"{x:.2f},{y:.2f}" for x, y in self.xy(pts))


def _extent(dataset: Dataset, env: EnvironmentMap | None) -> np.ndarray:
    chunks = [tr.positions for tr in dataset]
    if env is not None:
        for lane in env.lanes:
            chunks.append(lane.centerline)
        for loop in env.loops:
            chunks.append(loop.gate)
    if not chunks:
        raise IoError("nothing to plot: no trajectories and no map")
    return np.vstack(chunks)


def svg_document(
    dataset: Dataset,
    env: EnvironmentMap | None = None,
    detections: Sequence[Detection] = (),
) -> str:
    frame = _Frame(_extent(dataset, env))
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{frame.width:.0f}" '
        f'height="{frame.height:.0f}" viewBox="0 0 {frame.width:.2f} {frame.height:.2f}">',
        '<rect width="100%" height="100%" fill="#ffffff"/>',
    ]
    if env is not None:
        out.append('<g class="lanes">')
        for lane in env.lanes:
            out.append(
                f'<polyline class="lane" data-id="{escape(lane.id)}" points="{frame.path(lane.centerline)}" '
                f'fill="none" stroke="#dddddd" stroke-width="{lane.width * frame.scale:.2f}" '
                f'stroke-linejoin="round"/>'
            )
            out.append(
                f'<polyline points="{frame.path(lane.centerline)}" fill="none" stroke="#ffffff" '
                f'stroke-width="1" stroke-dasharray="6 6"/>'
            )
        out.append("</g>")
        out.append('<g class="zones">')
        for zone in env.conflict_zones:
            out.append(
                f'<polygon data-id="{escape(zone.id)}" points="{frame.path(zone.polygon)}" '
                f'fill="#ffbb78" fill-opacity="0.4" stroke="none"/>'
            )
        out.append("</g>")
        out.append('<g class="loops">')
        for loop in env.loops:
            (x1, y1), (x2, y2) = frame.xy(loop.gate)
            out.append(
                f'<line data-id="{escape(loop.id)}" x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
                f'stroke="#3366cc" stroke-width="2" stroke-dasharray="4 3"/>'
            )
        out.append("</g>")
    out.append('<g class="trajectories">')
    for i, tr in enumerate(dataset):
        colour = PALETTE[i % len(PALETTE)]
        out.append(
            f'<polyline class="trajectory" data-id="{escape(tr.id)}" points="{frame.path(tr.positions)}" fill="none" '
            f'stroke="{colour}" stroke-width="1.5"/>'
        )
    out.append("</g>")
    out.append('<g class="detections">')
    ids = set(dataset.ids)
    for det in detections:
        if det.ego_id not in ids:
            continue
        tr = dataset[det.ego_id]
        mask = (tr.t >= det.t_start - 1e-9) & (tr.t <= det.t_end + 1e-9)
        pts = tr.positions[mask]
        if len(pts) == 0:
            pts = tr.positions[[int(np.argmin(np.abs(tr.t - det.t_start)))]]
        if len(pts) == 1:
            (x, y), = frame.xy(pts)
            out.append(f'<circle class="detection" cx="{x:.2f}" cy="{y:.2f}" r="4" fill="{HIGHLIGHT}"/>')
        else:
            out.append(
                f'<polyline class="detection" points="{frame.path(pts)}" fill="none" '
                f'stroke="{HIGHLIGHT}" stroke-width="4" stroke-opacity="0.8"/>'
            )
        (x, y), = frame.xy(pts[0])
        text = escape(f"{det.kind} {det.ego_id} {det.t_start:.1f}-{det.t_end:.1f}s")
        out.append(f'<text x="{x + 5:.2f}" y="{y - 5:.2f}" font-size="11" fill="{HIGHLIGHT}">{text}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_svg(
    path,
    dataset: Dataset,
    env: EnvironmentMap | None = None,
    detections: Sequence[Detection] = (),
) -> Path:
    """Write the scene plot to ``path``.

    Raises:
        IoError: the file cannot be written or there is nothing to plot.
    """
    doc = svg_document(dataset, env, detections)
    path = Path(path)
    try:
        path.write_text(doc, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None
    return path
