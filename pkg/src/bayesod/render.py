"""SVG overlays: boxes colored by entropy band with 95% corner ellipses."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np

from .errors import ValidationError

# chi-square quantile with 2 dof at 0.95 has the closed form -2 ln(0.05)
CHI2_2DOF_95 = -2.0 * math.log(0.05)
BANDS = (
    ("highly reliable", "#2ca02c"),
    ("slightly reliable", "#ff7f0e"),
    ("unreliable", "#d62728"),
)


def corner_ellipse(cov, corner: int, level: float = CHI2_2DOF_95):
    """(rx, ry, angle_deg) of the confidence ellipse of one corner.

    ``corner`` 0 is top-left (rows/cols 0,1 of Σ), 1 is bottom-right (2,3).
    """
    sl = slice(2 * corner, 2 * corner + 2)
    block = np.asarray(cov, dtype=float)[sl, sl]
    vals, vecs = np.linalg.eigh(0.5 * (block + block.T))
    vals = np.clip(vals, 0.0, None)
    # eigh sorts ascending; the major axis is the last eigenvector
    major = vecs[:, 1]
    if major[0] < 0 or (major[0] == 0 and major[1] < 0):
        major = -major
    angle = math.degrees(math.atan2(major[1], major[0]))
    return math.sqrt(level * vals[1]), math.sqrt(level * vals[0]), angle


def band_of(entropy: float, thresholds: Tuple[float, float]) -> int:
    t1, t2 = thresholds
    if entropy <= t1:
        return 0
    if entropy <= t2:
        return 1
    return 2


def _f(v: float) -> str:
    s = f"{v:.4f}".rstrip("0").rstrip(".")
    return "0" if s == "-0" else s


def render_svg(dets, image_size: Tuple[int, int], thresholds: Tuple[float, float]) -> str:
    """One SVG document for the detections of a single image."""
    t1, t2 = thresholds
    if not t1 <= t2:
        raise ValidationError("entropy thresholds must be ordered t1 <= t2")
    W, H = image_size
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="#ffffff"/>',
    ]
    for d in dets:
        m = d.box.mean
        name, color = BANDS[band_of(d.gaussian_entropy, thresholds)]
        lines.append(f'<g class="detection" data-band="{name}" data-entropy="{_f(d.gaussian_entropy)}" '
                     f'data-score="{_f(d.score)}">')
        lines.append(f'<rect x="{_f(m[0])}" y="{_f(m[1])}" width="{_f(m[2] - m[0])}" '
                     f'height="{_f(m[3] - m[1])}" fill="none" stroke="{color}" stroke-width="2"/>')
        for corner in (0, 1):
            rx, ry, ang = corner_ellipse(d.box.cov, corner)
            cx, cy = m[2 * corner], m[2 * corner + 1]
            lines.append(f'<ellipse cx="{_f(cx)}" cy="{_f(cy)}" rx="{_f(rx)}" ry="{_f(ry)}" '
                         f'transform="rotate({_f(ang)} {_f(cx)} {_f(cy)})" fill="none" '
                         f'stroke="{color}" stroke-width="1"/>')
        lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def render_dataset(dets, image_size, thresholds, out_dir) -> list:
    """Write ``image_<id>.svg`` for every image that has detections."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_img = {}
    for d in dets:
        by_img.setdefault(int(d.image_id or 0), []).append(d)
    written = []
    for img in sorted(by_img):
        path = out_dir / f"image_{img}.svg"
        path.write_text(render_svg(by_img[img], image_size, thresholds), encoding="utf-8")
        written.append(path)
    return written
