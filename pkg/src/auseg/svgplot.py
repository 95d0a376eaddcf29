"""Dependency-free static SVG chart of train/validation loss per epoch."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

WIDTH, HEIGHT = 640, 400
MARGIN = 50


def _polyline(xs: Sequence[float], ys: Sequence[float], color: str) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    return f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>'


def loss_curve_svg(epochs: Sequence[int], train_loss: Sequence[float],
                   val_loss: Sequence[float]) -> str:
    """Two-line loss chart; output is deterministic for identical inputs."""
    lo = min(min(train_loss), min(val_loss))
    hi = max(max(train_loss), max(val_loss))
    span = (hi - lo) or 1.0
    e_lo, e_hi = min(epochs), max(epochs)
    e_span = (e_hi - e_lo) or 1

    def px(e):  # epoch -> x
        return MARGIN + (e - e_lo) / e_span * (WIDTH - 2 * MARGIN)

    def py(v):  # loss -> y
        return HEIGHT - MARGIN - (v - lo) / span * (HEIGHT - 2 * MARGIN)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" '
        f'stroke="black"/>',
        f'<text x="{WIDTH // 2}" y="{HEIGHT - 12}" text-anchor="middle" '
        f'font-size="13">epoch</text>',
        f'<text x="14" y="{HEIGHT // 2}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 14 {HEIGHT // 2})">loss</text>',
        f'<text x="{MARGIN}" y="{HEIGHT - MARGIN + 16}" font-size="11">{e_lo}</text>',
        f'<text x="{WIDTH - MARGIN}" y="{HEIGHT - MARGIN + 16}" text-anchor="end" '
        f'font-size="11">{e_hi}</text>',
        f'<text x="{MARGIN - 4}" y="{HEIGHT - MARGIN}" text-anchor="end" '
        f'font-size="11">{lo:.4g}</text>',
        f'<text x="{MARGIN - 4}" y="{MARGIN + 4}" text-anchor="end" '
        f'font-size="11">{hi:.4g}</text>',
        _polyline([px(e) for e in epochs], [py(v) for v in train_loss], "#1f77b4"),
        _polyline([px(e) for e in epochs], [py(v) for v in val_loss], "#ff7f0e"),
        f'<rect x="{WIDTH - MARGIN - 130}" y="{MARGIN}" width="12" height="3" fill="#1f77b4"/>',
        f'<text x="{WIDTH - MARGIN - 112}" y="{MARGIN + 5}" font-size="12">train loss</text>',
        f'<rect x="{WIDTH - MARGIN - 130}" y="{MARGIN + 18}" width="12" height="3" fill="#ff7f0e"/>',
        f'<text x="{WIDTH - MARGIN - 112}" y="{MARGIN + 23}" font-size="12">val loss</text>',
        "</svg>",
    ]
    return "\n".join(parts) + "\n"


def write_loss_svg(path, epochs, train_loss, val_loss) -> None:
    Path(path).write_text(loss_curve_svg(epochs, train_loss, val_loss))
