"""Synthetic glyph corpus with known stroke counts.

Glyphs are drawn directly as thick polylines (pixel centers within half the
stroke width of a centerline), independent of the stamping renderer.
"""
from __future__ import annotations

import math

import numpy as np

from .raster import DEFAULT_SIZE, canvas_to_pixel

#: stroke centerlines in canvas coordinates (y up); one list per pen-down stroke
GLYPHS: dict[str, list[list[tuple[float, float]]]] = {
    "bar": [[(0.2, 0.5), (0.8, 0.5)]],
    "vbar": [[(0.5, 0.8), (0.5, 0.2)]],
    "plus": [[(0.2, 0.5), (0.8, 0.5)], [(0.5, 0.8), (0.5, 0.2)]],
    "T": [[(0.2, 0.75), (0.8, 0.75)], [(0.5, 0.75), (0.5, 0.2)]],
    "L": [[(0.3, 0.8), (0.3, 0.25), (0.75, 0.25)]],
    "X": [[(0.25, 0.75), (0.75, 0.25)], [(0.75, 0.75), (0.25, 0.25)]],
    "two": [[(0.3, 0.65), (0.7, 0.65)], [(0.2, 0.35), (0.8, 0.35)]],
    "ring": [[(0.5 + 0.25 * math.cos(a), 0.5 + 0.25 * math.sin(a))
              for a in np.linspace(0.0, 2.0 * math.pi, 73)]],
}

#: the eight-glyph set used for fine-tuning checks
FINETUNE_SET = ("bar", "vbar", "plus", "T", "L", "X", "two", "ring")


def _segment_distance(px: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    t = np.zeros(px.shape[:-1]) if denom == 0 else np.clip(((px - a) @ ab) / denom, 0.0, 1.0)
    proj = a + t[..., None] * ab
    return np.linalg.norm(px - proj, axis=-1)


def draw_polylines(strokes, width_px: float = 14.0, size: int = DEFAULT_SIZE) -> np.ndarray:
    """Binary-valued float image of thick polylines given in canvas coordinates."""
    rows, cols = np.mgrid[0:size, 0:size]
    px = np.stack([cols, rows], axis=-1).astype(float)
    img = np.zeros((size, size))
    half = 0.5 * width_px
    for stroke in strokes:
        pts = canvas_to_pixel(np.asarray(stroke, dtype=float), size)
        for a, b in zip(pts[:-1], pts[1:]):
            img[_segment_distance(px, a, b) <= half] = 1.0
    return img


def synthetic_glyph(name: str, width_px: float = 14.0, size: int = DEFAULT_SIZE):
    """``(image, ground_truth_stroke_count)`` for a named glyph."""
    try:
        strokes = GLYPHS[name]
    except KeyError:
        raise KeyError(f"unknown synthetic glyph {name!r}; choose from {sorted(GLYPHS)}") from None
    return draw_polylines(strokes, width_px, size), len(strokes)
