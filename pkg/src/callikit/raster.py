"""Glyph rasters: image I/O, binarization, footprint stamping, thinning,
distance transform and contour extraction.

Images are plain ``float`` arrays in [0, 1] (1 = ink) indexed ``[row, col]``
with rows growing downward; masks are ``bool`` arrays of the same shape.
Canvas points (y up) map to pixels through :func:`canvas_to_pixel`, the one
place the vertical axis is flipped.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .geometry import StrokePrimitive, discretize_chain

DEFAULT_SIZE = 256
MIN_SIZE = 8


def canvas_to_pixel(points, size: int = DEFAULT_SIZE) -> np.ndarray:
    """Canvas ``(x, y)`` (y up) to fractional pixel ``(col, row)``."""
    p = np.asarray(points, dtype=float)
    scale = size - 1
    out = np.empty_like(p)
    out[..., 0] = p[..., 0] * scale
    out[..., 1] = (1.0 - p[..., 1]) * scale
    return out


def pixel_to_canvas(pixels, size: int = DEFAULT_SIZE) -> np.ndarray:
    """Fractional pixel ``(col, row)`` to canvas ``(x, y)``."""
    p = np.asarray(pixels, dtype=float)
    scale = size - 1
    out = np.empty_like(p)
    out[..., 0] = p[..., 0] / scale
    out[..., 1] = 1.0 - p[..., 1] / scale
    return out


def blank(size: int = DEFAULT_SIZE) -> np.ndarray:
    if size < MIN_SIZE:
        raise ValueError(f"canvas must be at least {MIN_SIZE} px, got {size}")
    return np.zeros((size, size), dtype=float)


def check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim != 2 or min(img.shape) < MIN_SIZE:
        raise ValueError(f"glyph image must be 2-D and at least {MIN_SIZE}x{MIN_SIZE}, got {img.shape}")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ValueError("glyph pixels must lie in [0, 1]")
    return img


# --------------------------------------------------------------------- I/O

def load_image(path, ink_dark: bool = True) -> np.ndarray:
    """Read an 8-bit grayscale PNG or PGM.

    With ``ink_dark`` (the usual black-on-white scan) dark pixels become ink.
    Color images are converted to luminance; 16-bit and float images are
    rejected.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I", "F") or im.mode.startswith("I;"):
            raise ValueError(f"{path}: unsupported bit depth (mode {im.mode}); need 8-bit grayscale")
        if im.mode != "L":
            im = im.convert("L")
        data = np.asarray(im, dtype=np.uint8)
    # invert in integers so a save/load round trip is exact
    val = (255 - data if ink_dark else data).astype(float) / 255.0
    return check_image(val)


def save_image(img: np.ndarray, path, ink_dark: bool = True) -> None:
    """Write an 8-bit grayscale PNG or binary PGM (chosen by suffix)."""
    img = check_image(img)
    val = 1.0 - img if ink_dark else img
    data = np.rint(val * 255.0).astype(np.uint8)
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() in (".pgm", ".pnm") else "PNG"
    Image.fromarray(data, mode="L").save(path, format=fmt)


# ------------------------------------------------------------ binarization

def binarize(img: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie strictly inside (0, 1), got {threshold}")
    return np.asarray(img, dtype=float) >= threshold


def mask_to_image(mask: np.ndarray) -> np.ndarray:
    return np.asarray(mask, dtype=bool).astype(float)


# ---------------------------------------------------------------- stamping

class Stamper:
    """Drags a utensil across a canvas, stamping its footprint.

    Consecutive trajectory points are joined with intermediate stamps no more
    than half the current contact radius apart. Ink composites by ``max`` so
    stamping order never matters for coverage.
    """

    def __init__(self, canvas: np.ndarray, utensil):
        self.canvas = canvas
        self.size = canvas.shape[0]
        self.utensil = utensil
        self.state = None
        self.width = 0.0

    def _stamp(self, state, width):
        fp = state.footprint(width, self.size)
        self.canvas[fp.rows, fp.cols] = np.maximum(self.canvas[fp.rows, fp.cols], 1.0)
        return fp

    def begin(self, point, width: float, heading: float | None = None):
        st = self.utensil.initial_state(point)
        if heading is not None:
            st = st.with_heading(heading)
        self.state = st
        self.width = float(width)
        return self._stamp(st, width)

    def move_to(self, point, width: float):
        """Advance the tool to ``point``; returns the footprint stamped there."""
        start = np.array(self.state.pose, dtype=float)
        end = np.asarray(point, dtype=float)
        motion = end - start
        stepped = self.state.step(motion)
        w_prev, w_next = self.width, float(width)
        scale = self.size - 1
        dist_px = float(np.hypot(*motion)) * scale
        r_px = max(0.5, 0.5 * min(w_prev, w_next) * scale)
        k = max(1, int(math.ceil(dist_px / (0.5 * r_px))))
        fp = None
        for j in range(1, k + 1):
            f = j / k
            pos = end if j == k else start + f * motion
            fp = self._stamp(stepped.moved_to(pos), w_prev + f * (w_next - w_prev))
        self.state = stepped.moved_to(end)
        self.width = w_next
        return fp


def pen_down_groups(strokes: Sequence[StrokePrimitive]) -> list[list[StrokePrimitive]]:
    """Split a segment sequence into runs of connected drawing segments.

    A run ends at a lifted segment or where a segment does not start at the
    previous one's end (an implicit pen-up).
    """
    groups, cur = [], []
    for st in strokes:
        if st.pen == 1:
            if cur and math.dist(cur[-1].o2, st.o0) > 1e-9:
                groups.append(cur)
                cur = []
            cur.append(st)
        elif cur:
            groups.append(cur)
            cur = []
    if cur:
        groups.append(cur)
    return groups


def render_polylines(polylines, utensil, size: int = DEFAULT_SIZE) -> np.ndarray:
    """Stamp pre-sampled trajectories (each a :class:`Polyline`)."""
    canvas = blank(size)
    stamper = Stamper(canvas, utensil)
    for poly in polylines:
        pts, ws = poly.points, poly.widths
        stamper.begin(pts[0], ws[0])
        for p, w in zip(pts[1:], ws[1:]):
            stamper.move_to(p, w)
    return canvas


def render_strokes(strokes: Sequence[StrokePrimitive], utensil, size: int = DEFAULT_SIZE,
                   points_per_stroke: int = 32) -> np.ndarray:
    """Render a segment sequence; pen-up segments leave no ink.

    Each pen-down run is sampled at ``points_per_stroke`` arc-length spaced
    points, the same sampling the writing environment starts from.
    """
    polys = [discretize_chain(g, points_per_stroke) for g in pen_down_groups(strokes)]
    return render_polylines(polys, utensil, size)


# ---------------------------------------------------------------- thinning

def _neighbours(b: np.ndarray):
    """P2..P9 (clockwise from north) of every pixel of a zero-padded array."""
    p = np.pad(b, 1)
    return [
        p[:-2, 1:-1], p[:-2, 2:], p[1:-1, 2:], p[2:, 2:],
        p[2:, 1:-1], p[2:, :-2], p[1:-1, :-2], p[:-2, :-2],
    ]


def _zhang_suen(img: np.ndarray) -> np.ndarray:
    img = img.astype(np.uint8)
    while True:
        changed = False
        for step in (0, 1):
            n = _neighbours(img)
            p2, p3, p4, p5, p6, p7, p8, p9 = n
            count = sum(x.astype(int) for x in n)
            seq = n + [p2]
            trans = sum(((a == 0) & (b == 1)).astype(int) for a, b in zip(seq, seq[1:]))
            if step == 0:
                c3 = (p2 * p4 * p6) == 0
                c4 = (p4 * p6 * p8) == 0
            else:
                c3 = (p2 * p4 * p8) == 0
                c4 = (p2 * p6 * p8) == 0
            kill = (img == 1) & (count >= 2) & (count <= 6) & (trans == 1) & c3 & c4
            if kill.any():
                img[kill] = 0
                changed = True
        if not changed:
            return img


_RING = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]
# ring positions that touch each other: consecutive ones plus orthogonal pairs across a corner
_RING_ADJ = [{(i - 1) % 8, (i + 1) % 8} for i in range(8)]
for _a, _b in ((0, 2), (2, 4), (4, 6), (6, 0)):
    _RING_ADJ[_a].add(_b)
    _RING_ADJ[_b].add(_a)


def _ring_components(ring) -> int:
    seen, comps = set(), 0
    for i in range(8):
        if ring[i] and i not in seen:
            comps += 1
            stack = [i]
            while stack:
                j = stack.pop()
                if j in seen:
                    continue
                seen.add(j)
                stack.extend(k for k in _RING_ADJ[j] if ring[k] and k not in seen)
    return comps


def _remove_staircase(img: np.ndarray) -> np.ndarray:
    """Drop elbow pixels that only duplicate a diagonal link.

    A pixel goes if its neighbours stay one 8-connected group without it and
    it sits between two orthogonal 4-neighbours, which already touch
    diagonally.
    """
    p = np.pad(img, 1)
    changed = True
    while changed:
        changed = False
        for r, c in zip(*np.nonzero(p)):
            if not p[r, c]:
                continue
            ring = [p[r + dr, c + dc] for dr, dc in _RING]
            cnt = sum(ring)
            if cnt < 2 or cnt > 3:
                continue
            n, e, s, w = ring[0], ring[2], ring[4], ring[6]
            if not ((n and e) or (e and s) or (s and w) or (w and n)):
                continue
            if _ring_components(ring) == 1:
                p[r, c] = 0
                changed = True
    return p[1:-1, 1:-1]


_EIGHT = np.ones((3, 3), dtype=int)


def _n_components(img: np.ndarray) -> int:
    return ndimage.label(img, structure=_EIGHT)[1]


def _collapse_blocks(sk: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Break 2x2 blocks left where diagonal arms cross.

    One diagonal of the block is dropped; any arm that touched a dropped
    pixel is re-attached through a mask pixel adjacent to a kept corner. The
    change is kept only if the component count survives and no new block
    appears.
    """
    h, w = sk.shape
    before = _n_components(sk)
    blocks = sk[:-1, :-1] & sk[1:, :-1] & sk[:-1, 1:] & sk[1:, 1:]
    for r, c in zip(*np.nonzero(blocks)):
        cells = [(r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)]
        if not all(sk[q] for q in cells):
            continue
        for drop, keep in ((cells[1:3], cells[::3]), (cells[::3], cells[1:3])):
            trial = sk.copy()
            for q in drop:
                trial[q] = False
            ok = True
            for q in drop:
                arms = [(q[0] + dr, q[1] + dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)
                        if 0 <= q[0] + dr < h and 0 <= q[1] + dc < w]
                arms = [a for a in arms if trial[a] and a not in keep
                        and not any(max(abs(a[0] - k[0]), abs(a[1] - k[1])) <= 1 for k in keep)]
                for a in arms:
                    bridge = [(a[0] + dr, a[1] + dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)]
                    bridge = [b for b in bridge if 0 <= b[0] < h and 0 <= b[1] < w and mask[b]
                              and b not in cells
                              and any(max(abs(b[0] - k[0]), abs(b[1] - k[1])) <= 1 for k in keep)]
                    if not bridge:
                        ok = False
                        break
                    trial[bridge[0]] = True
            if not ok or _n_components(trial) != before:
                continue
            lo_r, lo_c = max(r - 3, 0), max(c - 3, 0)
            win = trial[lo_r:r + 5, lo_c:c + 5]
            if (win[:-1, :-1] & win[1:, :-1] & win[:-1, 1:] & win[1:, 1:]).any():
                continue
            sk = trial
            break
    return sk


def thin(mask: np.ndarray) -> np.ndarray:
    """Zhang-Suen skeleton, cleaned to a one-pixel-wide 8-connected curve."""
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        return m.copy()
    sk = _zhang_suen(m)
    sk = _remove_staircase(sk).astype(bool)
    return _collapse_blocks(sk, m)


# ------------------------------------------------------ distance transform

def distance_transform(mask: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance from each ink pixel to the nearest background.

    Pixels outside the image count as background, so an all-ink mask measures
    distance to just past the border.
    """
    m = np.pad(np.asarray(mask, dtype=bool), 1)
    return ndimage.distance_transform_edt(m)[1:-1, 1:-1]


# ----------------------------------------------------------------- contours

def extract_contour(mask: np.ndarray) -> np.ndarray:
    """Ink pixels with at least one 4-neighbour of background, as ``(col, row)`` rows."""
    m = np.asarray(mask, dtype=bool)
    p = np.pad(m, 1)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    edge = m & ~interior
    rows, cols = np.nonzero(edge)
    return np.stack([cols, rows], axis=1)


def save_contour_csv(points: np.ndarray, path) -> None:
    lines = ["x,y"] + [f"{int(x)},{int(y)}" for x, y in points]
    Path(path).write_text("\n".join(lines) + "\n")
