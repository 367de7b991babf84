"""Quadratic Bezier strokes: evaluation, arc-length sampling, curvature and fitting.

All coordinates live in the normalized canvas [0, 1]^2 with y pointing up.
The single flip to raster (row-down) coordinates happens in :mod:`callikit.raster`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.optimize import least_squares

#: entries in the per-stroke chord-length lookup used for arc-length sampling
CHORD_TABLE_SIZE = 256


class Point2(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class StrokePrimitive:
    """One quadratic Bezier segment ``(p, x0, y0, x1, y1, x2, y2, w0, w1)``.

    ``pen`` is 1 while drawing and 0 for a lifted repositioning move.
    Widths are full stroke widths in canvas units.
    """

    pen: int
    o0: Point2
    o1: Point2
    o2: Point2
    w0: float = 0.0
    w1: float = 0.0

    def __post_init__(self):
        if self.pen not in (0, 1):
            raise ValueError(f"pen must be 0 or 1, got {self.pen!r}")
        object.__setattr__(self, "o0", Point2(*map(float, self.o0)))
        object.__setattr__(self, "o1", Point2(*map(float, self.o1)))
        object.__setattr__(self, "o2", Point2(*map(float, self.o2)))
        vals = (*self.o0, *self.o1, *self.o2, self.w0, self.w1)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("stroke values must be finite")
        if self.w0 < 0 or self.w1 < 0:
            raise ValueError("stroke widths must be non-negative")

    @property
    def control_points(self) -> np.ndarray:
        return np.array([self.o0, self.o1, self.o2], dtype=float)

    def as_row(self) -> tuple:
        return (self.pen, *self.o0, *self.o1, *self.o2, self.w0, self.w1)

    @classmethod
    def from_row(cls, row: Sequence[float]) -> "StrokePrimitive":
        if len(row) != 9:
            raise ValueError(f"stroke row needs 9 values, got {len(row)}")
        p = int(round(float(row[0])))
        v = [float(x) for x in row[1:]]
        return cls(p, Point2(v[0], v[1]), Point2(v[2], v[3]), Point2(v[4], v[5]), v[6], v[7])

    def reversed(self) -> "StrokePrimitive":
        return replace(self, o0=self.o2, o2=self.o0, w0=self.w1, w1=self.w0)


@dataclass
class Polyline:
    """Ordered sample points with per-point pen flag and width."""

    points: np.ndarray  # (n, 2)
    widths: np.ndarray  # (n,)
    pens: np.ndarray  # (n,) ints

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        n = len(self.points)
        self.widths = np.broadcast_to(np.asarray(self.widths, dtype=float), (n,)).copy()
        self.pens = np.broadcast_to(np.asarray(self.pens, dtype=int), (n,)).copy()

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_duplicates(self) -> bool:
        """True when two consecutive points coincide (allowed, but worth knowing)."""
        if len(self.points) < 2:
            return False
        return bool(np.any(np.all(np.diff(self.points, axis=0) == 0, axis=1)))

    def arc_positions(self) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])


def _bezier_many(cp: np.ndarray, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)[:, None]
    t = 1.0 - s
    return t * t * cp[0] + 2.0 * s * t * cp[1] + s * s * cp[2]


def bezier_eval(stroke: StrokePrimitive, s: float) -> Point2:
    """Point on the curve at parameter ``s`` in [0, 1]."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"parameter s={s} outside [0, 1]")
    t = 1.0 - s
    a, b, c = t * t, 2.0 * s * t, s * s
    return Point2(
        a * stroke.o0.x + b * stroke.o1.x + c * stroke.o2.x,
        a * stroke.o0.y + b * stroke.o1.y + c * stroke.o2.y,
    )


def bezier_derivative(cp: np.ndarray, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)[:, None]
    return 2.0 * (1.0 - s) * (cp[1] - cp[0]) + 2.0 * s * (cp[2] - cp[1])


def _chord_table(stroke: StrokePrimitive):
    sgrid = np.linspace(0.0, 1.0, CHORD_TABLE_SIZE)
    pts = _bezier_many(stroke.control_points, sgrid)
    cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    return sgrid, cum


def arc_length(stroke: StrokePrimitive) -> float:
    """Chord-table approximation of the curve length."""
    return float(_chord_table(stroke)[1][-1])


def discretize_chain(strokes: Sequence[StrokePrimitive], n: int) -> Polyline:
    """Sample ``n`` points evenly by arc length along consecutive segments.

    Widths interpolate linearly along each segment's arc length; each point
    inherits the pen flag of the segment it falls on.
    """
    if n < 2:
        raise ValueError(f"need n >= 2 points, got {n}")
    if not strokes:
        raise ValueError("cannot discretize an empty chain")
    tables = [_chord_table(st) for st in strokes]
    lengths = np.array([cum[-1] for _, cum in tables])
    offsets = np.concatenate([[0.0], np.cumsum(lengths)])
    total = offsets[-1]
    targets = np.linspace(0.0, total, n)

    pts = np.empty((n, 2))
    widths = np.empty(n)
    pens = np.empty(n, dtype=int)
    last = len(strokes) - 1
    for i, d in enumerate(targets):
        if i == n - 1:
            k, s, frac = last, 1.0, 1.0
        elif total == 0.0:
            # every segment is a point; spread the parameter uniformly
            k, s = 0, i / (n - 1)
            frac = s
        else:
            k = int(np.searchsorted(offsets, d, side="right") - 1)
            k = min(max(k, 0), last)
            local = d - offsets[k]
            sgrid, cum = tables[k]
            if lengths[k] > 0:
                s = float(np.interp(local, cum, sgrid))
                frac = local / lengths[k]
            else:
                s, frac = 0.0, 0.0
            if i == 0:
                s, frac = 0.0, 0.0
        st = strokes[k]
        pts[i] = bezier_eval(st, min(max(s, 0.0), 1.0))
        widths[i] = st.w0 + (st.w1 - st.w0) * min(max(frac, 0.0), 1.0)
        pens[i] = st.pen
    return Polyline(pts, widths, pens)


def discretize(stroke: StrokePrimitive, n: int) -> Polyline:
    """``n`` points on one stroke at near-uniform arc-length spacing."""
    return discretize_chain([stroke], n)


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between two 2-vectors; NaN if either is zero-length."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    su, sv = float(np.abs(u).max()), float(np.abs(v).max())
    if su == 0.0 or sv == 0.0:
        return math.nan
    # rescaling leaves the angle alone and keeps the norm product from underflowing
    u, v = u / su, v / sv
    nu = float(u[0] * u[0] + u[1] * u[1])
    nv = float(v[0] * v[0] + v[1] * v[1])
    # one square root of the product keeps parallel vectors at exactly +-1
    c = float(u[0] * v[0] + u[1] * v[1]) / math.sqrt(nu * nv)
    return max(-1.0, min(1.0, c))


def menger_curvature(a, b, c) -> tuple[float, bool]:
    """Curvature of the circle through three points, plus a degeneracy flag.

    Coincident points give ``(0.0, True)``; collinear distinct points give
    ``(0.0, False)``.
    """
    ax, ay = float(a[0]), float(a[1])
    bx, by = float(b[0]), float(b[1])
    cx, cy = float(c[0]), float(c[1])
    ab = math.hypot(bx - ax, by - ay)
    bc = math.hypot(cx - bx, cy - by)
    ca = math.hypot(ax - cx, ay - cy)
    if ab == 0.0 or bc == 0.0 or ca == 0.0:
        return 0.0, True
    cross = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    return 2.0 * abs(cross) / (ab * bc * ca), False


def chord_parameters(points: np.ndarray) -> np.ndarray:
    d = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(points, axis=0), axis=1))])
    if d[-1] == 0.0:
        return np.linspace(0.0, 1.0, len(points))
    return d / d[-1]


def _solve_middle(points: np.ndarray, u: np.ndarray) -> np.ndarray:
    p0, p2 = points[0], points[-1]
    t = 1.0 - u
    b0, b1, b2 = t * t, 2.0 * u * t, u * u
    denom = float(np.sum(b1 * b1))
    if denom == 0.0:
        return 0.5 * (p0 + p2)
    rhs = points - b0[:, None] * p0 - b2[:, None] * p2
    return (b1[:, None] * rhs).sum(axis=0) / denom


def _refine_parameters(pts: np.ndarray, u: np.ndarray, iterations: int):
    o1 = _solve_middle(pts, u)
    for _ in range(iterations):
        cp = np.array([pts[0], o1, pts[-1]])
        inner = u[1:-1]
        diff = _bezier_many(cp, inner) - pts[1:-1]
        d1 = bezier_derivative(cp, inner)
        num = (diff * d1).sum(axis=1)
        den = (d1 * d1).sum(axis=1)
        step = np.where(den > 1e-15, num / np.where(den > 1e-15, den, 1.0), 0.0)
        u = np.concatenate([[0.0], np.clip(inner - step, 0.0, 1.0), [1.0]])
        new_o1 = _solve_middle(pts, u)
        moved = np.max(np.abs(new_o1 - o1))
        o1 = new_o1
        if moved < 1e-13:
            break
    return u, o1


def _residual(pts, u, o1) -> float:
    cp = np.array([pts[0], o1, pts[-1]])
    return float(((_bezier_many(cp, u) - pts) ** 2).sum())


def _joint_polish(pts: np.ndarray, u: np.ndarray, o1: np.ndarray):
    m = len(pts)
    p0, p2 = pts[0], pts[-1]
    idx = np.arange(m - 2)

    def res(z):
        cp = np.array([p0, z[:2], p2])
        return (_bezier_many(cp, z[2:]) - pts[1:-1]).ravel()

    def jac(z):
        ui = z[2:]
        cp = np.array([p0, z[:2], p2])
        J = np.zeros((2 * (m - 2), m))
        b1 = 2.0 * ui * (1.0 - ui)
        J[0::2, 0] = b1
        J[1::2, 1] = b1
        d = bezier_derivative(cp, ui)
        J[2 * idx, 2 + idx] = d[:, 0]
        J[2 * idx + 1, 2 + idx] = d[:, 1]
        return J

    lo = np.r_[-np.inf, -np.inf, np.zeros(m - 2)]
    hi = np.r_[np.inf, np.inf, np.ones(m - 2)]
    z0 = np.concatenate([o1, np.clip(u[1:-1], 0.0, 1.0)])
    sol = least_squares(res, z0, jac=jac, bounds=(lo, hi), xtol=1e-15, ftol=1e-15,
                        gtol=1e-15, max_nfev=200)
    return np.concatenate([[0.0], sol.x[2:], [1.0]]), sol.x[:2]


def fit_quad_bezier(poly: Polyline, polish: bool = True) -> StrokePrimitive:
    """Least-squares quadratic through ``poly`` with both endpoints pinned.

    Chord-length and uniform parameterizations both seed a Gauss-Newton
    reprojection loop; the better one is then polished jointly over the
    middle control point and all sample parameters. Widths come from the
    first/last samples.
    """
    pts = np.asarray(poly.points, dtype=float)
    if len(pts) < 3:
        raise ValueError(f"need at least 3 points to fit, got {len(pts)}")
    u = chord_parameters(pts)
    o1 = _solve_middle(pts, u)
    if len(pts) > 3:
        best = None
        for seed in (u, np.linspace(0.0, 1.0, len(pts))):
            cu, co = _refine_parameters(pts, seed, 40)
            err = _residual(pts, cu, co)
            if best is None or err < best[0]:
                best = (err, cu, co)
        _, u, o1 = best
        if polish and best[0] > 1e-24:
            pu, po = _joint_polish(pts, u, o1)
            if _residual(pts, pu, po) <= best[0]:
                o1 = po
    pen = int(poly.pens[0]) if len(poly.pens) else 1
    return StrokePrimitive(
        pen, Point2(*pts[0]), Point2(*o1), Point2(*pts[-1]),
        float(poly.widths[0]), float(poly.widths[-1]),
    )


def fit_error(stroke: StrokePrimitive, points: np.ndarray) -> np.ndarray:
    """Distance of each point to a dense sampling of ``stroke``."""
    dense = _bezier_many(stroke.control_points, np.linspace(0.0, 1.0, 257))
    d2 = ((points[:, None, :] - dense[None, :, :]) ** 2).sum(axis=2)
    return np.sqrt(d2.min(axis=1))


def pen_up(a, b) -> StrokePrimitive:
    """Straight lifted move from ``a`` to ``b``."""
    a = Point2(*map(float, a))
    b = Point2(*map(float, b))
    mid = Point2(0.5 * (a.x + b.x), 0.5 * (a.y + b.y))
    return StrokePrimitive(0, a, mid, b, 0.0, 0.0)


def save_strokes(path, strokes: Iterable[StrokePrimitive]) -> None:
    """Write one ``p x0 y0 x1 y1 x2 y2 w0 w1`` line per segment."""
    lines = []
    for st in strokes:
        row = st.as_row()
        lines.append(" ".join([str(row[0])] + [repr(float(v)) for v in row[1:]]))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_strokes(path) -> list[StrokePrimitive]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        try:
            out.append(StrokePrimitive.from_row(fields))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out
