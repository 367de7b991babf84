"""Writing-tool models: contact footprint geometry and per-step motion dynamics.

Three kinds are supported. A fude pen touches the paper with a disk, a flat
marker with a rotated rectangle whose angle is steered by the agent, and a
brush with an ellipse that stretches along its direction of travel and lags
behind turns.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .geometry import Point2

FUDE_PEN = "FudePen"
FLAT_MARKER = "FlatMarker"
BRUSH = "Brush"
KINDS = (FUDE_PEN, FLAT_MARKER, BRUSH)

TWO_PI = 2.0 * math.pi
#: speed (canvas units per step) at which the brush reaches full elongation; 2 px at 256^2
V_REF = 2.0 / 255.0


def wrap_angle(a: float) -> float:
    """Wrap to [0, 2*pi)."""
    w = math.fmod(a, TWO_PI)
    if w < 0:
        w += TWO_PI
    return 0.0 if w >= TWO_PI else w


def _wrap_pi(a: float) -> float:
    return (a + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class UtensilModel:
    """Tool geometry in canvas units.

    ``l`` is the rectangle's long side for a flat marker and the semi-major
    axis for a brush; the fude pen ignores it. ``drag`` is the fraction of
    the heading error a brush removes per step.
    """

    kind: str = FUDE_PEN
    r: float = 0.02
    l: float = 0.02
    theta: float = 0.0
    drag: float = 0.35
    r_min: float = 0.0
    r_max: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown utensil kind {self.kind!r}; expected one of {KINDS}")
        if not (0.0 <= self.r_min <= self.r <= self.r_max):
            raise ValueError(f"need r_min <= r <= r_max, got {self.r_min}, {self.r}, {self.r_max}")
        if self.l < 0:
            raise ValueError("l must be non-negative")
        if self.kind == BRUSH and self.l < self.r:
            raise ValueError("brush semi-major axis l must be >= r")
        if not 0.0 <= self.drag <= 1.0:
            raise ValueError("drag must lie in [0, 1]")
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @classmethod
    def from_dict(cls, d: dict) -> "UtensilModel":
        known = {k: d[k] for k in ("kind", "r", "l", "theta", "drag", "r_min", "r_max") if k in d}
        return cls(**known)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "r": self.r, "l": self.l, "theta": self.theta,
                "drag": self.drag, "r_min": self.r_min, "r_max": self.r_max}

    def initial_state(self, pose=(0.0, 0.0)) -> "UtensilState":
        return UtensilState(self, Point2(*map(float, pose)), self.theta)


class Footprint(NamedTuple):
    rows: np.ndarray
    cols: np.ndarray
    clamped: bool
    r: float  # contact radius actually used, canvas units

    def __len__(self):
        return len(self.rows)


@dataclass(frozen=True)
class UtensilState:
    """Tool pose plus its current orientation.

    ``heading`` is the brush's major axis or the marker's angle. ``speed`` is
    the brush elongation factor in [0, 1] set by the last motion.
    """

    model: UtensilModel
    pose: Point2
    heading: float = 0.0
    speed: float = field(default=0.0)

    def __post_init__(self):
        if not isinstance(self.pose, Point2):
            object.__setattr__(self, "pose", Point2(*map(float, self.pose)))
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))

    def footprint(self, width: float, size: int = 256) -> Footprint:
        return footprint(self, width, size)

    def step(self, motion) -> "UtensilState":
        return dynamics_step(self, motion)

    def with_heading(self, heading: float) -> "UtensilState":
        return replace(self, heading=heading)

    def moved_to(self, pose) -> "UtensilState":
        return replace(self, pose=Point2(*map(float, pose)))


def _canonical_rect_angle(theta: float) -> float:
    # a rectangle is symmetric under a half turn; snap so theta and theta+pi agree bitwise
    a = round(math.fmod(theta, math.pi), 12)
    if a < 0:
        a = round(a + math.pi, 12)
    return 0.0 if a >= round(math.pi, 12) else a


def footprint(state: UtensilState, width: float, size: int = 256) -> Footprint:
    """Pixels covered by the tool at ``state.pose`` for a stroke of ``width``.

    The instantaneous radius is ``width / 2`` clamped to the model's
    ``[r_min, r_max]``; ``clamped`` reports whether clamping happened. The
    pixel nearest the pose is always included so the footprint is never
    empty while on the canvas.
    """
    m = state.model
    r = 0.5 * float(width)
    clamped = False
    if r < m.r_min or r > m.r_max:
        r = min(max(r, m.r_min), m.r_max)
        clamped = True
    scale = size - 1
    cx = state.pose.x * scale
    cy = (1.0 - state.pose.y) * scale  # raster rows grow downward
    r_px = r * scale

    if m.kind == FUDE_PEN:
        reach = r_px
    elif m.kind == FLAT_MARKER:
        reach = math.hypot(0.5 * m.l * scale, r_px)
    else:
        l_eff = r + max(m.l - r, 0.0) * state.speed
        reach = max(l_eff * scale, r_px)

    c0, c1 = int(math.floor(cx - reach)), int(math.ceil(cx + reach))
    r0, r1 = int(math.floor(cy - reach)), int(math.ceil(cy + reach))
    rows, cols = np.mgrid[r0:r1 + 1, c0:c1 + 1]
    dx = cols - cx
    dy = cy - rows  # back to y-up for orientation tests

    if m.kind == FUDE_PEN or (m.kind == BRUSH and (m.l <= r or state.speed == 0.0)):
        inside = dx * dx + dy * dy <= r_px * r_px
    elif m.kind == FLAT_MARKER:
        a = _canonical_rect_angle(state.heading)
        c, s = math.cos(a), math.sin(a)
        u = dx * c + dy * s
        v = -dx * s + dy * c
        inside = (np.abs(u) <= 0.5 * m.l * scale) & (np.abs(v) <= r_px)
    else:
        l_px = (r + (m.l - r) * state.speed) * scale
        c, s = math.cos(state.heading), math.sin(state.heading)
        u = dx * c + dy * s
        v = -dx * s + dy * c
        if r_px == 0.0:
            inside = np.zeros_like(dx, dtype=bool)
        else:
            # hairline widths overflow to inf, which correctly lands outside
            with np.errstate(over="ignore"):
                inside = (u / l_px) ** 2 + (v / r_px) ** 2 <= 1.0

    near_r, near_c = int(round(cy)), int(round(cx))
    inside |= (rows == near_r) & (cols == near_c)
    rr = rows[inside]
    cc = cols[inside]
    keep = (rr >= 0) & (rr < size) & (cc >= 0) & (cc < size)
    return Footprint(rr[keep], cc[keep], clamped, r)


def dynamics_step(state: UtensilState, motion) -> UtensilState:
    """Advance the tool by ``motion`` (canvas units).

    Only the brush has passive dynamics: its heading turns toward the motion
    direction by a fraction ``drag`` of the angular error, and its elongation
    tracks the speed. Zero motion leaves the state untouched.
    """
    mx, my = float(motion[0]), float(motion[1])
    if mx == 0.0 and my == 0.0:
        return state
    pose = Point2(state.pose.x + mx, state.pose.y + my)
    if state.model.kind != BRUSH:
        return replace(state, pose=pose)
    target = math.atan2(my, mx)
    heading = state.heading + state.model.drag * _wrap_pi(target - state.heading)
    speed = min(1.0, math.hypot(mx, my) / V_REF)
    return UtensilState(state.model, pose, heading, speed)


def _coeffs(calib):
    if calib is None:
        raise ValueError("no z-r calibration available; fit one first")
    if hasattr(calib, "a"):
        return float(calib.a), float(calib.b)
    a, b = calib
    return float(a), float(b)


def width_to_z(width: float, calib) -> float:
    """Pen height for a stroke width: ``z = a * (width / 2) + b``."""
    a, b = _coeffs(calib)
    return a * (0.5 * width) + b


def z_to_width(z: float, calib) -> float:
    a, b = _coeffs(calib)
    if a == 0.0:
        raise ValueError("calibration slope is zero; width is not recoverable from z")
    return 2.0 * (z - b) / a


def warn_clamped(fp: Footprint) -> None:
    if fp.clamped:
        warnings.warn(f"stroke width clamped to radius {fp.r:.4g}", RuntimeWarning, stacklevel=2)
