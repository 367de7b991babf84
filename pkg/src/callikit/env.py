"""Tool-aware refinement environment.

An episode walks the discretized points of a coarse decomposition. At every
step the agent offsets the next point by a bounded ``(dx, dy)`` (plus a
rotation for the flat marker), the utensil is dragged there and stamped,
and a shaped reward scores curvature smoothness mid-stroke and boundary
adherence near stroke ends. The last step adds a fidelity bonus scaled from
the IoU between the drawing and the target glyph.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import raster
from .decompose import Decomposition
from .geometry import Polyline, discretize_chain, menger_curvature
from .metrics import iou
from .utensil import FLAT_MARKER, UtensilModel

STATE_DIM = 9


@dataclass(frozen=True)
class EnvConfig:
    eps: float = 0.02  # max |offset| per axis, canvas units
    r_max: float = 256.0  # curvature-radius cap, pixels
    r_floor: float = 0.5  # pixels
    n: int = 32  # points per stroke
    terminal_scale: float = 80.0
    size: int = raster.DEFAULT_SIZE
    h_low: float = 0.2
    h_high: float = 0.8
    dtheta: float = math.pi / 8  # marker rotation bound per step
    threshold: float = 0.5

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.r_max <= 0 or self.r_floor <= 0 or self.r_floor > self.r_max:
            raise ValueError("need 0 < r_floor <= r_max")
        if self.n < 3:
            raise ValueError("need at least 3 points per stroke")
        if self.size < raster.MIN_SIZE:
            raise ValueError(f"size must be at least {raster.MIN_SIZE}")
        if not 0.0 <= self.h_low <= self.h_high <= 1.0:
            raise ValueError("need 0 <= h_low <= h_high <= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        names = cls.__dataclass_fields__.keys()
        return cls(**{k: v for k, v in d.items() if k in names})

    def to_dict(self) -> dict:
        return asdict(self)


class EnvState(NamedTuple):
    h: float
    r: float
    l: float
    theta: float
    rho: float
    dx: float
    dy: float
    vx: float
    vy: float


class Transition(NamedTuple):
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


def reward_adaptive(h: float, r_t: float, r_prev: float, counts: tuple[int, int, int],
                    config: EnvConfig = EnvConfig()) -> float:
    """Shaped step reward.

    Mid-stroke (``h_low <= h <= h_high``) penalizes curvature change,
    weighted toward tight turns: ``-sqrt(r_max/r_t) * |1/r_t - 1/r_prev|``.
    Near stroke ends rewards ink inside the glyph: ``(o_in - o_out)/o_tool``.
    """
    if config.h_low <= h <= config.h_high:
        return -math.sqrt(config.r_max / r_t) * abs(1.0 / r_t - 1.0 / r_prev)
    return end_reward(counts)[0]


def end_reward(counts: tuple[int, int, int]) -> tuple[float, bool]:
    """``(o_in - o_out)/o_tool`` and a flag set when the footprint is empty."""
    o_tool, o_in, o_out = counts
    if o_tool == 0:
        return 0.0, True
    if o_in + o_out != o_tool:
        raise ValueError("footprint counts must satisfy o_tool = o_in + o_out")
    return (o_in - o_out) / o_tool, False


def terminal_reward(canvas: np.ndarray, target_mask: np.ndarray, scale: float = 80.0,
                    threshold: float = 0.5) -> float:
    return scale * iou(canvas >= threshold, target_mask)


def episode_return(r_ada: Sequence[float], r_fin: float = 0.0) -> float:
    """Mean shaped reward over the episode plus the terminal bonus."""
    r_ada = list(r_ada)
    if not r_ada:
        raise ValueError("empty episode")
    return math.fsum(r_ada) / len(r_ada) + r_fin


def _unit(v) -> tuple[float, float]:
    n = math.hypot(v[0], v[1])
    return (0.0, 0.0) if n == 0.0 else (v[0] / n, v[1] / n)


class CalliEnv:
    """Refines one glyph per episode; glyphs round-robin over ``dataset``.

    ``dataset`` is a sequence of ``(glyph_image, Decomposition)`` pairs.
    """

    def __init__(self, utensil: UtensilModel, config: EnvConfig = EnvConfig(), dataset=None):
        self.utensil = utensil
        self.config = config
        self.dataset = list(dataset or [])
        self._cursor = 0
        self.state_dim = STATE_DIM
        marker = utensil.kind == FLAT_MARKER
        self.action_dim = 3 if marker else 2
        bound = [config.eps, config.eps] + ([config.dtheta] if marker else [])
        self.action_bound = np.array(bound, dtype=float)
        self.done = True
        self.paths: list[Polyline] = []

    # ---------------------------------------------------------------- episode
    def reset(self, glyph=None, coarse: Decomposition | None = None) -> EnvState:
        if glyph is None:
            if not self.dataset:
                raise ValueError("no glyph given and the environment has no dataset")
            glyph, coarse = self.dataset[self._cursor % len(self.dataset)]
            self._cursor += 1
        if coarse is None or not coarse.strokes:
            raise ValueError("reset needs a nonempty decomposition")
        glyph = raster.check_image(glyph)
        cfg = self.config
        if glyph.shape != (cfg.size, cfg.size):
            raise ValueError(f"glyph must be {cfg.size}x{cfg.size}, got {glyph.shape}")
        self.glyph = glyph
        self.target = raster.binarize(glyph, cfg.threshold)
        self.coarse = coarse
        self.paths = [discretize_chain(s, cfg.n) for s in coarse.strokes]
        self.T = sum(len(p) for p in self.paths)
        self.canvas = raster.blank(cfg.size)
        self.stamper = raster.Stamper(self.canvas, self.utensil)
        self.k, self.i, self.t = 0, 0, 0
        self.heading = self.utensil.theta
        self.executed: list[list[tuple[float, float, float]]] = [[] for _ in self.paths]
        self.r_prev = cfg.r_max
        self.r_ada: list[float] = []
        self.r_fin = 0.0
        self.trace: list[tuple] = []
        self.last_info: dict = {}
        self.done = False
        self._state = self._observe(0.0, 0.0, 0.0)
        return self._state

    def _direction(self, k, i):
        pts = self.paths[k].points
        if i + 1 < len(pts):
            return _unit(pts[i + 1] - pts[i])
        return _unit(pts[i] - pts[i - 1])

    def _observe(self, rho, dx, dy) -> EnvState:
        n = len(self.paths[self.k].points)
        h = self.i / (n - 1)
        vx, vy = self._direction(self.k, self.i)
        m = self.utensil
        tool = self.stamper.state
        theta = tool.heading if tool is not None else self.heading
        return EnvState(h, m.r, m.l, theta, rho, dx, dy, vx, vy)

    def _radius_px(self, pts) -> float:
        cfg = self.config
        if len(pts) < 3:
            return cfg.r_max
        kappa, _ = menger_curvature(*(np.asarray(p[:2]) * (cfg.size - 1) for p in pts[-3:]))
        if kappa == 0.0:
            return cfg.r_max
        return min(max(1.0 / kappa, cfg.r_floor), cfg.r_max)

    def clamp(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=float).reshape(-1)
        if a.shape[0] != self.action_dim:
            raise ValueError(f"action must have {self.action_dim} components, got {a.shape[0]}")
        return np.clip(a, -self.action_bound, self.action_bound)

    def step(self, action) -> tuple[EnvState, float, bool]:
        """Execute the next point; returns ``(state, reward, done)``.

        The per-step reward is the shaped reward divided by the episode
        length, and the final step also carries the fidelity bonus, so
        rewards sum to :func:`episode_return`. Details of the last step are
        kept in ``last_info``.
        """
        if self.done:
            raise RuntimeError("episode is over; call reset()")
        cfg = self.config
        a = self.clamp(action)
        if self.action_dim == 3:
            self.heading = (self.heading + a[2]) % (2.0 * math.pi)
        path = self.paths[self.k]
        p = path.points[self.i] + a[:2]
        w = float(path.widths[self.i])
        if self.i == 0:
            fp = self.stamper.begin(p, w, heading=self.heading)
        else:
            if self.action_dim == 3:
                self.stamper.state = self.stamper.state.with_heading(self.heading)
            fp = self.stamper.move_to(p, w)
        done_pts = self.executed[self.k]
        done_pts.append((float(p[0]), float(p[1]), w))

        n = len(path.points)
        h = self.i / (n - 1)
        r_t = self._radius_px(done_pts)
        inside = int(np.count_nonzero(self.target[fp.rows, fp.cols]))
        counts = (len(fp), inside, len(fp) - inside)
        r_ada = reward_adaptive(h, r_t, self.r_prev, counts, cfg)
        self.r_prev = r_t
        self.r_ada.append(r_ada)
        reward = r_ada / self.T

        self.t += 1
        self.i += 1
        if self.i >= n:
            self.k += 1
            self.i = 0
            self.r_prev = cfg.r_max
        self.done = self.k >= len(self.paths)
        r_fin = 0.0
        if self.done:
            r_fin = terminal_reward(self.canvas, self.target, cfg.terminal_scale, cfg.threshold)
            self.r_fin = r_fin
            reward += r_fin
            self.k, self.i = len(self.paths) - 1, n - 1  # park on the last point
        rho = 1.0 / r_t if len(done_pts) >= 3 else 0.0
        self._state = self._observe(rho, float(a[0]), float(a[1]))
        self.trace.append((self.t - 1, float(p[0]), float(p[1]), w, reward))
        self.last_info = {"r_ada": r_ada, "r_fin": r_fin, "counts": counts, "clamped": fp.clamped,
                          "iou": r_fin / cfg.terminal_scale if self.done else None}
        return self._state, reward, self.done

    # ---------------------------------------------------------------- outputs
    def episode_total(self) -> float:
        return episode_return(self.r_ada, self.r_fin)

    def refined_paths(self) -> list[Polyline]:
        """Executed trajectory so far, one polyline per stroke."""
        out = []
        for pts in self.executed:
            if pts:
                arr = np.array(pts)
                out.append(Polyline(arr[:, :2], arr[:, 2], 1))
        return out

    def write_trace(self, path) -> None:
        lines = ["t,x,y,width,reward"]
        lines += [f"{t},{x!r},{y!r},{w!r},{r!r}" for t, x, y, w, r in self.trace]
        Path(path).write_text("\n".join(lines) + "\n")


def run_episode(env: CalliEnv, policy=None, glyph=None, coarse=None):
    """Roll out one episode; ``policy(state) -> action`` defaults to zero offsets.

    Returns ``(total_reward, canvas)``.
    """
    s = env.reset(glyph, coarse)
    total = 0.0
    done = False
    while not done:
        a = np.zeros(env.action_dim) if policy is None else policy(np.asarray(s))
        s, r, done = env.step(a)
        total += r
    return total, env.canvas
