"""End-to-end orchestration: decompose, fine-tune, render, evaluate, export.

Also holds the pen-height calibration fit and the plotter control format.
"""
from __future__ import annotations

import copy
import json
import math
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import raster
from .decompose import Decomposition, LossWeights, composite_loss, decompose_glyph
from .env import CalliEnv, EnvConfig, run_episode
from .geometry import Polyline, discretize_chain, load_strokes, save_strokes
from .metrics import chamfer, iou, snr
from .sac import SacConfig, TrainResult, save_checkpoint, train
from .utensil import UtensilModel, width_to_z

STAGES = ("decompose", "finetune", "render", "evaluate", "export")

DEFAULT_CONFIG = {
    "seed": 0,
    "input": "glyph.png",
    "output": "out",
    "gt_strokes": 0,
    "stages": {s: True for s in STAGES},
    "decompose": {"beam": 8, "phase": 2, "lambda1": 0.5, "lambda2": 0.5, "threshold": 0.5},
    "env": EnvConfig().to_dict(),
    "sac": SacConfig().to_dict(),
    "utensil": {"kind": "Brush", "r": 0.02, "l": 0.04, "theta": 0.0, "drag": 0.35,
                "r_min": 0.0, "r_max": 0.1},
    "export": {"origin_x": 0.0, "origin_y": 0.0, "scale_mm": 80.0, "safe_lift": 5.0,
               "samples": [[10.0, 0.0], [8.0, 4.0], [6.0, 8.0]]},
}


# -------------------------------------------------------------------- config

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path) -> dict:
    """Read a TOML config; missing keys fall back to :data:`DEFAULT_CONFIG`."""
    with open(path, "rb") as f:
        user = tomllib.load(f)
    unknown = set(user) - set(DEFAULT_CONFIG)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    cfg = _merge(DEFAULT_CONFIG, user)
    base = Path(path).resolve().parent
    for key in ("input", "output"):
        p = Path(cfg[key])
        cfg[key] = str(p if p.is_absolute() else base / p)
    return cfg


def dumps_config(cfg: dict) -> str:
    return tomli_w.dumps(cfg)


def parse_config(text: str) -> dict:
    return _merge(DEFAULT_CONFIG, tomllib.loads(text))


# ---------------------------------------------------------------- calibration

@dataclass
class Calibration:
    """Linear pen-height model ``z = a * r + b`` with ``r`` the stroke half-width (mm)."""

    samples: list = field(default_factory=list)  # (z, width) pairs, mm
    a: float = 0.0
    b: float = 0.0
    rms: float = 0.0

    @property
    def r_range(self) -> tuple[float, float]:
        r = [0.5 * w for _, w in self.samples]
        return (min(r), max(r)) if r else (0.0, math.inf)

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "rms": self.rms, "samples": [list(s) for s in self.samples]}

    @classmethod
    def from_dict(cls, d: dict) -> "Calibration":
        return cls([tuple(s) for s in d.get("samples", [])], float(d["a"]), float(d["b"]),
                   float(d.get("rms", 0.0)))


def fit_z_r(samples: Sequence[tuple[float, float]]) -> Calibration:
    """Ordinary least squares of pen height on half-width.

    ``samples`` are ``(z, measured_width)`` pairs in millimetres.
    """
    samples = [(float(z), float(w)) for z, w in samples]
    z = np.array([s[0] for s in samples])
    r = 0.5 * np.array([s[1] for s in samples])
    if len(np.unique(r)) < 2:
        raise ValueError("need at least two samples with distinct widths to fit z = a*r + b")
    rc, zc = r - r.mean(), z - z.mean()
    a = float((rc * zc).sum() / (rc * rc).sum())
    b = float(z.mean() - a * r.mean())
    rms = float(np.sqrt(np.mean((a * r + b - z) ** 2)))
    return Calibration(samples, a, b, rms)


def read_samples_csv(path) -> list[tuple[float, float]]:
    """``z,width`` rows (header optional)."""
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        try:
            out.append((float(parts[0]), float(parts[1])))
        except ValueError:
            continue  # header
    return out


# -------------------------------------------------------------------- export

@dataclass
class ControlSequence:
    rows: list  # (t, x_mm, y_mm, z_mm, pen)
    utensil: str = ""
    origin: tuple = (0.0, 0.0)
    scale_mm: float = 80.0
    z_safe: float = 0.0

    def to_csv(self) -> str:
        ox, oy = self.origin
        lines = [
            "# callikit control v1",
            f"# utensil={self.utensil} origin_x={ox!r} origin_y={oy!r} scale_mm={self.scale_mm!r} "
            f"x_max={ox + self.scale_mm!r} y_max={oy + self.scale_mm!r} z_safe={self.z_safe!r}",
            "t,x,y,z,pen",
        ]
        lines += [f"{int(t)},{float(x)!r},{float(y)!r},{float(z)!r},{int(p)}" for t, x, y, z, p in self.rows]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def parse(cls, text: str) -> "ControlSequence":
        meta = {}
        rows = []
        for line in text.splitlines():
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        meta[k] = v
                continue
            if not line.strip() or line.startswith("t,"):
                continue
            t, x, y, z, p = line.split(",")
            rows.append((int(t), float(x), float(y), float(z), int(p)))
        return cls(rows, meta.get("utensil", ""),
                   (float(meta.get("origin_x", 0.0)), float(meta.get("origin_y", 0.0))),
                   float(meta.get("scale_mm", 80.0)), float(meta.get("z_safe", 0.0)))

    @classmethod
    def read(cls, path) -> "ControlSequence":
        return cls.parse(Path(path).read_text())

    def strokes(self) -> list[np.ndarray]:
        """Pen-down runs as ``(k, 2)`` arrays of millimetre coordinates."""
        out, cur = [], []
        for _, x, y, _, p in self.rows:
            if p:
                cur.append((x, y))
            elif cur:
                out.append(np.array(cur))
                cur = []
        if cur:
            out.append(np.array(cur))
        return out


def export_control(paths: Sequence[Polyline], calib: Calibration, origin=(0.0, 0.0),
                   scale_mm: float = 80.0, utensil: str = "", safe_lift: float = 5.0) -> ControlSequence:
    """Map canvas trajectories to plotter coordinates with pen heights.

    ``x_mm = origin_x + x * scale_mm`` and likewise for ``y``. Widths become
    heights through the calibration; half-widths above the largest
    calibrated one are clamped with a warning. Lifted moves between strokes
    travel at ``b + safe_lift``.
    """
    if scale_mm <= 0:
        raise ValueError("workspace scale must be positive")
    ox, oy = float(origin[0]), float(origin[1])
    z_safe = calib.b + safe_lift
    r_hi = calib.r_range[1]
    rows = []
    clamped = 0
    t = 0
    prev_end = None
    for poly in paths:
        pts = np.asarray(poly.points, dtype=float)
        xs = ox + pts[:, 0] * scale_mm
        ys = oy + pts[:, 1] * scale_mm
        if prev_end is not None:
            rows.append((t, prev_end[0], prev_end[1], z_safe, 0))
            rows.append((t + 1, float(xs[0]), float(ys[0]), z_safe, 0))
            t += 2
        for x, y, w in zip(xs, ys, np.asarray(poly.widths, dtype=float)):
            r = 0.5 * w * scale_mm
            if r > r_hi:
                r = r_hi
                clamped += 1
            rows.append((t, float(x), float(y), float(width_to_z(2.0 * r, calib)), 1))
            t += 1
        prev_end = (float(xs[-1]), float(ys[-1]))
    if clamped:
        warnings.warn(f"{clamped} points wider than the calibrated range were clamped", RuntimeWarning,
                      stacklevel=2)
    return ControlSequence(rows, utensil, (ox, oy), float(scale_mm), z_safe)


# --------------------------------------------------------- trajectory files

def save_refined(path, paths: Sequence[Polyline]) -> None:
    lines = ["# stroke x y width"]
    for k, poly in enumerate(paths):
        for (x, y), w in zip(poly.points, poly.widths):
            lines.append(f"{k} {float(x)!r} {float(y)!r} {float(w)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_refined(path) -> list[Polyline]:
    groups: dict[int, list] = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        k, x, y, w = line.split()
        groups.setdefault(int(k), []).append((float(x), float(y), float(w)))
    out = []
    for k in sorted(groups):
        arr = np.array(groups[k])
        out.append(Polyline(arr[:, :2], arr[:, 2], 1))
    return out


def coarse_paths(decomp: Decomposition, n: int = 32) -> list[Polyline]:
    return [discretize_chain(s, n) for s in decomp.strokes]


# -------------------------------------------------------------------- stages

def finetune(dataset, utensil: UtensilModel, env_cfg: EnvConfig, sac_cfg: SacConfig, seed: int = 0,
             log=None) -> TrainResult:
    """Train a refinement policy over ``(glyph, decomposition)`` pairs."""
    return train(lambda _s: CalliEnv(utensil, env_cfg, dataset), sac_cfg, seed, log=log)


def refine(agent, glyph, decomp: Decomposition, utensil: UtensilModel, env_cfg: EnvConfig):
    """Deterministic rollout; returns ``(env, total_reward)`` with the drawing in ``env.canvas``."""
    env = CalliEnv(utensil, env_cfg)
    policy = (lambda s: agent.act(s, deterministic=True)) if agent is not None else None
    total, _ = run_episode(env, policy, glyph, decomp)
    return env, total


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run_pipeline(cfg: dict | str | Path, log=None) -> int:
    """Execute the enabled stages; returns a process exit code.

    Artifacts go to ``cfg["output"]``. On failure a ``manifest.json`` lists
    what was written and which stage failed.
    """
    if not isinstance(cfg, dict):
        cfg = load_config(cfg)
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    written: list[str] = []
    stage = "setup"
    try:
        stages = cfg["stages"]
        seed = int(cfg["seed"])
        utensil = UtensilModel.from_dict(cfg["utensil"])
        env_cfg = EnvConfig.from_dict(cfg["env"])
        sac_cfg = SacConfig.from_dict(cfg["sac"])
        dcfg = cfg["decompose"]
        weights = LossWeights(dcfg["lambda1"], dcfg["lambda2"], dcfg["phase"])
        glyph = raster.load_image(cfg["input"])
        metrics: dict = {}

        stage = "decompose"
        strokes_file = out / "strokes.txt"
        if stages.get("decompose", True):
            decomp, _ = decompose_glyph(glyph, weights, beam=dcfg["beam"], threshold=dcfg["threshold"])
            save_strokes(strokes_file, decomp.sequence())
            written.append(strokes_file.name)
            report = composite_loss(decomp, glyph, weights, report=True)
            metrics["decompose"] = {"n_strokes": decomp.stroke_count, "loss": report.as_dict()}
            if cfg["gt_strokes"]:
                metrics["decompose"]["snr"] = snr(decomp.stroke_count, int(cfg["gt_strokes"]))
        elif strokes_file.exists():
            decomp = Decomposition.from_sequence(load_strokes(strokes_file))
        else:
            raise FileNotFoundError("decompose stage disabled and no strokes.txt to reuse")

        target = raster.binarize(glyph, env_cfg.threshold)
        paths = coarse_paths(decomp, env_cfg.n)
        drawing = raster.render_strokes(decomp.sequence(), utensil, env_cfg.size, env_cfg.n)
        metrics["coarse"] = {"iou": iou(drawing >= 0.5, target)}

        stage = "finetune"
        if stages.get("finetune", True):
            result = finetune([(glyph, decomp)], utensil, env_cfg, sac_cfg, seed, log)
            (out / "curve.csv").write_text(result.curve_csv())
            written.append("curve.csv")
            env, total = refine(result.agent, glyph, decomp, utensil, env_cfg)
            paths = env.refined_paths()
            drawing = env.canvas
            save_refined(out / "refined.txt", paths)
            written.append("refined.txt")
            save_checkpoint(result.agent, out / "policy.ckpt")
            written.append("policy.ckpt")
            metrics["refined"] = {"iou": env.r_fin / env_cfg.terminal_scale, "return": total}

        stage = "render"
        if stages.get("render", True):
            raster.save_image(drawing, out / "render.png")
            written.append("render.png")

        stage = "evaluate"
        if stages.get("evaluate", True):
            mask = drawing >= 0.5
            metrics["evaluate"] = {
                "iou": iou(mask, target),
                "chamfer": chamfer(raster.extract_contour(mask), raster.extract_contour(target), mask.shape),
            }

        stage = "export"
        if stages.get("export", True):
            ecfg = cfg["export"]
            calib = fit_z_r(ecfg["samples"])
            seq = export_control(paths, calib, (ecfg["origin_x"], ecfg["origin_y"]), ecfg["scale_mm"],
                                 utensil.kind, ecfg["safe_lift"])
            seq.write(out / "control.csv")
            written.append("control.csv")

        stage = "metrics"
        _write_json(out / "metrics.json", metrics)
        written.append("metrics.json")
        return 0
    except Exception as exc:  # report and flag partial output
        _write_json(out / "manifest.json", {"status": "failed", "stage": stage,
                                            "error": f"{type(exc).__name__}: {exc}",
                                            "written": written})
        if log is not None:
            log(f"stage {stage} failed: {exc}")
        return 1
