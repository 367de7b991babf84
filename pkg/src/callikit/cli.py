"""Command-line entry point: ``callikit <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from . import raster
from .decompose import Decomposition, LossWeights, composite_loss, decompose_glyph
from .env import EnvConfig
from .geometry import load_strokes, save_strokes
from .metrics import evaluate_images
from .pipeline import (Calibration, ControlSequence, DEFAULT_CONFIG, export_control, finetune, fit_z_r,
                       load_config, load_refined, read_samples_csv, refine, run_pipeline, save_refined)
from .sac import SacConfig, save_checkpoint
from .utensil import KINDS, UtensilModel


def _print_json(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    print(text)


def _utensil(args) -> UtensilModel:
    d = dict(DEFAULT_CONFIG["utensil"])
    if getattr(args, "config", None):
        d.update(load_config(args.config)["utensil"])
    if getattr(args, "utensil", None):
        d["kind"] = args.utensil
    return UtensilModel.from_dict(d)


def cmd_decompose(args):
    glyph = raster.load_image(args.input)
    weights = LossWeights(args.lambda1, args.lambda2, args.phase)
    decomp, _ = decompose_glyph(glyph, weights, beam=args.beam, threshold=args.threshold)
    save_strokes(args.out, decomp.sequence())
    rep = composite_loss(decomp, glyph, weights, report=True)
    _print_json({"N_s": decomp.stroke_count, "loss": rep.as_dict()}, args.report)
    return 0


def cmd_finetune(args):
    cfg = load_config(args.config) if args.config else DEFAULT_CONFIG
    glyph = raster.load_image(args.input)
    decomp = Decomposition.from_sequence(load_strokes(args.strokes))
    utensil = _utensil(args)
    env_cfg = EnvConfig.from_dict(cfg["env"])
    sac_d = dict(cfg["sac"])
    if args.epochs is not None:
        sac_d["epochs"] = args.epochs
    if args.steps is not None:
        sac_d["steps_per_epoch"] = args.steps
    sac_cfg = SacConfig.from_dict(sac_d)
    log = (lambda st: print(f"epoch {st.epoch}: return {st.mean_return:.4f}", file=sys.stderr)) \
        if args.verbose else None
    result = finetune([(glyph, decomp)], utensil, env_cfg, sac_cfg, args.seed, log)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "curve.csv").write_text(result.curve_csv())
    save_checkpoint(result.agent, out / "policy.ckpt")
    env, total = refine(result.agent, glyph, decomp, utensil, env_cfg)
    save_refined(out / "refined.txt", env.refined_paths())
    if args.trace:
        env.write_trace(out / "trace.csv")
    _print_json({"return": total, "iou": env.r_fin / env_cfg.terminal_scale})
    return 0


def cmd_render(args):
    utensil = _utensil(args)
    if args.refined:
        img = raster.render_polylines(load_refined(args.refined), utensil, args.size)
    else:
        img = raster.render_strokes(load_strokes(args.strokes), utensil, args.size, args.points)
    raster.save_image(img, args.out)
    return 0


def cmd_evaluate(args):
    pred = raster.load_image(args.pred)
    ref = raster.load_image(args.ref)
    _print_json(evaluate_images(pred, ref, args.pred_strokes, args.gt_strokes))
    return 0


def cmd_calibrate(args):
    calib = fit_z_r(read_samples_csv(args.samples))
    _print_json(calib.to_dict(), args.out)
    return 0


def cmd_export(args):
    calib = Calibration.from_dict(json.loads(Path(args.calib).read_text()))
    paths = load_refined(args.refined)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        seq = export_control(paths, calib, (args.origin_x, args.origin_y), args.scale, args.utensil or "")
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    seq.write(args.out)
    return 0


def cmd_run(args):
    log = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    return run_pipeline(args.config, log)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="callikit", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("decompose", help="extract a coarse stroke sequence from a glyph image")
    d.add_argument("--input", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--beam", type=int, default=8)
    d.add_argument("--phase", type=int, choices=(1, 2), default=2)
    d.add_argument("--lambda1", type=float, default=0.5)
    d.add_argument("--lambda2", type=float, default=0.5)
    d.add_argument("--threshold", type=float, default=0.5)
    d.add_argument("--report", help="also write the JSON report here")
    d.set_defaults(func=cmd_decompose)

    f = sub.add_parser("finetune", help="train a refinement policy and roll it out")
    f.add_argument("--input", required=True)
    f.add_argument("--strokes", required=True)
    f.add_argument("--out-dir", required=True)
    f.add_argument("--config")
    f.add_argument("--utensil", choices=KINDS)
    f.add_argument("--epochs", type=int)
    f.add_argument("--steps", type=int)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--trace", action="store_true", help="dump the refined episode as trace.csv")
    f.add_argument("--verbose", action="store_true")
    f.set_defaults(func=cmd_finetune)

    r = sub.add_parser("render", help="rasterize a stroke file or refined trajectory")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--strokes")
    src.add_argument("--refined")
    r.add_argument("--out", required=True)
    r.add_argument("--utensil", choices=KINDS)
    r.add_argument("--config")
    r.add_argument("--size", type=int, default=raster.DEFAULT_SIZE)
    r.add_argument("--points", type=int, default=32)
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("evaluate", help="compare a rendering with a reference glyph")
    e.add_argument("--pred", required=True)
    e.add_argument("--ref", required=True)
    e.add_argument("--gt-strokes", type=int)
    e.add_argument("--pred-strokes", type=int)
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("calibrate", help="fit pen height against stroke width")
    c.add_argument("--samples", required=True, help="CSV of z,width rows in mm")
    c.add_argument("--out")
    c.set_defaults(func=cmd_calibrate)

    x = sub.add_parser("export", help="write a plotter control sequence")
    x.add_argument("--refined", required=True)
    x.add_argument("--calib", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--origin-x", type=float, default=0.0)
    x.add_argument("--origin-y", type=float, default=0.0)
    x.add_argument("--scale", type=float, default=80.0, help="workspace side in mm")
    x.add_argument("--utensil", choices=KINDS)
    x.set_defaults(func=cmd_export)

    u = sub.add_parser("run", help="run the configured pipeline")
    u.add_argument("--config", required=True)
    u.add_argument("--verbose", action="store_true")
    u.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"callikit {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
