"""Acceptance suite: one test per criterion, each timed against its budget.

A summary line per criterion is printed at the end of the pytest run.
"""
import json
import math

import numpy as np
import pytest
from scipy.integrate import quad

from callikit import decompose as D
from callikit import glyphs, pipeline, raster, sac, toy
from callikit.env import CalliEnv, EnvConfig, episode_return, reward_adaptive, run_episode
from callikit.geometry import Point2, Polyline, StrokePrimitive, pen_up
from callikit.metrics import chamfer, chamfer_bruteforce, iou, snr
from callikit.utensil import BRUSH, FLAT_MARKER, FUDE_PEN, UtensilModel
from gradcheck import fd_grad, random_picks, rel_err, resolvable, skipped

BRUSH_TOOL = UtensilModel.from_dict(pipeline.DEFAULT_CONFIG["utensil"])
assert BRUSH_TOOL.kind == BRUSH


def seg(o0, o1, o2, pen=1):
    return StrokePrimitive(pen, Point2(*o0), Point2(*o1), Point2(*o2), 0.02, 0.02)


def glyph_and_graph(name):
    img, n_gt = glyphs.synthetic_glyph(name)
    mask = raster.binarize(img)
    graph = D.build_skeleton_graph(raster.thin(mask), raster.distance_transform(mask))
    return img, n_gt, graph


# 1 -------------------------------------------------------------------------

def test_criterion_01_loss_formulas(criterion):
    with criterion(1, "stroke loss formulas", 1.0) as c:
        straight = seg((0.1, 0.5), (0.3, 0.5), (0.5, 0.5))
        cusp = seg((0.2, 0.2), (0.6, 0.6), (0.2, 0.2))
        assert D.smoothness_term(straight) == 0.0
        assert D.smoothness_term(cusp) == 1.0
        assert D.loss_smo([straight, cusp]) == 1.0

        along = seg((0.5, 0.5), (0.45, 0.55), (0.4, 0.6))  # heading exactly along the start axis
        assert D.start_term(along) == 1.0
        assert D.loss_ang([along]) == 1.0
        assert D.loss_ang([along, straight]) == 0.5  # only the first segment starts a stroke
        assert D.loss_ang([along], T=4) == 0.25
        off = seg((0.5, 0.5), (0.55, 0.5), (0.6, 0.5))  # cosine with the axis is negative: gated
        assert D.loss_ang([off]) == 0.0

        assert D.loss_reg([1, 0, 1, 1]) == 0.25
        assert D.loss_reg([1, 1]) == 0.0
        assert D.loss_reg([straight, pen_up((0.5, 0.5), (0.2, 0.2)), cusp]) == 1 / 3
        c.note("all exact")


# 2 -------------------------------------------------------------------------

def split_in_two(stroke):
    if len(stroke) >= 2:
        h = len(stroke) // 2
        return [stroke[:h], stroke[h:]]
    (s,) = stroke
    m01 = Point2((s.o0.x + s.o1.x) / 2, (s.o0.y + s.o1.y) / 2)
    m12 = Point2((s.o1.x + s.o2.x) / 2, (s.o1.y + s.o2.y) / 2)
    mid = Point2((m01.x + m12.x) / 2, (m01.y + m12.y) / 2)
    wm = (s.w0 + s.w1) / 2
    return [[StrokePrimitive(1, s.o0, m01, mid, s.w0, wm)], [StrokePrimitive(1, mid, m12, s.o2, wm, s.w1)]]


def test_criterion_02_one_stroke_beats_split(criterion):
    with criterion(2, "one-stroke bar beats its 2-stroke split", 10.0) as c:
        img, _, graph = glyph_and_graph("bar")
        one = D.trace_strokes(graph, img)
        assert one.stroke_count == 1
        two = D.Decomposition(split_in_two(one.strokes[0]))
        margins = []
        for lam2 in (0.1, 0.3, 0.5):
            w = D.LossWeights(0.5, lam2)
            l1, l2 = D.composite_loss(one, img, w), D.composite_loss(two, img, w)
            assert l1 < l2
            margins.append(l2 - l1)
        c.note("margins " + ", ".join(f"{m:.4f}" for m in margins))


# 3 -------------------------------------------------------------------------

def test_criterion_03_beam_matches_exhaustive(criterion):
    with criterion(3, "beam search equals exhaustive argmin", 120.0) as c:
        weights = D.LossWeights()
        counts = {}
        for name in ("plus", "T", "L", "X"):
            img, n_gt, graph = glyph_and_graph(name)
            proxy = D.PerceptualProxy().seeded(img)
            scored = []
            for choice in D.exhaustive_candidates(graph):
                dec = D.build_decomposition(graph, choice)
                scored.append((D.composite_loss(dec, img, weights, proxy=proxy), dec))
            best = min(s for s, _ in scored)
            winners = [d.strokes for s, d in scored if s == best]
            for beam in (8, 12):
                got = D.trace_strokes(graph, img, weights, beam=beam)
                assert D.composite_loss(got, img, weights, proxy=proxy) == best
                assert got.strokes in winners
            counts[name] = (got.stroke_count, n_gt, len(scored))
        assert counts["plus"][0] == 2 and snr(counts["plus"][0], counts["plus"][1]) == 1.0
        c.note(" ".join(f"{k}:N_s={v[0]}/{v[1]} ({v[2]} cands)" for k, v in counts.items()))


# 4 -------------------------------------------------------------------------

def test_criterion_04_reward_suite(criterion):
    with criterion(4, "reward examples and episode accounting", 30.0) as c:
        assert reward_adaptive(0.5, 3.0, 3.0, (9, 9, 0)) == 0.0
        assert reward_adaptive(0.5, 1.0, 2.0, (9, 9, 0), EnvConfig(r_max=100.0)) == -5.0
        assert reward_adaptive(0.9, 1.0, 2.0, (40, 30, 10)) == 0.5

        # a glyph that is exactly the coarse rendering: zero actions reproduce it perfectly
        img, _ = glyphs.synthetic_glyph("plus")
        dec, _ = D.decompose_glyph(img)
        pen = UtensilModel(FUDE_PEN, r=0.01, r_max=0.5)
        cfg = EnvConfig(n=8)
        perfect = raster.render_strokes(dec.sequence(), pen, points_per_stroke=cfg.n)
        env = CalliEnv(pen, cfg)
        run_episode(env, glyph=perfect, coarse=dec)
        assert env.r_fin == 80.0

        rng = np.random.default_rng(0)
        env = CalliEnv(BRUSH_TOOL, cfg)
        worst = 0.0
        for _ in range(100):
            env.reset(img, dec)
            acc, done = 0.0, False
            while not done:
                _, r, done = env.step(rng.uniform(-0.03, 0.03, 2))
                acc += r
            worst = max(worst, abs(acc - episode_return(env.r_ada, env.r_fin)))
        assert worst < 1e-9
        c.note(f"max accounting gap {worst:.1e}")


# 5 -------------------------------------------------------------------------

def test_criterion_05_zero_action_fidelity(criterion):
    with criterion(5, "zero-action episodes reproduce the coarse rendering", 10.0) as c:
        marker = UtensilModel(FLAT_MARKER, r=0.005, l=0.03, r_max=0.2)
        checked = 0
        for name in glyphs.FINETUNE_SET:
            img, _ = glyphs.synthetic_glyph(name)
            dec, _ = D.decompose_glyph(img)
            tools = [BRUSH_TOOL] + ([marker, UtensilModel(FUDE_PEN, r=0.01, r_max=0.5)] if name == "plus" else [])
            for tool in tools:
                env = CalliEnv(tool)
                _, canvas = run_episode(env, glyph=img, coarse=dec)
                direct = raster.render_strokes(dec.sequence(), tool, points_per_stroke=env.config.n)
                assert np.array_equal(canvas, direct), (name, tool.kind)
                checked += 1
        c.note(f"{checked} episodes pixel-identical")


# 6 -------------------------------------------------------------------------

def directional_check(f, params, grads, rng, relu, trials=8, h=1e-5):
    """Directional derivatives along random unit directions through every parameter at once."""
    errs = []
    for _ in range(trials):
        dirs = [rng.normal(size=p.shape) for p in params]
        norm = math.sqrt(sum(float((d * d).sum()) for d in dirs))
        dirs = [d / norm for d in dirs]
        _, base = relu.run(f)
        for p, d in zip(params, dirs):
            p += h * d
        up, pu = relu.run(f)
        for p, d in zip(params, dirs):
            p -= 2 * h * d
        down, pd = relu.run(f)
        for p, d in zip(params, dirs):
            p += h * d
        if pu != base or pd != base:
            continue
        num = (up - down) / (2 * h)
        ana = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
        errs.append(abs(num - ana) / max(abs(num), abs(ana), 1e-6))
    assert len(errs) >= trials // 2
    return max(errs)


def test_criterion_06_sac_gradients(criterion, relu):
    with criterion(6, "SAC gradients and squashed log-density", 60.0) as c:
        rng = np.random.default_rng(42)
        cfg = sac.SacConfig(dtype="float64")
        agent = sac.SacAgent(9, 2, [0.02, 0.02], cfg, rng)
        s = rng.normal(size=(4, 9))
        u = rng.uniform(-0.9, 0.9, (4, 2))
        batch = (s, u, rng.normal(size=4), rng.normal(size=(4, 9)), np.array([0.0, 1.0, 0.0, 0.0]))
        xi2 = rng.normal(size=(4, 2))
        _, g1, g2 = agent.critic_loss_grads(batch, xi2)
        f_c = lambda: agent.critic_loss_grads(batch, xi2)[0]
        qparams = agent.q1.params + agent.q2.params
        picks = random_picks(qparams, 150, rng)
        num = fd_grad(f_c, qparams, picks=picks, relu=relu)
        assert skipped(num) < 0.05
        floor = resolvable(f_c())
        critic_err = max(rel_err(g.reshape(-1)[pk], n, floor) for g, n, pk in zip(g1 + g2, num, picks))
        critic_dir = directional_check(f_c, qparams, g1 + g2, rng, relu)

        xi = rng.normal(size=(4, 2))
        _, ga = agent.actor_loss_grads(s, xi)
        f_a = lambda: agent.actor_loss_grads(s, xi)[0]
        num = fd_grad(f_a, agent.actor.params, relu=relu)  # every actor parameter
        assert skipped(num) < 0.05
        actor_err = max(rel_err(g, n, resolvable(f_a())) for g, n in zip(ga, num))
        actor_dir = directional_check(f_a, agent.actor.params, ga, rng, relu)
        assert max(critic_err, critic_dir, actor_err, actor_dir) < 1e-4

        mass = []
        for mu, log_std, bound in [(0.0, 0.0, 0.02), (0.8, -1.0, 0.02), (-1.2, 0.7, 0.02), (0.3, -2.5, 1.0)]:
            total, _ = quad(lambda a: math.exp(sac.squashed_log_prob(a, mu, log_std, bound)), -bound, bound,
                            limit=400, points=[bound * math.tanh(mu)])
            mass.append(total)
        assert all(abs(m - 1.0) < 0.01 for m in mass)
        c.note(f"critic {max(critic_err, critic_dir):.1e}, actor {max(actor_err, actor_dir):.1e}, "
               f"mass {min(mass):.4f}..{max(mass):.4f}")


# 7 -------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_07_sac_learns_toy(criterion):
    with criterion(7, "SAC closes the offset-tracking gap", 900.0) as c:
        cfg = sac.SacConfig(epochs=30, steps_per_epoch=1000)
        gaps = []
        for seed in range(3):
            res = sac.train(toy.OffsetTrackingEnv, cfg, seed)
            env = toy.OffsetTrackingEnv(1000 + seed)
            ret = sac.evaluate(res.agent, env, 100)
            gaps.append((ret - env.random_return) / (env.optimal_return - env.random_return))
        c.note("gap closed per seed " + ", ".join(f"{g:.3f}" for g in gaps))
        assert np.mean(gaps) >= 0.5


# 8 -------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_08_finetune_improves_iou(criterion):
    with criterion(8, "brush fine-tuning raises mean terminal IoU", 3600.0) as c:
        env_cfg = EnvConfig()
        data = []
        for name in glyphs.FINETUNE_SET:
            img, _ = glyphs.synthetic_glyph(name)
            dec, _ = D.decompose_glyph(img)
            data.append((img, dec))
        base = [pipeline.refine(None, g, d, BRUSH_TOOL, env_cfg)[0].r_fin / 80 for g, d in data]
        res = pipeline.finetune(data, BRUSH_TOOL, env_cfg, sac.SacConfig(epochs=20, steps_per_epoch=2000), 0)
        tuned = [pipeline.refine(res.agent, g, d, BRUSH_TOOL, env_cfg)[0].r_fin / 80 for g, d in data]
        c.note(f"IoU {np.mean(base):.4f} -> {np.mean(tuned):.4f}")
        assert np.mean(tuned) >= np.mean(base) + 0.02


# 9 -------------------------------------------------------------------------

def test_criterion_09_metrics(criterion):
    with criterion(9, "metrics against brute force and arithmetic", 30.0) as c:
        rng = np.random.default_rng(9)
        for trial in range(200):
            na, nb = rng.integers(1, 201, 2)
            if trial % 2:
                a, b = rng.integers(0, 256, (na, 2)), rng.integers(0, 256, (nb, 2))
            else:
                a, b = rng.uniform(0, 256, (na, 2)), rng.uniform(0, 256, (nb, 2))
            assert chamfer(a, b) == chamfer_bruteforce(a, b)
        assert chamfer([[0, 0]], [[3, 4]]) == 50.0
        sq = np.zeros((30, 30), bool)
        sq[5:15, 5:15] = True
        sh = np.zeros_like(sq)
        sh[5:15, 10:20] = True
        assert iou(sq, sq) == 1.0 and iou(sq, sh) == 50 / 150 and iou(sq, ~sq) == 0.0
        assert snr(12, 10) == 1.2 and snr(4, 4) == 1.0
        c.note("200 random pairs exact")


# 10 ------------------------------------------------------------------------

def test_criterion_10_calibration_export_run(criterion, tmp_path):
    with criterion(10, "calibration, control CSV and deterministic full run", 600.0) as c:
        calib = pipeline.fit_z_r([(10.0 - 2.0 * r, 2.0 * r) for r in (1.0, 2.0, 3.0)])
        assert abs(calib.a + 2.0) < 1e-9 and abs(calib.b - 10.0) < 1e-9

        rng = np.random.default_rng(10)
        paths = [Polyline(rng.uniform(0, 1, (12, 2)), rng.uniform(0, 0.05, 12), 1) for _ in range(3)]
        seq = pipeline.export_control(paths, calib, (12.5, -3.0), 80.0, BRUSH)
        seq.write(tmp_path / "control.csv")
        back = pipeline.ControlSequence.read(tmp_path / "control.csv")
        assert back == seq and back.to_csv() == seq.to_csv()

        img, n_gt = glyphs.synthetic_glyph("plus")
        raster.save_image(img, tmp_path / "plus.png")
        outs = []
        for tag in ("a", "b"):
            cfg = pipeline.parse_config(pipeline.dumps_config(pipeline.DEFAULT_CONFIG))
            cfg.update(seed=7, input=str(tmp_path / "plus.png"), output=str(tmp_path / tag), gt_strokes=n_gt)
            cfg["sac"].update(epochs=3, steps_per_epoch=4000)
            assert pipeline.run_pipeline(cfg) == 0
            outs.append(tmp_path / tag)
        names = {"strokes.txt", "curve.csv", "refined.txt", "policy.ckpt", "render.png", "control.csv",
                 "metrics.json"}
        assert {p.name for p in outs[0].iterdir()} == names
        for name in names:
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
        m = json.loads((outs[0] / "metrics.json").read_text())
        c.note(f"N_s={m['decompose']['n_strokes']}, IoU coarse {m['coarse']['iou']:.3f} "
               f"refined {m['refined']['iou']:.3f}")
