import json
import subprocess
import sys

import numpy as np
import pytest

from callikit import glyphs, raster
from callikit.cli import main
from callikit.geometry import load_strokes
from callikit.pipeline import ControlSequence


@pytest.fixture
def plus_png(tmp_path):
    img, _ = glyphs.synthetic_glyph("plus")
    path = tmp_path / "plus.png"
    raster.save_image(img, path)
    return path


def report(capsys):
    return json.loads(capsys.readouterr().out)


def test_decompose_render_evaluate(tmp_path, plus_png, capsys):
    strokes = tmp_path / "s.txt"
    assert main(["decompose", "--input", str(plus_png), "--out", str(strokes)]) == 0
    assert report(capsys)["N_s"] == 2
    assert len([s for s in load_strokes(strokes) if s.pen]) >= 2

    png = tmp_path / "r.png"
    assert main(["render", "--strokes", str(strokes), "--out", str(png), "--utensil", "FudePen"]) == 0
    assert raster.load_image(png).shape == (256, 256)

    assert main(["evaluate", "--pred", str(png), "--ref", str(plus_png), "--gt-strokes", "2",
                 "--pred-strokes", "2"]) == 0
    out = report(capsys)
    assert out["snr"] == 1.0 and 0.5 < out["iou"] <= 1.0 and out["chamfer"] >= 0.0


def test_calibrate_and_export(tmp_path, capsys):
    samples = tmp_path / "s.csv"
    samples.write_text("z,width\n8,2\n6,4\n4,6\n")
    calib = tmp_path / "calib.json"
    assert main(["calibrate", "--samples", str(samples), "--out", str(calib)]) == 0
    fit = report(capsys)
    assert fit["a"] == pytest.approx(-2.0) and fit["b"] == pytest.approx(10.0)

    refined = tmp_path / "refined.txt"
    refined.write_text("0 0.5 0.5 0.0\n0 0.6 0.5 0.025\n1 0.2 0.2 0.01\n1 0.2 0.3 0.01\n")
    control = tmp_path / "control.csv"
    assert main(["export", "--refined", str(refined), "--calib", str(calib), "--out", str(control),
                 "--origin-x", "10", "--scale", "80"]) == 0
    seq = ControlSequence.read(control)
    assert seq.rows[0][1:4] == pytest.approx((50.0, 40.0, 10.0))
    assert [r[4] for r in seq.rows] == [1, 1, 0, 0, 1, 1]


def test_finetune_smoke(tmp_path, plus_png, capsys):
    strokes = tmp_path / "s.txt"
    assert main(["decompose", "--input", str(plus_png), "--out", str(strokes)]) == 0
    capsys.readouterr()
    out = tmp_path / "ft"
    assert main(["finetune", "--input", str(plus_png), "--strokes", str(strokes), "--out-dir", str(out),
                 "--epochs", "1", "--steps", "70", "--trace"]) == 0
    res = report(capsys)
    assert 0.0 <= res["iou"] <= 1.0
    for name in ("curve.csv", "policy.ckpt", "refined.txt", "trace.csv"):
        assert (out / name).exists()
    png = tmp_path / "ref.png"
    assert main(["render", "--refined", str(out / "refined.txt"), "--out", str(png)]) == 0


def test_run_subcommand(tmp_path, plus_png):
    cfg = tmp_path / "c.toml"
    cfg.write_text('input = "plus.png"\noutput = "out"\n[stages]\nfinetune = false\n')
    assert main(["run", "--config", str(cfg)]) == 0
    assert (tmp_path / "out" / "control.csv").exists()


def test_errors_exit_2(tmp_path, capsys):
    assert main(["decompose", "--input", str(tmp_path / "nope.png"), "--out", str(tmp_path / "s")]) == 2
    assert "nope.png" in capsys.readouterr().err
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n")
    assert main(["calibrate", "--samples", str(bad)]) == 2


def test_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["decompose"])
    assert exc.value.code == 2


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "callikit", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("decompose", "finetune", "render", "evaluate", "calibrate", "export", "run"):
        assert cmd in out.stdout


def test_threads_env_var(tmp_path, plus_png, capsys, monkeypatch):
    monkeypatch.setenv("CALLIKIT_THREADS", "1")
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    assert main(["decompose", "--input", str(plus_png), "--out", str(a)]) == 0
    monkeypatch.setenv("CALLIKIT_THREADS", "3")
    assert main(["decompose", "--input", str(plus_png), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    monkeypatch.setenv("CALLIKIT_THREADS", "zero")
    assert main(["decompose", "--input", str(plus_png), "--out", str(b)]) == 2
