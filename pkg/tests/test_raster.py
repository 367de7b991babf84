import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image
from scipy import ndimage

from callikit import glyphs, raster
from callikit.geometry import Point2, Polyline, StrokePrimitive
from callikit.utensil import FUDE_PEN, UtensilModel

PEN = UtensilModel(FUDE_PEN, r=0.02, l=0.02, r_max=0.2)


def components(mask):
    return ndimage.label(mask, structure=np.ones((3, 3)))[1]


def neighbour_counts(sk):
    k = np.ones((3, 3), int)
    k[1, 1] = 0
    return ndimage.convolve(sk.astype(int), k, mode="constant")


# ---- coordinates

def test_canvas_pixel_round_trip():
    pts = np.array([[0.0, 0.0], [1.0, 1.0], [0.25, 0.75]])
    px = raster.canvas_to_pixel(pts)
    assert np.allclose(px[0], [0, 255]) and np.allclose(px[1], [255, 0])
    assert np.allclose(raster.pixel_to_canvas(px), pts)


def test_check_image_rejects():
    with pytest.raises(ValueError):
        raster.check_image(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        raster.check_image(np.full((8, 8), 1.5))


# ---- I/O

@pytest.mark.parametrize("suffix", [".png", ".pgm"])
def test_image_round_trip(tmp_path, suffix):
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, (16, 20)) / 255.0
    path = tmp_path / f"g{suffix}"
    raster.save_image(img, path)
    assert np.array_equal(raster.load_image(path), img)


def test_pgm_is_binary_p5(tmp_path):
    path = tmp_path / "g.pgm"
    raster.save_image(np.zeros((8, 8)), path)
    assert path.read_bytes()[:2] == b"P5"


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        raster.load_image(tmp_path / "nope.png")


def test_sixteen_bit_rejected(tmp_path):
    path = tmp_path / "deep.png"
    Image.fromarray(np.zeros((8, 8), dtype=np.uint16)).save(path)
    with pytest.raises(ValueError, match="bit depth"):
        raster.load_image(path)


# ---- binarize

def test_binarize_examples():
    assert not raster.binarize(np.zeros((8, 8))).any()
    img = np.full((8, 8), 0.4)
    img[0, 0] = 0.6
    m = raster.binarize(img, 0.5)
    assert m.sum() == 1 and m[0, 0]
    assert np.array_equal(raster.binarize(raster.mask_to_image(m), 0.5), m)


@pytest.mark.parametrize("t", [0.0, 1.0, -0.2])
def test_binarize_threshold_range(t):
    with pytest.raises(ValueError):
        raster.binarize(np.zeros((8, 8)), t)


# ---- rendering

def seg(o0, o2, w=0.04, pen=1):
    mid = ((o0[0] + o2[0]) / 2, (o0[1] + o2[1]) / 2)
    return StrokePrimitive(pen, Point2(*o0), Point2(*mid), Point2(*o2), w, w)


def test_render_empty_and_pen_up():
    assert not raster.render_strokes([], PEN).any()
    assert not raster.render_strokes([seg((0.1, 0.1), (0.9, 0.9), pen=0)], PEN).any()


def test_render_zero_length_disk():
    r_px = 8.0
    w = 2 * r_px / 255
    s = StrokePrimitive(1, Point2(0.5, 0.5), Point2(0.5, 0.5), Point2(0.5, 0.5), w, w)
    count = raster.render_strokes([s], PEN).sum()
    assert abs(count - math.pi * 64) / (math.pi * 64) < 0.05


def test_render_order_insensitive():
    a = [seg((0.1, 0.2), (0.8, 0.7))]
    b = [seg((0.2, 0.9), (0.6, 0.1), 0.02)]
    c = [seg((0.3, 0.3), (0.35, 0.8), 0.06)]
    ref = raster.render_strokes(a + b + c, PEN)
    assert np.array_equal(ref, raster.render_strokes(c + a + b, PEN))
    assert np.array_equal(ref, raster.render_strokes(b + c + a, PEN))


def test_render_offcanvas_clipped():
    img = raster.render_strokes([seg((-0.2, 0.5), (1.3, 0.5))], PEN)
    assert img[:, 0].any() and img[:, -1].any()


def test_single_stamp_area_matches_footprint():
    canvas = raster.blank()
    stamper = raster.Stamper(canvas, PEN)
    fp = stamper.begin((0.5, 0.5), 0.05)
    assert canvas.sum() == len(fp)


def test_stamp_spacing_leaves_no_gaps():
    # a long fast segment still produces one connected band
    img = raster.render_polylines([Polyline([[0.1, 0.5], [0.9, 0.5]], 0.02, 1)], PEN)
    assert components(img > 0) == 1
    assert img[128, 30:225].all()


# ---- thinning

def test_thin_bar():
    m = np.zeros((12, 30), bool)
    m[4:8, 5:25] = True
    sk = raster.thin(m)
    rows, cols = np.nonzero(sk)
    assert len(np.unique(rows)) == 1
    assert cols.min() <= 5 + 2 and cols.max() >= 24 - 2
    assert np.all(neighbour_counts(sk)[sk] <= 2)


def test_thin_trivial():
    assert not raster.thin(np.zeros((8, 8), bool)).any()
    m = np.zeros((8, 8), bool)
    m[3, 4] = True
    assert np.array_equal(raster.thin(m), m)


@pytest.mark.parametrize("name", glyphs.FINETUNE_SET)
@pytest.mark.parametrize("width", [6, 14, 24])
def test_thin_corpus(name, width):
    img, _ = glyphs.synthetic_glyph(name, width)
    mask = raster.binarize(img)
    sk = raster.thin(mask)
    assert np.all(mask[sk])
    assert components(sk) == components(mask)
    # one pixel wide: no 2x2 block of skeleton pixels
    blocks = sk[:-1, :-1] & sk[1:, :-1] & sk[:-1, 1:] & sk[1:, 1:]
    assert not blocks.any()


# ---- distance transform

def test_dt_disk():
    yy, xx = np.mgrid[:41, :41]
    disk = (yy - 20) ** 2 + (xx - 20) ** 2 <= 100
    dt = raster.distance_transform(disk)
    assert 9 <= dt[20, 20] <= 10.5
    assert np.all(dt[~disk] == 0)


def test_dt_all_foreground_uses_border():
    dt = raster.distance_transform(np.ones((9, 9), bool))
    assert dt[4, 4] == 5.0 and dt[0, 0] == 1.0


@settings(max_examples=30, deadline=None)
@given(arrays(bool, (32, 32), elements=st.booleans()))
def test_dt_matches_bruteforce(mask):
    dt = raster.distance_transform(mask)
    padded = np.pad(mask, 1)
    bg = np.argwhere(~padded) - 1
    fg = np.argwhere(mask)
    if len(fg):
        d = np.sqrt(((fg[:, None, :] - bg[None, :, :]) ** 2).sum(-1)).min(axis=1)
        assert np.array_equal(dt[mask], d)


# ---- contours

def test_contour_examples():
    m = np.zeros((20, 20), bool)
    m[5:15, 5:15] = True
    assert len(raster.extract_contour(m)) == 36
    assert len(raster.extract_contour(np.zeros((8, 8), bool))) == 0
    one = np.zeros((8, 8), bool)
    one[2, 5] = True
    assert raster.extract_contour(one).tolist() == [[5, 2]]


def test_contour_csv(tmp_path):
    path = tmp_path / "c.csv"
    raster.save_contour_csv(np.array([[1, 2], [3, 4]]), path)
    assert path.read_text() == "x,y\n1,2\n3,4\n"
