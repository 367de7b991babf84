import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from callikit.utensil import (BRUSH, FLAT_MARKER, FUDE_PEN, UtensilModel, UtensilState, dynamics_step,
                              footprint, width_to_z, z_to_width)

PX = 1.0 / 255.0


def pixels(fp):
    return set(zip(fp.rows.tolist(), fp.cols.tolist()))


def state(model, pose=(0.5, 0.5), heading=None, speed=0.0):
    return UtensilState(model, pose, model.theta if heading is None else heading, speed)


def test_model_validation():
    with pytest.raises(ValueError):
        UtensilModel("Quill")
    with pytest.raises(ValueError):
        UtensilModel(FUDE_PEN, r=0.5, r_max=0.1)
    with pytest.raises(ValueError):
        UtensilModel(BRUSH, r=0.05, l=0.01)
    assert UtensilModel(FUDE_PEN, theta=-math.pi / 2).theta == pytest.approx(1.5 * math.pi)


def test_model_dict_round_trip():
    m = UtensilModel(BRUSH, r=0.01, l=0.03, theta=1.0, drag=0.5, r_min=0.001, r_max=0.2)
    assert UtensilModel.from_dict(m.to_dict()) == m


def test_fude_disk_area():
    m = UtensilModel(FUDE_PEN, r=0.03, r_max=0.2)
    fp = footprint(state(m), 16 * PX)
    assert abs(len(fp) - math.pi * 64) / (math.pi * 64) < 0.05
    assert not fp.clamped


def test_marker_half_turn_symmetry():
    m = UtensilModel(FLAT_MARKER, r=0.01, l=0.06, r_max=0.2)
    for theta in (0.0, 0.3, 1.2, 2.9):
        a = footprint(state(m, heading=theta), 0.02)
        b = footprint(state(m, heading=theta + math.pi), 0.02)
        assert pixels(a) == pixels(b)


def test_marker_rectangle_area():
    m = UtensilModel(FLAT_MARKER, r=0.01, l=40 * PX, r_max=0.2)
    fp = footprint(state(m, heading=0.0), 10 * PX)
    # an axis-aligned 40 x 10 px rectangle covers between 40*10 and 41*11 pixel centres
    assert 40 * 10 <= len(fp) <= 41 * 11


def test_brush_at_rest_is_disk():
    brush = UtensilModel(BRUSH, r=0.02, l=0.06, r_max=0.2)
    pen = UtensilModel(FUDE_PEN, r=0.02, r_max=0.2)
    assert pixels(footprint(state(brush, speed=0.0), 0.04)) == pixels(footprint(state(pen), 0.04))


def test_brush_equal_axes_is_disk():
    brush = UtensilModel(BRUSH, r=0.02, l=0.02, r_max=0.2)
    pen = UtensilModel(FUDE_PEN, r=0.02, r_max=0.2)
    assert pixels(footprint(state(brush, heading=0.7, speed=1.0), 0.04)) == \
        pixels(footprint(state(pen), 0.04))


def test_brush_elongates_along_heading():
    brush = UtensilModel(BRUSH, r=0.01, l=0.05, r_max=0.2)
    fp = footprint(state(brush, heading=0.0, speed=1.0), 0.02)
    assert np.ptp(fp.cols) > 3 * np.ptp(fp.rows)


def test_width_clamped_flag():
    m = UtensilModel(FUDE_PEN, r=0.02, r_min=0.01, r_max=0.03)
    fp = footprint(state(m), 0.2)
    assert fp.clamped and fp.r == 0.03
    assert footprint(state(m), 0.001).clamped


@given(st.sampled_from([FUDE_PEN, FLAT_MARKER, BRUSH]), st.floats(0.0, 0.08), st.floats(0.0, 0.08),
       st.floats(0.0, 2 * math.pi), st.floats(0.0, 1.0))
def test_area_monotone_in_width(kind, w1, w2, heading, speed):
    m = UtensilModel(kind, r=0.01, l=0.05, r_max=0.5)
    lo, hi = sorted((w1, w2))
    s = state(m, heading=heading, speed=speed)
    assert len(footprint(s, lo)) <= len(footprint(s, hi))


@given(st.floats(0.0, 2 * math.pi), st.floats(0.0, 0.1))
def test_fude_ignores_theta(theta, w):
    m = UtensilModel(FUDE_PEN, r=0.01, r_max=0.5)
    assert pixels(footprint(state(m, heading=theta), w)) == pixels(footprint(state(m, heading=0.0), w))


def test_footprint_clipped_to_canvas():
    m = UtensilModel(FUDE_PEN, r=0.05, r_max=0.5)
    fp = footprint(state(m, pose=(0.0, 0.0)), 0.1)
    assert fp.rows.max() <= 255 and fp.cols.min() >= 0
    assert len(footprint(state(m, pose=(3.0, 3.0)), 0.1)) == 0


# ---- dynamics

def test_zero_motion_identity():
    s = state(UtensilModel(BRUSH, r=0.01, l=0.03), heading=1.0, speed=0.4)
    assert dynamics_step(s, (0.0, 0.0)) is s


def test_drag_one_aligns():
    s = state(UtensilModel(BRUSH, r=0.01, l=0.03, drag=1.0), heading=0.0)
    out = dynamics_step(s, (-0.01, 0.01))
    assert out.heading == pytest.approx(0.75 * math.pi)


def test_drag_half_geometric_decay():
    s = state(UtensilModel(BRUSH, r=0.01, l=0.03, drag=0.5), heading=math.pi / 2)
    errs = []
    for _ in range(20):
        s = dynamics_step(s, (0.01, 0.0))
        errs.append(min(s.heading, 2 * math.pi - s.heading))
    assert errs[0] == pytest.approx(math.pi / 4)
    assert all(b == pytest.approx(a / 2) for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-3


def test_other_kinds_keep_heading():
    for kind in (FUDE_PEN, FLAT_MARKER):
        s = state(UtensilModel(kind, r=0.01, l=0.03, theta=0.4))
        out = dynamics_step(s, (0.02, -0.01))
        assert out.heading == s.heading
        assert out.pose == pytest.approx((0.52, 0.49))


@given(st.floats(-0.1, 0.1), st.floats(-0.1, 0.1), st.sampled_from([FUDE_PEN, FLAT_MARKER, BRUSH]))
def test_dynamics_keeps_model(dx, dy, kind):
    m = UtensilModel(kind, r=0.01, l=0.03)
    out = dynamics_step(state(m), (dx, dy))
    assert out.model is m
    assert 0.0 <= out.heading < 2 * math.pi


def test_brush_speed_factor():
    s = state(UtensilModel(BRUSH, r=0.01, l=0.03))
    assert dynamics_step(s, (1 * PX, 0.0)).speed == pytest.approx(0.5)
    assert dynamics_step(s, (10 * PX, 0.0)).speed == 1.0


# ---- calibration mapping

def test_width_to_z_examples():
    assert width_to_z(4.0, (-2.0, 10.0)) == 6.0
    assert width_to_z(0.0, (-2.0, 10.0)) == 10.0
    with pytest.raises(ValueError):
        width_to_z(1.0, None)


@given(st.floats(0.0, 20.0), st.floats(-5, -0.1), st.floats(-20, 20))
def test_z_width_inverse(w, a, b):
    assert z_to_width(width_to_z(w, (a, b)), (a, b)) == pytest.approx(w, abs=1e-9)
