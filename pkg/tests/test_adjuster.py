import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from baa.adjuster import (BaaParams, baa_weight, baa_weight_grad, hard_adjuster, limit_adjuster,
                          masked_distance)
from baa.dwf import DomainError
from oracles import mp_baa_grad, rel_err

DEFAULT = BaaParams.make(thr=0.7, thr_dev=0.2, b=16)
F_01 = 0.83201838513392448
DF_01 = -3.3676157272471156


@pytest.mark.parametrize("pred, gt, md", [(0.5, 0, 0.2), (0.5, 1, -0.2), (0.7, 1, 0.0), (0.7, 0, 0.0)])
def test_masked_distance(pred, gt, md):
    assert masked_distance(pred, gt, 0.7) == pytest.approx(md, abs=1e-15)


def test_masked_distance_domain():
    with pytest.raises(DomainError):
        masked_distance(1.2, 1, 0.7)
    with pytest.raises(DomainError):
        masked_distance(0.5, -0.1, 0.7)


def test_masked_distance_range_is_signed():
    pred = np.linspace(0, 1, 101)
    for gt in (0.0, 1.0):
        md = masked_distance(pred, np.full_like(pred, gt), 0.7)
        assert md.min() >= -0.7 - 1e-12 and md.max() <= 0.7 + 1e-12
        assert md.min() < 0


def test_weight_examples():
    assert baa_weight(0.2, 1, DEFAULT) == 1.0
    assert baa_weight(0.05, 0, DEFAULT) == 0.0
    assert baa_weight(0.8, 1, DEFAULT) == pytest.approx(F_01, rel=1e-12)
    assert baa_weight(0.7, 1, DEFAULT) == 1.0


def test_weight_grad_examples():
    assert baa_weight_grad(0.2, 1, DEFAULT) == 0.0
    assert baa_weight_grad(0.8, 1, DEFAULT) == pytest.approx(DF_01, rel=1e-8)
    assert baa_weight_grad(0.6, 0, DEFAULT) == pytest.approx(-DF_01, rel=1e-8)


@pytest.mark.parametrize("pred, gt, expected", [(0.9, 1, 0), (0.5, 1, 1), (0.7, 0, 0), (0.1, 0, 0), (0.8, 0, 1)])
def test_hard_adjuster(pred, gt, expected):
    assert hard_adjuster(pred, gt, 0.7) == expected


@pytest.mark.parametrize("pred, gt, expected", [(0.95, 1, 0), (0.8, 1, 1), (0.5, 1, 1), (0.4, 0, 0), (0.6, 0, 1)])
def test_limit_adjuster(pred, gt, expected):
    assert limit_adjuster(pred, gt, 0.7, 0.2) == expected


def test_baa_params_validation():
    with pytest.raises(DomainError):
        BaaParams.make(thr=1.5)
    with pytest.raises(DomainError):
        BaaParams.make(kind="cubic")


baa_params = st.builds(
    BaaParams.make,
    thr=st.floats(0.05, 0.95),
    thr_dev=st.floats(0.02, 0.8),
    b=st.floats(0.1, 64.0),
    kind=st.sampled_from(["exp", "linear"]),
)


@settings(max_examples=300, deadline=None)
@given(baa_params, st.floats(0, 1), st.sampled_from([0.0, 1.0]))
def test_conditions_c1_c2_c5(p, pred, gt):
    w = baa_weight(pred, gt, p)
    assert 0.0 <= w <= 1.0
    h = 1e-8
    other = min(pred + h, 1.0)
    assert abs(baa_weight(other, gt, p) - w) <= 1e-6
    if pred != p.thr and (pred > p.thr) != (gt > p.thr):
        assert w == 1.0


@settings(max_examples=300, deadline=None)
@given(baa_params, st.floats(0, 1), st.floats(0, 1), st.sampled_from([0.0, 1.0]))
def test_c3_monotone_in_confidence(p, u, v, gt):
    # two correct predictions on gt's side, ordered by distance to thr
    side = (1.0 - p.thr) if gt == 1 else p.thr
    d1, d2 = sorted((u * side, v * side))
    sign = 1 if gt == 1 else -1
    w1 = baa_weight(p.thr + sign * d1, gt, p)
    w2 = baa_weight(p.thr + sign * d2, gt, p)
    assert w1 >= w2


@settings(max_examples=200, deadline=None)
@given(baa_params, st.floats(0, 1), st.sampled_from([0.0, 1.0]))
def test_weight_grad_matches_finite_difference(p, pred, gt):
    dist = abs(pred - p.thr)
    if dist < 1e-3 or abs(dist - p.dwf.thr_dev) < 1e-3 or not 1e-3 < pred < 1 - 1e-3:
        return
    fd = mp_baa_grad(pred, gt, p.thr, p.dwf.thr_dev, p.dwf.b, p.kind, 1e-6)
    assert rel_err(baa_weight_grad(pred, gt, p), fd, floor=1e-300) <= 1e-5


def _grid_away_from_kinks(thr, thr_dev, margin=0.01):
    pred = np.linspace(0, 1, 2001)
    keep = np.abs(np.abs(pred - thr) - thr_dev) >= margin
    return pred[keep]


@pytest.mark.parametrize("thr, thr_dev", [(0.7, 0.2), (0.5, 0.1), (0.3, 0.4)])
def test_large_decay_matches_limit_adjuster(thr, thr_dev):
    p = BaaParams.make(thr=thr, thr_dev=thr_dev, b=1e4)
    pred = _grid_away_from_kinks(thr, thr_dev)
    for gt in (0.0, 1.0):
        g = np.full_like(pred, gt)
        np.testing.assert_allclose(baa_weight(pred, g, p), limit_adjuster(pred, g, thr, thr_dev), atol=1e-6)


@pytest.mark.parametrize("thr", [0.3, 0.5, 0.7])
def test_vanishing_window_matches_hard_adjuster(thr):
    p = BaaParams.make(thr=thr, thr_dev=1e-9, b=1e4)
    pred = np.linspace(0, 1, 2001)
    pred = pred[np.abs(pred - thr) >= 0.01]
    for gt in (0.0, 1.0):
        g = np.full_like(pred, gt)
        np.testing.assert_allclose(baa_weight(pred, g, p), hard_adjuster(pred, g, thr), atol=1e-6)
