import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gupkit.geometry import CameraModel, amplification_gain
from gupkit.gup import (
    GupInputs,
    compose_depth,
    depth_loss,
    depth_loss_and_grad,
    depth_loss_grad,
    fuse_scores,
    predict,
    project_distribution,
    uncertainty_confidence,
)
from gupkit.laplace import LaplaceDist
from oracles import central_diff, depth_loss_mp

pos = st.floats(1e-3, 1e3, allow_nan=False)


def _inputs(f=707.0, h2d=17.675, mu_h=1.5, sigma_h=0.1, mu_b=0.0, sigma_b=1.0):
    return GupInputs(LaplaceDist(mu_h, sigma_h), h2d, LaplaceDist(mu_b, sigma_b), CameraModel(f))


@pytest.mark.parametrize(
    "f, h2d, mu_h, sigma_h, expected",
    [
        (707.0, 17.675, 1.5, 0.1, (60.0, 4.0)),
        (33.0, 33.0, 1.7, 0.2, (1.7, 0.2)),
        (707.0, 35.35, 1.5, 0.1, (30.0, 2.0)),
    ],
)
def test_project_distribution(f, h2d, mu_h, sigma_h, expected):
    d = project_distribution(_inputs(f, h2d, mu_h, sigma_h))
    assert (d.mu, d.sigma) == pytest.approx(expected, rel=1e-12)


def test_project_distribution_rejects_bad_h2d():
    with pytest.raises(ValueError):
        _inputs(h2d=0.0)


def test_compose_depth():
    assert compose_depth(LaplaceDist(60, 3), LaplaceDist(0.5, 4)) == LaplaceDist(60.5, 5)
    d = compose_depth(LaplaceDist(30, 2), LaplaceDist(-1, 1.5))
    assert (d.mu, d.sigma) == pytest.approx((29.0, 2.5))
    d = compose_depth(LaplaceDist(12.0, 0.8), LaplaceDist(0.0, 1e-12))
    assert (d.mu, d.sigma) == pytest.approx((12.0, 0.8), rel=1e-12)


@pytest.mark.parametrize(
    "mu_d, sigma_d, d_gt, expected",
    [(20.0, 1.0, 20.0, 0.0), (21.0, 1.0, 20.0, math.sqrt(2)), (20.0, math.e**2, 20.0, 2.0)],
)
def test_depth_loss(mu_d, sigma_d, d_gt, expected):
    assert depth_loss(LaplaceDist(mu_d, sigma_d), d_gt) == pytest.approx(expected, abs=1e-14)


def test_worked_example_prediction():
    p = predict(_inputs(mu_h=1.5, sigma_h=0.1, sigma_b=0.1))
    assert p.depth_dist.mu == pytest.approx(60.0, rel=1e-12)
    assert p.depth_dist.sigma == pytest.approx(4.001249804748511, rel=1e-12)
    assert p.confidence == pytest.approx(math.exp(-4.001249804748511), rel=1e-12)


@given(pos, pos, st.floats(-3, 3), pos, pos)
def test_projected_sigma_is_gain_times_sigma_h(f, h2d, mu_h, sigma_h, sigma_b):
    inp = _inputs(f, h2d, mu_h, sigma_h, 0.0, sigma_b)
    p = predict(inp)
    assert p.projected_dist.sigma == pytest.approx(amplification_gain(inp.cam, h2d) * sigma_h, rel=1e-12)
    assert p.depth_dist.sigma**2 - p.projected_dist.sigma**2 == pytest.approx(sigma_b**2, rel=1e-9, abs=1e-12 * p.depth_dist.sigma**2)
    assert 0 <= p.confidence <= 1


def test_grad_zero_residual():
    # sigma_p == sigma_b and mu_d == d_gt
    g = depth_loss_grad(_inputs(mu_h=1.5, sigma_h=0.1, mu_b=0.0, sigma_b=4.0), 60.0)
    assert g.mu_h == 0.0 and g.mu_b == 0.0


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b))


def test_grad_matches_finite_differences():
    rng = np.random.default_rng(123)
    checked = 0
    while checked < 1000:
        f = rng.uniform(300, 1500)
        h2d = rng.uniform(5, 300)
        mu_h = rng.uniform(0.5, 2.5)
        ls_h = rng.uniform(-5, 0.5)
        mu_b = rng.uniform(-3, 3)
        ls_b = rng.uniform(-3, 1.5)
        d_gt = rng.uniform(3, 90)
        mu_d = f * mu_h / h2d + mu_b
        if abs(mu_d - d_gt) < 1e-4:
            continue
        _, g = depth_loss_and_grad(f, mu_h, ls_h, mu_b, ls_b, h2d, d_gt)
        args = (f, mu_h, ls_h, mu_b, ls_b, h2d, d_gt)
        for name, idx in (("mu_h", 1), ("log_sigma_h", 2), ("mu_b", 3), ("log_sigma_b", 4), ("h2d", 5)):
            num = float(central_diff(depth_loss_mp, args, idx))
            assert _rel(float(getattr(g, name)), num) < 1e-6, (name, args)
        checked += 1


def test_large_bias_sigma_silences_height_uncertainty():
    grads = [
        abs(depth_loss_grad(_inputs(mu_h=1.4, sigma_h=0.1, sigma_b=sb), 60.0).log_sigma_h)
        for sb in (1.0, 10.0, 100.0, 1000.0)
    ]
    assert grads == sorted(grads, reverse=True)
    assert grads[-1] < 1e-4


@pytest.mark.parametrize(
    "sigma, expected", [(1e-9, 1 - 1e-9), (1.0, 0.367879441171442321595), (math.log(2), 0.5)]
)
def test_uncertainty_confidence(sigma, expected):
    assert uncertainty_confidence(sigma) == pytest.approx(expected, rel=1e-12)


def test_uncertainty_confidence_domain():
    with pytest.raises(ValueError):
        uncertainty_confidence(0.0)


@given(pos, pos)
def test_confidence_monotone(a, b):
    if a == b:
        return
    lo, hi = sorted((a, b))
    assert uncertainty_confidence(lo) >= uncertainty_confidence(hi)
    if hi - lo > 1e-12 * hi and hi < 700:
        assert uncertainty_confidence(lo) > uncertainty_confidence(hi)


@pytest.mark.parametrize("p2d, pd, expected", [(1.0, 0.37, 0.37), (0.0, 0.37, 0.0), (0.8, 0.5, 0.4)])
def test_fuse_scores(p2d, pd, expected):
    assert fuse_scores(p2d, pd) == pytest.approx(expected, abs=1e-15)


@given(st.floats(0, 1), st.floats(1e-6, 1))
def test_fuse_scores_bounded(p2d, pd):
    p = fuse_scores(p2d, pd)
    assert 0 <= p <= min(p2d, pd)
    assert p == fuse_scores(pd, p2d) if pd <= 1 and p2d > 0 else True


@pytest.mark.parametrize("p2d, pd", [(-0.1, 0.5), (1.1, 0.5), (0.5, 0.0), (0.5, 1.5)])
def test_fuse_scores_domain(p2d, pd):
    with pytest.raises(ValueError):
        fuse_scores(p2d, pd)
