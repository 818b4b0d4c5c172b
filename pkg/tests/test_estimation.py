import numpy as np
import pytest
from hypothesis import given, strategies as st

from _helpers import grid_from_points, random_unit, scatter_trial
from conftest import random_rotation
from acf.errors import DegenerateAxis, NoValidSeeds, RansacFailure
from acf.estimation import (
    AxisMethod,
    MeanShiftConfig,
    RansacConfig,
    estimate_axis_endpoints,
    estimate_axis_scatterline,
    estimate_axis_vector,
    estimate_keypoint,
    fit_line_ransac,
    form_voters,
    kde,
    mean_shift_mode,
    orient_by_labels,
)
from acf.evaluation import angular_error
from acf.synthetic import brute_force_kde_argmax


def test_config_validation():
    with pytest.raises(ValueError):
        MeanShiftConfig(bandwidth=0)
    with pytest.raises(ValueError):
        MeanShiftConfig(convergence_tol=-1)
    with pytest.raises(ValueError):
        RansacConfig(iterations=0)
    assert MeanShiftConfig(bandwidth=0.04).merge_radius == pytest.approx(0.02)


def test_form_voters_examples(rng):
    pts = rng.standard_normal((9, 3))
    g = grid_from_points(pts, 3)
    v = form_voters(g, np.zeros((9, 3)), np.ones(9))
    np.testing.assert_array_equal(v.points, pts)
    k = np.array([0.1, 0.2, 0.3])
    v = form_voters(g, k - pts, np.ones(9))
    np.testing.assert_allclose(v.points, np.tile(k, (9, 1)), atol=1e-15)
    g2 = grid_from_points(pts[:4], 2)
    v = form_voters(g2, np.zeros((4, 3)), [0.4, 0.6, 0.0, 0.2], threshold=0.5)
    assert len(v) == 1 and v.source_seed.tolist() == [1]
    with pytest.raises(NoValidSeeds):
        form_voters(g2, np.zeros((4, 3)), np.zeros(4))
    with pytest.raises(ValueError):
        form_voters(g2, np.zeros((4, 3)), np.ones(4), threshold=1.5)


def test_invalid_seeds_never_vote():
    g = grid_from_points(np.ones((3, 3)), 2)  # fourth seed invalid
    v = form_voters(g, np.zeros((4, 3)), np.ones(4))
    assert len(v) == 3


def test_mean_shift_single_and_symmetric(rng):
    v = np.array([[0.3, -0.1, 0.9]])
    np.testing.assert_allclose(mean_shift_mode(v), v[0])
    c = np.array([0.1, 0.2, 0.5])
    d = 0.01 * rng.standard_normal((20, 3))
    sym = np.vstack([c + d, c - d])
    assert np.linalg.norm(mean_shift_mode(sym) - c) < 1e-6


def test_mean_shift_dense_cluster_vs_grid_oracle(rng):
    dense = np.array([0, 0, 1.0]) + 0.01 * rng.standard_normal((40, 3))
    outl = np.array([0, 0, 2.0]) + 0.01 * rng.standard_normal((10, 3))
    V = np.vstack([dense, outl])
    cfg = MeanShiftConfig(bandwidth=0.05)
    mode = mean_shift_mode(V, cfg)
    oracle = brute_force_kde_argmax(V[:40], 0.05, 0.05 / 20)
    assert np.linalg.norm(mode - oracle) < 0.005
    assert np.linalg.norm(mode - dense.mean(axis=0)) < 0.005


def test_mode_is_kde_stationary_point(rng):
    V = rng.normal(0, 0.02, (60, 3))
    h = 0.03
    m = mean_shift_mode(V, MeanShiftConfig(bandwidth=h))
    eps = 1e-4
    f0 = kde(m, V, h)[0]
    for k in range(3):
        e = np.zeros(3)
        e[k] = eps
        assert kde(m + e, V, h)[0] <= f0 + 1e-9
        assert kde(m - e, V, h)[0] <= f0 + 1e-9


def test_larger_basin_wins_over_denser_peak(rng):
    wide = rng.normal([0, 0, 0], 0.01, (30, 3))
    tight = np.tile([0.5, 0, 0], (20, 1))
    assert np.linalg.norm(mean_shift_mode(np.vstack([tight, wide])) - wide.mean(axis=0)) < 0.01


def test_mean_shift_equal_clusters_tie_is_deterministic():
    a = np.tile([0.0, 0.0, 0.0], (5, 1))
    b = np.tile([1.0, 0.0, 0.0], (5, 1))
    m1 = mean_shift_mode(np.vstack([a, b]))
    m2 = mean_shift_mode(np.vstack([b, a]))
    np.testing.assert_array_equal(m1, m2)
    np.testing.assert_allclose(m1, [0, 0, 0], atol=1e-9)


def _keypoint_trial(rng, sigma, outliers=0.0):
    k = rng.uniform(-0.2, 0.2, 3) + [0, 0, 0.8]
    pts = k + rng.normal(0, 0.04, (196, 3))
    vot = k + sigma * rng.standard_normal((196, 3))
    out = rng.random(196) < outliers
    vot[out] = k + (rng.random((out.sum(), 3)) - 0.5) * 0.5
    return np.linalg.norm(estimate_keypoint(grid_from_points(pts, 14), vot - pts, np.ones(196)) - k)


def test_keypoint_noise_monte_carlo():
    rng = np.random.default_rng(7)
    errs = np.array([_keypoint_trial(rng, 0.005) for _ in range(100)])
    assert np.mean(errs < 0.003) >= 0.95


def test_keypoint_outlier_monte_carlo():
    rng = np.random.default_rng(8)
    errs = np.array([_keypoint_trial(rng, 0.002, 0.2) for _ in range(100)])
    assert np.mean(errs < 0.010) >= 0.90


def _endpoint_setup(rng, sigma=0.0):
    d = random_unit(rng)
    e1 = rng.uniform(-0.1, 0.1, 3) + [0, 0, 0.8]
    e2 = e1 + 0.15 * d
    pts = e1 + rng.normal(0, 0.04, (196, 3))
    off = np.stack([e1 - pts, e2 - pts], axis=1) + sigma * rng.standard_normal((196, 2, 3))
    return grid_from_points(pts, 14), off, d


def test_endpoints_exact_and_antisymmetric(rng):
    g, off, d = _endpoint_setup(rng)
    est = estimate_axis_endpoints(g, off, np.ones(196))
    assert angular_error(est.direction, d) < np.degrees(1e-6)
    assert est.kind is AxisMethod.ENDPOINTS
    swapped = estimate_axis_endpoints(g, off[:, ::-1], np.ones(196))
    np.testing.assert_array_equal(swapped.direction, -est.direction)


def test_endpoints_degenerate(rng):
    g, off, _ = _endpoint_setup(rng)
    off[:, 1] = off[:, 0]
    with pytest.raises(DegenerateAxis):
        estimate_axis_endpoints(g, off, np.ones(196))


def test_endpoints_container_noise_monte_carlo():
    rng = np.random.default_rng(11)
    ok = 0
    for _ in range(100):
        g, off, d = _endpoint_setup(rng, 0.005)
        ok += angular_error(estimate_axis_endpoints(g, off, np.ones(196)).direction, d) < 2.0
    assert ok >= 90


def test_vector_examples():
    n = np.array([0.0, 0.6, 0.8])
    est = estimate_axis_vector(np.tile(n, (5, 1)), np.ones(5), origin=[1, 2, 3])
    np.testing.assert_allclose(est.direction, n)
    np.testing.assert_allclose(est.origin, [1, 2, 3])
    eps = 1e-3
    perp = np.array([1.0, 0, 0])
    pair = np.array([n + eps * perp, n - eps * perp])
    pair /= np.linalg.norm(pair, axis=1, keepdims=True)
    assert np.linalg.norm(estimate_axis_vector(pair, [1, 1]).direction - n) < eps**2
    with pytest.raises(DegenerateAxis):
        estimate_axis_vector(np.array([n, -n]), [1, 1])
    with pytest.raises(NoValidSeeds):
        estimate_axis_vector(np.array([n, -n]), [0.1, 0.2])


def test_ransac_collinear_exact(rng):
    d = random_unit(rng)
    pts = np.array([0.1, 0.2, 0.9]) + np.linspace(0, 0.2, 30)[:, None] * d
    c, u, inl = fit_line_ransac(pts)
    assert abs(abs(u @ d) - 1) < 1e-12 and inl.all()
    with pytest.raises(RansacFailure):
        fit_line_ransac(pts[:1])
    with pytest.raises(RansacFailure):
        fit_line_ransac(np.tile(pts[:1], (5, 1)))


def test_ransac_failure_when_no_consensus(rng):
    pts = rng.uniform(-1, 1, (50, 3))
    with pytest.raises(RansacFailure):
        fit_line_ransac(pts, RansacConfig(inlier_threshold=1e-4, min_inlier_fraction=0.5))


def test_scatterline_collinear_and_label_inversion(rng):
    seeds, off, logits, mask, d = scatter_trial(rng, 0.0, 0.0)
    est = estimate_axis_scatterline(seeds, off, logits, mask)
    assert angular_error(est.direction, d) < 1e-6
    inv = estimate_axis_scatterline(seeds, off, -logits, mask)
    np.testing.assert_array_equal(inv.direction, -est.direction)


def test_scatterline_two_coincident_voters_fail():
    g = grid_from_points(np.zeros((2, 3)) + [0, 0, 1], 2)
    with pytest.raises(RansacFailure):
        estimate_axis_scatterline(g, np.zeros((4, 3)), np.array([4.0, -4.0, 0, 0]), np.ones(4))


def test_orient_by_labels_rules():
    d = np.array([1.0, 0, 0])
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0]])
    np.testing.assert_array_equal(orient_by_labels(pts, d, [0, 0, 1, 1]), d)
    np.testing.assert_array_equal(orient_by_labels(pts, d, [1, 1, 0, 0]), -d)
    # one label group: decided against the reference point
    np.testing.assert_array_equal(orient_by_labels(pts[2:], d, [1, 1], reference=[1.5, 0, 0]), d)
    np.testing.assert_array_equal(orient_by_labels(pts[2:], -d, [1, 1], reference=[1.5, 0, 0]), d)
    with pytest.raises(DegenerateAxis):
        orient_by_labels(pts, d, [1, 1, 1, 1])


def test_scatterline_is_deterministic(rng):
    seeds, off, logits, mask, _ = scatter_trial(rng)
    a = estimate_axis_scatterline(seeds, off, logits, mask, RansacConfig(rng_seed=3))
    b = estimate_axis_scatterline(seeds, off, logits, mask, RansacConfig(rng_seed=3))
    np.testing.assert_array_equal(a.direction, b.direction)
    np.testing.assert_array_equal(a.origin, b.origin)


@given(st.integers(0, 10_000))
def test_equivariance(seed):
    rng = np.random.default_rng(seed)
    g, off, d = _endpoint_setup(rng, 0.003)
    R = random_rotation(rng)
    v = rng.uniform(-1, 1, 3)
    base_k = estimate_keypoint(g, off[:, 0], np.ones(196))
    base_a = estimate_axis_endpoints(g, off, np.ones(196)).direction

    gt = grid_from_points(g.points[:196] + v, 14)
    np.testing.assert_allclose(estimate_keypoint(gt, off[:, 0], np.ones(196)), base_k + v, atol=1e-9)
    np.testing.assert_allclose(estimate_axis_endpoints(gt, off, np.ones(196)).direction, base_a, atol=1e-9)

    gr = grid_from_points(g.points[:196] @ R.T, 14)
    offr = off @ R.T
    np.testing.assert_allclose(estimate_keypoint(gr, offr[:, 0], np.ones(196)), R @ base_k, atol=1e-6)
    np.testing.assert_allclose(estimate_axis_endpoints(gr, offr, np.ones(196)).direction, R @ base_a,
                               atol=1e-6)
