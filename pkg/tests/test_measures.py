import itertools

import numpy as np
import pytest
from scipy.special import ndtr

from wcalc.measures import (
    ParticleMeasure,
    gaussian_box_mass,
    gaussian_smoothed,
    load_measure,
    measure_from_dict,
    measure_to_dict,
    save_measure,
    unit_variance_outlier_mixture,
    w2,
    w2_sigma,
)
from wcalc.rng import stream


# ---- construction and validation ----

def test_weights_must_sum_to_one():
    pts = np.zeros((2, 1))
    with pytest.raises(ValueError):
        ParticleMeasure(pts, np.array([0.6, 0.6]))


def test_weights_must_be_nonnegative():
    pts = np.zeros((2, 1))
    with pytest.raises(ValueError):
        ParticleMeasure(pts, np.array([1.2, -0.2]))


def test_points_must_be_finite():
    with pytest.raises(ValueError):
        ParticleMeasure(np.array([[np.nan]]), np.array([1.0]))


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        ParticleMeasure(np.zeros((3, 1)), np.array([0.5, 0.5]))


def test_stored_arrays_are_frozen():
    mu = ParticleMeasure.from_points(np.zeros((2, 1)))
    with pytest.raises(ValueError):
        mu.points[0, 0] = 1.0


# ---- moments on hand-checked clouds ----

def test_mean_and_covariance_two_point():
    # mass 1/2 at 0 and 1/2 at 2: mean 1, variance 1
    mu = ParticleMeasure.from_points(np.array([[0.0], [2.0]]))
    assert mu.mean()[0] == pytest.approx(1.0, abs=0)
    assert mu.covariance()[0, 0] == pytest.approx(1.0, abs=0)


def test_weighted_covariance():
    # 3/4 at 0, 1/4 at 4: mean 1, E[(x-1)^2] = 3/4*1 + 1/4*9 = 3
    mu = ParticleMeasure(np.array([[0.0], [4.0]]), np.array([0.75, 0.25]))
    assert mu.mean()[0] == pytest.approx(1.0, abs=1e-15)
    assert mu.covariance()[0, 0] == pytest.approx(3.0, abs=1e-14)


def test_center_removes_mean():
    mu = ParticleMeasure.from_points(np.array([[0.0], [2.0]]))
    centered = mu.center()
    assert np.allclose(centered.points, [[-1.0], [1.0]])
    assert np.allclose(centered.mean(), 0.0)
    # covariance is translation invariant
    assert centered.covariance()[0, 0] == pytest.approx(1.0, abs=0)


def test_pushforward_scaling_scales_covariance():
    mu = ParticleMeasure.from_points(np.array([[0.0], [2.0]]))
    doubled = mu.pushforward(lambda x: 2.0 * x)
    assert doubled.covariance()[0, 0] == pytest.approx(4.0, abs=1e-14)


def test_translate_moves_mean_only():
    mu = ParticleMeasure.from_points(np.array([[0.0, 1.0], [2.0, -1.0]]))
    nu = mu.translate(np.array([3.0, -2.0]))
    assert np.allclose(nu.mean(), mu.mean() + [3.0, -2.0])
    assert np.allclose(nu.covariance(), mu.covariance())


# ---- exact transport ----

def test_w2_translate_identity(make_measure):
    # with half-squared cost a shift by c costs |c|/sqrt(2)
    for seed, dim in [(0, 1), (1, 2), (2, 3)]:
        mu = make_measure(seed, 5, dim)
        c = np.linspace(0.5, -0.3, dim)
        dist, _ = w2(mu, mu.translate(c))
        assert dist == pytest.approx(np.linalg.norm(c) / np.sqrt(2.0), abs=1e-12)


def test_w2_identical_measures_zero(make_measure):
    mu = make_measure(3, 6, 2)
    dist, plan = w2(mu, mu)
    assert dist == 0.0
    assert plan.cost == pytest.approx(0.0, abs=1e-15)


def test_w2_uniform_matches_permutation_search():
    # brute force over all assignments for a 5-point uniform pair
    gen = stream(11, 0)
    x = gen.standard_normal((5, 2))
    y = gen.standard_normal((5, 2))
    mu, nu = ParticleMeasure.from_points(x), ParticleMeasure.from_points(y)
    best = min(
        sum(0.5 * np.sum((x[i] - y[p[i]]) ** 2) for i in range(5)) / 5.0
        for p in itertools.permutations(range(5))
    )
    dist, plan = w2(mu, nu)
    assert plan.cost == pytest.approx(best, abs=1e-12)
    assert dist == pytest.approx(np.sqrt(best), abs=1e-12)


def test_w2_general_weights_two_by_two():
    # 2x2 transport reduces to one free mass; optimum sits at an endpoint
    x = np.array([[0.0], [1.0]])
    y = np.array([[0.25], [2.0]])
    a, b = np.array([0.7, 0.3]), np.array([0.4, 0.6])
    cost = 0.5 * (x - y.T) ** 2
    # pi11 in [max(0, a1-b2), min(a1, b1)]; linear objective
    lo, hi = max(0.0, a[0] - b[1]), min(a[0], b[0])
    def total(p11):
        p = np.array([[p11, a[0] - p11], [b[0] - p11, a[1] - (b[0] - p11)]])
        return float(np.sum(p * cost))
    best = min(total(lo), total(hi))
    dist, plan = w2(ParticleMeasure(x, a), ParticleMeasure(y, b))
    assert plan.cost == pytest.approx(best, abs=1e-12)
    assert dist == pytest.approx(np.sqrt(best), abs=1e-12)


def test_w2_mean_split_exact(make_measure):
    # squared distance = half squared mean gap + squared distance of
    # the centered parts, exactly, pair by pair
    for seed in range(6):
        mu = make_measure(seed, 4, 2)
        nu = make_measure(seed + 50, 6, 2)
        full = w2(mu, nu)[0] ** 2
        dm = mu.mean() - nu.mean()
        split = 0.5 * float(dm @ dm) + w2(mu.center(), nu.center())[0] ** 2
        assert full == pytest.approx(split, abs=1e-12)


def test_w2_dimension_mismatch():
    mu = ParticleMeasure.from_points(np.zeros((2, 1)))
    nu = ParticleMeasure.from_points(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        w2(mu, nu)


def test_w2_desk_scale_limit():
    mu = ParticleMeasure.from_points(np.zeros((600, 1)))
    nu = ParticleMeasure.from_points(np.ones((600, 1)))
    with pytest.raises(ValueError):
        w2(mu, nu)


def test_coupling_marginals(make_measure):
    mu = make_measure(7, 3, 1)
    nu = make_measure(8, 5, 1)
    _, plan = w2(mu, nu)
    pa, pb = plan.marginals()
    assert np.allclose(pa, mu.weights, atol=1e-10)
    assert np.allclose(pb, nu.weights, atol=1e-10)


# ---- smoothed transport ----

def test_w2_sigma_exact_for_diracs():
    d0 = ParticleMeasure.dirac(np.zeros(1))
    dc = ParticleMeasure.dirac(np.array([0.8]))
    val = w2_sigma(d0, dc, sigma=0.25, n_smooth=32)
    assert val == pytest.approx(0.8 / np.sqrt(2.0), abs=1e-12)


def test_w2_sigma_exact_for_translates(make_measure):
    mu = make_measure(5, 3, 1, uniform=True)
    nu = mu.translate(np.array([1.1]))
    val = w2_sigma(mu, nu, sigma=0.1, n_smooth=16)
    assert val == pytest.approx(1.1 / np.sqrt(2.0), abs=1e-12)


def test_gaussian_smoothed_requires_power_of_two():
    mu = ParticleMeasure.dirac(np.zeros(1))
    with pytest.raises(ValueError):
        gaussian_smoothed(mu, 0.25, n_smooth=10)


def test_gaussian_smoothed_mean_stays_close():
    mu = ParticleMeasure.dirac(np.array([2.0]))
    sm = gaussian_smoothed(mu, 0.25, n_smooth=256)
    assert sm.mean()[0] == pytest.approx(2.0, abs=0.05)
    assert sm.covariance()[0, 0] == pytest.approx(0.25, rel=0.1)


# ---- box masses ----

def test_gaussian_box_mass_single_box():
    mu = ParticleMeasure.from_points(np.array([[0.0], [1.0]]))
    got = gaussian_box_mass(mu, np.array([-1.0]), np.array([1.0]), sigma=1.0)
    want = 0.5 * (ndtr(1.0) - ndtr(-1.0)) + 0.5 * (ndtr(0.0) - ndtr(-2.0))
    assert got == pytest.approx(want, abs=1e-14)


def test_gaussian_box_mass_batch_and_total():
    mu = ParticleMeasure.from_points(np.array([[0.0, 0.0]]))
    lower = np.array([[-np.inf, -np.inf], [0.0, 0.0]])
    upper = np.array([[np.inf, np.inf], [np.inf, np.inf]])
    got = gaussian_box_mass(mu, lower, upper, sigma=0.5)
    assert got.shape == (2,)
    assert got[0] == pytest.approx(1.0, abs=1e-12)
    assert got[1] == pytest.approx(0.25, abs=1e-12)


def test_gaussian_box_mass_degenerate_box():
    mu = ParticleMeasure.dirac(np.zeros(1))
    assert gaussian_box_mass(mu, np.array([1.0]), np.array([-1.0]), 1.0) == 0.0


# ---- the outlier mixture ----

@pytest.mark.parametrize("n", [4, 16, 64])
def test_outlier_mixture_moments(n):
    mu = unit_variance_outlier_mixture(n, dim=1)
    assert np.allclose(mu.mean(), 0.0)
    assert mu.covariance()[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_outlier_mixture_mass_split():
    mu = unit_variance_outlier_mixture(8, dim=2)
    # bulk keeps 1 - 1/n of the mass at the origin
    at_origin = mu.weights[np.all(mu.points == 0.0, axis=1)].sum()
    assert at_origin == pytest.approx(1.0 - 1.0 / 8.0, abs=1e-15)


# ---- serialization ----

def test_measure_roundtrip(tmp_path, make_measure):
    mu = make_measure(9, 4, 2)
    d = measure_to_dict(mu)
    back = measure_from_dict(d)
    assert np.array_equal(back.points, mu.points)
    # renormalization on load may move the weights by one ulp
    assert np.allclose(back.weights, mu.weights, rtol=0.0, atol=1e-15)

    path = tmp_path / "m.json"
    save_measure(mu, path)
    loaded = load_measure(path)
    assert np.array_equal(loaded.points, mu.points)
    assert np.allclose(loaded.weights, mu.weights, rtol=0.0, atol=1e-15)
