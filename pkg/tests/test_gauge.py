import numpy as np
import pytest

from wcalc.fourier import ThetaPoint
from wcalc.gauge import (
    GaugeParams,
    d_sigma,
    default_l_max,
    perturbed_maximize,
    rho_sigma,
    rho_sigma_breakdown,
)
from wcalc.measures import ParticleMeasure


# ---- parameters ----

def test_params_validation():
    with pytest.raises(ValueError):
        GaugeParams(sigma=0.0)
    with pytest.raises(ValueError):
        GaugeParams(n_max=-1)
    with pytest.raises(ValueError):
        GaugeParams(l_max=-2)


def test_default_depths():
    assert default_l_max(1) == 6
    assert default_l_max(2) == 4
    assert default_l_max(3) == 3
    with pytest.raises(ValueError):
        default_l_max(4)


# ---- gauge values ----

def test_gauge_zero_on_equal(make_measure):
    mu = make_measure(0, 4, 1)
    value, tail = rho_sigma(mu, mu, GaugeParams())
    assert value == 0.0
    assert tail >= 0.0


@pytest.mark.parametrize("dim,c", [(1, [0.7]), (2, [0.3, -0.4]), (3, [0.2, 0.1, -0.3])])
def test_gauge_dirac_translate_is_mean_gap(dim, c):
    # centered parts coincide, so only the mean term contributes
    params = GaugeParams(n_max=4, l_max=3)
    d0 = ParticleMeasure.dirac(np.zeros(dim))
    dc = ParticleMeasure.dirac(np.array(c))
    value, _ = rho_sigma(d0, dc, params)
    assert value == pytest.approx(np.linalg.norm(c), abs=1e-10)


def test_gauge_symmetric(make_measure):
    mu, nu = make_measure(1, 4, 1), make_measure(2, 3, 1)
    params = GaugeParams(n_max=5)
    assert rho_sigma(mu, nu, params)[0] == rho_sigma(nu, mu, params)[0]


def test_gauge_positive_on_distinct_centered_parts():
    # equal means and covariance-free separation still register
    mu = ParticleMeasure.from_points(np.array([[-1.0], [1.0]]))
    d0 = ParticleMeasure.dirac(np.zeros(1))
    value, tail = rho_sigma(mu, d0, GaugeParams(n_max=4))
    assert value > 0.1
    assert tail < value


@pytest.mark.parametrize("dim,seed", [(1, 0), (1, 1), (1, 2), (2, 3), (2, 4)])
def test_refinement_stays_within_tail(make_measure, dim, seed):
    mu = make_measure(seed, 3, dim)
    nu = make_measure(seed + 20, 4, dim)
    base = GaugeParams(n_max=5, l_max=default_l_max(dim))
    fine = GaugeParams(n_max=6, l_max=default_l_max(dim) + 1)
    value, tail = rho_sigma(mu, nu, base)
    refined, _ = rho_sigma(mu, nu, fine)
    assert abs(refined - value) <= tail + 1e-15


def test_tail_decreases_with_depth(make_measure):
    mu = make_measure(5, 3, 1)
    nu = make_measure(6, 3, 1)
    tails = [
        rho_sigma(mu, nu, GaugeParams(n_max=n, l_max=l))[1]
        for n, l in [(3, 3), (4, 4), (5, 5)]
    ]
    assert tails[2] < tails[1] < tails[0]


def test_breakdown_partials_reconstruct_value(make_measure):
    mu = make_measure(7, 3, 1)
    nu = make_measure(8, 4, 1)
    params = GaugeParams(n_max=4, l_max=4)
    value, _, partials = rho_sigma_breakdown(mu, nu, params)
    assert set(partials) == {(n, l) for n in range(5) for l in range(5)}
    dm = mu.mean() - nu.mean()
    total = float(dm @ dm) + sum(partials.values())
    assert value**2 == pytest.approx(total, rel=1e-12)


def test_gauge_dimension_mismatch():
    with pytest.raises(ValueError):
        rho_sigma(ParticleMeasure.dirac(np.zeros(1)),
                  ParticleMeasure.dirac(np.zeros(2)), GaugeParams())


def test_d_sigma_combines_slots():
    d0 = ParticleMeasure.dirac(np.zeros(1))
    a = ThetaPoint(0.0, np.zeros(1), d0)
    b = ThetaPoint(0.3, np.array([0.4]), d0.translate(np.full(1, 1.2)))
    got = d_sigma(a, b, GaugeParams(n_max=4))
    assert got == pytest.approx(np.sqrt(0.09 + 0.16 + 1.44), abs=1e-9)


# ---- perturbed maximization ----

def _theta_row(offsets):
    d0 = ParticleMeasure.dirac(np.zeros(1))
    return [ThetaPoint(0.0, np.array([o]), d0.translate(np.array([o])))
            for o in offsets]


def test_perturbed_maximize_single_candidate():
    cands = _theta_row([0.0])
    params = GaugeParams(n_max=3)
    star, tilde, anchors, cert = perturbed_maximize(
        lambda a, b: 1.0, cands, delta=1e-6, kappa=1e-4, params=params)
    assert star is cands[0] and tilde is cands[0]
    assert cert["converged"]
    assert cert["bullet_ok"]
    assert len(anchors) == 1


def test_perturbed_maximize_clear_winner():
    cands = _theta_row([-0.5, 0.0, 0.5])
    params = GaugeParams(n_max=3)

    def G(a, b):
        return -((a.y[0] - 0.5) ** 2) - (b.y[0] + 0.5) ** 2

    star, tilde, anchors, cert = perturbed_maximize(
        G, cands, delta=1e-6, kappa=1e-4, params=params)
    assert star.y[0] == 0.5
    assert tilde.y[0] == -0.5
    assert cert["converged"]
    assert cert["iterations"] == 1
    assert cert["strict_gap"] > 0.0
    # the winner is its own anchor, so every margin is the full allowance
    assert cert["bullet_ok"]
    assert min(cert["bullet_margins"]) > 0.0


def test_perturbed_maximize_tied_duplicates_converge():
    # two gauge-identical candidates tie; the penalty cannot separate them
    cands = _theta_row([0.2, 0.2])
    star, tilde, anchors, cert = perturbed_maximize(
        lambda a, b: 0.0, cands, delta=1e-6, kappa=1e-4,
        params=GaugeParams(n_max=3))
    assert cert["converged"]
    assert cert["bullet_ok"]
    assert cert["strict_gap"] == pytest.approx(0.0, abs=1e-15)


def test_perturbed_maximize_validation():
    cands = _theta_row([0.0])
    params = GaugeParams(n_max=3)
    with pytest.raises(ValueError):
        perturbed_maximize(lambda a, b: 0.0, cands, delta=0.0, kappa=1.0,
                           params=params)
    with pytest.raises(ValueError):
        perturbed_maximize(lambda a, b: 0.0, cands, delta=1.0, kappa=0.0,
                           params=params)
    with pytest.raises(ValueError):
        perturbed_maximize(lambda a, b: 0.0, [], delta=1.0, kappa=1.0,
                          params=params)
