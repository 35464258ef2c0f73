import numpy as np
import pytest

from wcalc.fourier import (
    QuadratureGrid,
    ThetaPoint,
    build_grid,
    centered_char,
    char_fn,
    d_F,
    dual_norm_lambda,
    noncompleteness_table,
    rho_F,
    rho_F2,
    rho_F2_parts,
)
from wcalc.measures import ParticleMeasure

# Reference values computed once with adaptive quadrature (scipy.integrate.quad,
# reported error below 1e-10) and closed forms; frozen here so the grid is
# checked against an independent integrator, not against itself.
TOTAL_WEIGHT_D1 = 6.580777580029401e-01        # int (1+k^2)^-8 dk
COS_INTEGRAL_D1 = 6.458123967152094e-01        # int cos(0.7k)(1+k^2)^-8 dk
PM1_FOURIER_PART = 5.019886287553588e-04       # centered +-1 pair vs dirac
DUAL_NORM_D1 = 1.273987332360528e-02           # delta_0 vs delta_0.9
TOTAL_WEIGHT_D2 = np.pi / 8.0                  # int (1+|k|^2)^-9 dk, exact
TOTAL_WEIGHT_D3 = 2.153554427117582e-01        # int (1+|k|^2)^-10 dk
GAP_N4 = 3.410180814322e-03                    # rho(mu_4, mu_8)
GAP_N256 = 1.104154343196e-03                  # rho(mu_256, mu_512)
DIRAC_N4 = 1.000196275520886e+00               # rho(mu_4, delta_0)


# ---- grid construction ----

def test_grid_total_weight_d1(grid1):
    assert grid1.weights @ np.ones(len(grid1.weights)) == pytest.approx(
        TOTAL_WEIGHT_D1, abs=1e-12)


def test_grid_cosine_integral_d1(grid1):
    got = float(grid1.weights @ np.cos(0.7 * grid1.nodes[:, 0]))
    assert got == pytest.approx(COS_INTEGRAL_D1, abs=1e-12)


def test_grid_total_weight_d2(grid2):
    assert float(grid2.weights.sum()) == pytest.approx(TOTAL_WEIGHT_D2, abs=1e-10)


def test_grid_total_weight_d3():
    grid = build_grid(3, level=3)
    assert float(grid.weights.sum()) == pytest.approx(TOTAL_WEIGHT_D3, abs=1e-9)


def test_grid_refinement_converges():
    # spectral convergence: visible error at level 1, roundoff from level 2 on
    err1 = abs(float(build_grid(1, level=1).weights.sum()) - TOTAL_WEIGHT_D1)
    assert 1e-12 < err1 < 1e-5
    for level in (2, 3, 4):
        err = abs(float(build_grid(1, level=level).weights.sum()) - TOTAL_WEIGHT_D1)
        assert err < 1e-13


def test_grid_tail_bounds_remaining_mass():
    g = build_grid(1, level=2)
    # the node set misses at most the mass beyond the largest radius
    assert abs(float(g.weights.sum()) - TOTAL_WEIGHT_D1) <= g.estimated_tail + 1e-12


def test_grid_validation():
    with pytest.raises(ValueError):
        build_grid(4)
    with pytest.raises(ValueError):
        build_grid(1, lam=1.5)
    with pytest.raises(ValueError):
        build_grid(1, level=0)


def test_grid_roundtrip(tmp_path, grid1):
    path = tmp_path / "grid.json"
    grid1.save(path)
    back = QuadratureGrid.load(path)
    assert back.lam == grid1.lam
    assert np.array_equal(back.nodes, grid1.nodes)
    assert np.array_equal(back.weights, grid1.weights)
    assert back.estimated_tail == grid1.estimated_tail


# ---- characteristic functions ----

def test_char_fn_dirac_is_constant(grid1):
    d0 = ParticleMeasure.dirac(np.zeros(1))
    vals = char_fn(d0, grid1.nodes)
    assert np.allclose(vals, (2.0 * np.pi) ** -0.5, atol=1e-15)


def test_char_fn_symmetric_pair_is_cosine(grid1):
    mu = ParticleMeasure.from_points(np.array([[-1.0], [1.0]]))
    k = grid1.nodes[:, 0]
    want = (2.0 * np.pi) ** -0.5 * np.cos(k)
    assert np.allclose(char_fn(mu, grid1.nodes), want, atol=1e-14)


def test_char_fn_single_node():
    mu = ParticleMeasure.dirac(np.array([1.0, 0.0]))
    val = char_fn(mu, np.array([np.pi, 0.0]))
    assert isinstance(val, complex)
    assert val == pytest.approx(-(2.0 * np.pi) ** -1.0, abs=1e-14)


def test_centered_char_ignores_translation(grid1):
    mu = ParticleMeasure.from_points(np.array([[-1.0], [1.0]]))
    assert np.allclose(
        centered_char(mu, grid1.nodes),
        centered_char(mu.translate(np.array([5.0])), grid1.nodes),
        atol=1e-12,
    )


# ---- the metric ----

def test_rho_F_zero_on_equal_clouds(grid1, make_measure):
    mu = make_measure(0, 5, 1)
    assert rho_F(mu, mu, grid1) == 0.0


def test_rho_F_symmetric(grid1, make_measure):
    mu, nu = make_measure(1, 4, 1), make_measure(2, 6, 1)
    assert rho_F(mu, nu, grid1) == pytest.approx(rho_F(nu, mu, grid1), abs=1e-15)


def test_rho_F_translate_is_mean_gap(grid1):
    # translates share centered parts, so only the mean term survives
    mu = ParticleMeasure.from_points(np.array([[-0.4], [0.9]]))
    nu = mu.translate(np.array([0.65]))
    parts = rho_F2_parts(mu, nu, grid1)
    assert parts[0] == pytest.approx(0.65**2, abs=1e-14)
    assert parts[1] == 0.0
    assert parts[2] == pytest.approx(0.0, abs=1e-24)
    assert rho_F(mu, nu, grid1) == pytest.approx(0.65, abs=1e-12)


def test_rho_F_dirac_pair(grid1):
    c = np.array([1.3])
    val = rho_F(ParticleMeasure.dirac(np.zeros(1)), ParticleMeasure.dirac(c), grid1)
    assert val == pytest.approx(1.3, abs=1e-12)


def test_rho_F_parts_pm1_vs_dirac(grid1):
    # means agree, covariance gap is exactly 1, fourier part frozen
    mu = ParticleMeasure.from_points(np.array([[-1.0], [1.0]]))
    d0 = ParticleMeasure.dirac(np.zeros(1))
    mean_sq, cov_sq, fourier = rho_F2_parts(mu, d0, grid1)
    assert mean_sq == 0.0
    assert cov_sq == pytest.approx(1.0, abs=1e-15)
    assert fourier == pytest.approx(PM1_FOURIER_PART, abs=1e-12)


def test_rho_F_dimension_checks(grid1):
    mu = ParticleMeasure.dirac(np.zeros(2))
    with pytest.raises(ValueError):
        rho_F2(mu, mu, grid1)
    with pytest.raises(ValueError):
        rho_F2(ParticleMeasure.dirac(np.zeros(1)), mu, grid1)


def test_dual_norm_dirac_pair(grid1):
    d0 = ParticleMeasure.dirac(np.zeros(1))
    dc = ParticleMeasure.dirac(np.array([0.9]))
    assert dual_norm_lambda(d0, dc, grid1) == pytest.approx(DUAL_NORM_D1, abs=1e-12)


def test_dual_norm_vanishes_on_equal(grid1, make_measure):
    mu = make_measure(3, 4, 1)
    assert dual_norm_lambda(mu, mu, grid1) == 0.0


# ---- state points ----

def test_theta_point_dim_check():
    mu = ParticleMeasure.dirac(np.zeros(2))
    with pytest.raises(ValueError):
        ThetaPoint(0.0, np.zeros(3), mu)


def test_d_F_combines_all_slots(grid1):
    mu = ParticleMeasure.dirac(np.zeros(1))
    a = ThetaPoint(0.0, np.zeros(1), mu)
    b = ThetaPoint(0.3, np.array([0.4]), mu.translate(np.full(1, 1.2)))
    want = np.sqrt(0.3**2 + 0.4**2 + 1.2**2)
    assert d_F(a, b, grid1) == pytest.approx(want, abs=1e-12)


# ---- the Cauchy-without-limit family ----

def test_noncompleteness_frozen_values():
    grid = build_grid(1, level=6)
    rows = noncompleteness_table([4, 256], grid)
    assert rows[0]["rho_to_double"] == pytest.approx(GAP_N4, rel=1e-7)
    assert rows[1]["rho_to_double"] == pytest.approx(GAP_N256, rel=1e-7)
    assert rows[0]["rho_to_dirac"] == pytest.approx(DIRAC_N4, abs=1e-10)


def test_noncompleteness_dirac_column_at_least_one():
    grid = build_grid(1, level=5)
    rows = noncompleteness_table([4, 32, 1024], grid)
    for row in rows:
        assert row["rho_to_dirac"] >= 1.0
