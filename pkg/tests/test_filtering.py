import numpy as np
import pytest

from wcalc.calculus import make_mean_functional, make_mean_square_functional
from wcalc.filtering import (
    ControlPath,
    FilterModel,
    cost_J,
    dpp_check,
    flow_lipschitz_check,
    hamiltonian_K,
    ito_residual,
    simulate_flow,
    value_estimate,
    weak_equation_residuals,
)
from wcalc.fourier import build_grid
from wcalc.measures import ParticleMeasure, w2
from wcalc.models import MODEL_NAMES, build_model

TWO_POINT = ParticleMeasure.from_points(np.array([[-0.5], [0.5]]))


def _const_control(a=0.0):
    return ControlPath.constant(a)


# ---- control paths ----

def test_control_path_lookup():
    path = ControlPath(np.array([0.0, 0.4, 0.8]), (1.0, 2.0, 3.0))
    assert path.value_at(0.0) == 1.0
    assert path.value_at(0.39) == 1.0
    assert path.value_at(0.4) == 2.0
    assert path.value_at(0.79999999999) == 3.0  # within the time tolerance
    assert path.value_at(5.0) == 3.0


def test_control_path_validation():
    with pytest.raises(ValueError):
        ControlPath(np.array([]), ())
    with pytest.raises(ValueError):
        ControlPath(np.array([0.0, 0.0]), (1.0, 2.0))
    with pytest.raises(ValueError):
        ControlPath(np.array([0.0]), (1.0, 2.0))
    with pytest.raises(ValueError):
        ControlPath(np.array([0.0]), (1.0,), adaptedness_tag="closed_loop")


# ---- model construction ----

def test_model_registry_contents():
    assert set(MODEL_NAMES) == {
        "static", "common_noise", "control_separable", "sin_drift", "gauss_cost",
    }
    for name in MODEL_NAMES:
        build_model(name)


def test_model_unknown_name_and_leftover_params():
    with pytest.raises(ValueError):
        build_model("unheard_of")
    with pytest.raises(ValueError):
        build_model("static", {"frobnicate": 1})


def test_model_probe_rejects_nonfinite():
    with pytest.raises(ValueError):
        FilterModel(dim=1, dim_v=1, dim_w=1,
                    b=lambda x, a: np.full_like(x, np.nan))


def test_model_probe_rejects_bad_loading_shape():
    with pytest.raises(ValueError):
        FilterModel(dim=1, dim_v=1, dim_w=1,
                    sigma_tilde=lambda a: np.zeros((2, 2)))


def test_model_basic_validation():
    with pytest.raises(ValueError):
        FilterModel(dim=0, dim_v=1, dim_w=1)
    with pytest.raises(ValueError):
        FilterModel(dim=1, dim_v=1, dim_w=1, horizon=0.0)
    with pytest.raises(ValueError):
        FilterModel(dim=1, dim_v=1, dim_w=1, controls=())


# ---- flow simulation ----

def test_static_flow_is_frozen():
    model = build_model("static")
    flow = simulate_flow(model, TWO_POINT, _const_control(), 8, 0.1, seed=0)
    assert np.all(flow.y_path == 0.0)
    for i in range(len(flow)):
        gap, _ = w2(flow.measure_at(i), TWO_POINT)
        assert gap == 0.0


def test_initial_measure_replicated_exactly():
    model = build_model("sin_drift")
    flow = simulate_flow(model, TWO_POINT, _const_control(), 7, 0.1, seed=1)
    # 7 requested -> 4 copies of the 2-point support with split weights
    assert flow.tilde_particles.shape[1] == 8
    gap, _ = w2(flow.measure_at(0), TWO_POINT)
    assert gap == 0.0


def test_constant_drift_translates_the_cloud():
    c = 0.7
    model = FilterModel(dim=1, dim_v=1, dim_w=1,
                        b=lambda x, a: np.full(x.shape, c))
    flow = simulate_flow(model, TWO_POINT, _const_control(), 4, 0.05, seed=2)
    for i in (3, 10, 20):
        shifted = TWO_POINT.translate(np.array([c * flow.times[i]]))
        gap, _ = w2(flow.measure_at(i), shifted)
        assert gap < 1e-13


def test_common_noise_only_translates():
    model = build_model("common_noise", {"scale": 0.5})
    flow = simulate_flow(model, TWO_POINT, _const_control(), 4, 0.1, seed=3)
    # the shifted cloud never moves; all motion sits in Y
    assert np.all(flow.tilde_particles == flow.tilde_particles[0])
    running = np.cumsum(flow.w_increments, axis=0) * 0.5
    assert np.allclose(flow.y_path[1:], running, atol=1e-15)
    assert np.any(flow.y_path[1:] != 0.0)


def test_flow_deterministic_in_seed_and_path_id():
    model = build_model("sin_drift")
    a = simulate_flow(model, TWO_POINT, _const_control(), 4, 0.1, seed=5)
    b = simulate_flow(model, TWO_POINT, _const_control(), 4, 0.1, seed=5)
    c = simulate_flow(model, TWO_POINT, _const_control(), 4, 0.1, seed=5, path_id=1)
    assert np.array_equal(a.tilde_particles, b.tilde_particles)
    assert np.array_equal(a.y_path, b.y_path)
    assert not np.array_equal(a.tilde_particles, c.tilde_particles)


def test_time_grid_divisibility_enforced():
    model = build_model("static")
    with pytest.raises(ValueError):
        simulate_flow(model, TWO_POINT, _const_control(), 4, 0.3, seed=0)
    with pytest.raises(ValueError):
        simulate_flow(model, TWO_POINT, _const_control(), 1, 0.1, seed=0)


def test_dimension_mismatch_rejected():
    model = build_model("static", {"dim": 2})
    with pytest.raises(ValueError):
        simulate_flow(model, TWO_POINT, _const_control(), 4, 0.1, seed=0)


# ---- weak equation residuals ----

def test_weak_residuals_vanish_for_static_flow():
    model = build_model("static")
    flow = simulate_flow(model, TWO_POINT, _const_control(), 4, 0.1, seed=0)
    res = weak_equation_residuals(
        model, flow, _const_control(),
        h=lambda x: x[..., 0] ** 2, grad_h=lambda x: 2.0 * x,
        hess_h=lambda x: 2.0 * np.eye(1))
    assert np.all(res == 0.0)


def test_weak_residuals_second_order_in_dt():
    model = build_model("sin_drift", {"s_v": 0.0, "s_w": 0.0})
    # asymmetric support: a symmetric cloud makes every integrand odd and
    # the residuals vanish identically instead of measuring the defect
    mu0 = ParticleMeasure.from_points(np.array([[0.2], [0.9]]))
    kwargs = dict(h=lambda x: np.sin(x[..., 0]), grad_h=lambda x: np.cos(x),
                  hess_h=None)
    maxima = []
    for dt in (0.05, 0.025):
        flow = simulate_flow(model, mu0, _const_control(), 4, dt, seed=0)
        res = weak_equation_residuals(model, flow, _const_control(), **kwargs)
        maxima.append(np.max(np.abs(res)))
    # per-step defect of the deterministic flow is O(dt^2)
    assert maxima[0] > 0.0
    assert maxima[1] < maxima[0] / 2.0


# ---- the Hamiltonian ----

def test_hamiltonian_zero_for_static_model():
    model = build_model("static")
    assert hamiltonian_K(model, 0.0, TWO_POINT,
                         p=lambda x: np.ones_like(x),
                         q=lambda x: np.ones(x.shape + (1,))) == 0.0


def test_hamiltonian_assembles_all_terms():
    model = FilterModel(
        dim=1, dim_v=1, dim_w=1,
        b=lambda x, a: 2.0 * x,
        sigma=lambda x, a: np.full(x.shape + (1,), 0.3),
        sigma_tilde=lambda a: np.array([[0.5]]),
        f=lambda x, a: x[..., 0] ** 2 + a,
    )
    mu = TWO_POINT  # int x^2 dmu = 0.25, mean 0
    p = lambda x: np.ones_like(x)
    q = lambda x: np.full(x.shape + (1,), 4.0)
    m_mat = np.array([[2.0]])
    a = 1.5
    # f: 0.25 + 1.5;  b.p: int 2x dmu = 0;  sigma: 0.5*4*0.09;  tilde: 0.5*0.25*2
    want = (0.25 + 1.5) + 0.0 + 0.5 * 4.0 * 0.09 + 0.5 * 0.25 * 2.0
    assert hamiltonian_K(model, a, mu, p=p, q=q, m_mat=m_mat) == pytest.approx(
        want, abs=1e-14)


def test_hamiltonian_skips_absent_slots():
    model = build_model("common_noise", {"scale": 0.6})
    # no f, no p/q supplied: only the common-noise trace term remains
    got = hamiltonian_K(model, 0.0, TWO_POINT, m_mat=np.eye(1))
    assert got == pytest.approx(0.5 * 0.36, abs=1e-15)
    assert hamiltonian_K(model, 0.0, TWO_POINT) == 0.0


# ---- costs and values ----

def test_cost_constant_terminal_is_exact():
    model = FilterModel(dim=1, dim_v=1, dim_w=1,
                        sigma_tilde=lambda a: np.eye(1),
                        g=lambda x: np.full(x.shape[:-1], 3.25))
    mean, se = cost_J(model, 0.0, TWO_POINT, _const_control(), 16, 4, 0.1, seed=0)
    assert mean == pytest.approx(3.25, abs=1e-14)
    assert se == pytest.approx(0.0, abs=1e-14)


def test_cost_separable_closed_form():
    model = build_model("control_separable")
    for a in model.controls:
        mean, se = cost_J(model, 0.0, TWO_POINT, _const_control(a), 8, 4, 0.05,
                          seed=1)
        assert mean == pytest.approx(a * model.horizon + 2.0, abs=1e-12)
        assert se == pytest.approx(0.0, abs=1e-12)


def test_cost_monotone_under_running_cost_shift():
    # identical noise (same seed and stream ids), f raised by 1 everywhere
    base = build_model("gauss_cost")
    lifted = FilterModel(
        dim=1, dim_v=1, dim_w=1,
        b=base.b, sigma=base.sigma, sigma_tilde=base.sigma_tilde,
        f=lambda x, a: base.f(x, a) + 1.0, g=base.g,
        controls=base.controls, horizon=base.horizon,
    )
    m0, _ = cost_J(base, 0.0, TWO_POINT, _const_control(), 32, 4, 0.05, seed=2)
    m1, _ = cost_J(lifted, 0.0, TWO_POINT, _const_control(), 32, 4, 0.05, seed=2)
    assert m1 - m0 == pytest.approx(1.0, abs=1e-12)


def test_value_separable_is_exact_and_tree_free():
    model = build_model("control_separable")
    rep = value_estimate(model, 0.0, TWO_POINT, n_stages=2, n_paths=32,
                         n_particles=4, dt=0.05, seed=3)
    assert rep.v_hat == pytest.approx(model.horizon * min(model.controls) + 2.0,
                                      abs=1e-12)
    assert rep.se == pytest.approx(0.0, abs=1e-12)
    assert rep.gap_bound == pytest.approx(0.0, abs=1e-12)
    assert rep.n_branches == 2
    assert rep.best_policy[0] == min(model.controls)


def test_value_singleton_control_matches_cost():
    # one action: the tree optimum is the plain Monte Carlo cost, path by path
    model = build_model("gauss_cost", {"controls": (0.5,)})
    rep = value_estimate(model, 0.0, TWO_POINT, n_stages=2, n_paths=24,
                         n_particles=4, dt=0.05, seed=4)
    mean, se = cost_J(model, 0.0, TWO_POINT, _const_control(0.5), 24, 4, 0.05,
                      seed=4)
    assert rep.v_hat == pytest.approx(mean, abs=1e-13)
    assert rep.se == pytest.approx(se, abs=1e-13)
    assert rep.gap_bound == 0.0


def test_value_never_beats_constant_controls():
    # common random numbers make the dominance exact, not just statistical
    model = build_model("gauss_cost")
    rep = value_estimate(model, 0.0, TWO_POINT, n_stages=2, n_paths=48,
                         n_particles=4, dt=0.05, seed=5)
    assert rep.gap_bound >= -1e-13
    for a in model.controls:
        mean, _ = cost_J(model, 0.0, TWO_POINT, _const_control(a), 48, 4, 0.05,
                         seed=5)
        assert rep.v_hat <= mean + 1e-12


def test_value_policy_budget_guard():
    model = build_model("control_separable")
    # 3 decision nodes with 2 actions each: 8 policies against a budget of 4
    with pytest.raises(ValueError, match="budget"):
        value_estimate(model, 0.0, TWO_POINT, n_stages=2, n_paths=8,
                       n_particles=4, dt=0.05, seed=0, policy_budget=4)


def test_value_stage_validation():
    model = build_model("control_separable")
    with pytest.raises(ValueError):
        value_estimate(model, 0.0, TWO_POINT, stage_times=[0.0, 0.5, 0.4, 1.0],
                       n_paths=4, n_particles=4, dt=0.05, seed=0)
    with pytest.raises(ValueError):
        value_estimate(model, 0.0, TWO_POINT, stage_times=[0.1, 1.0],
                       n_paths=4, n_particles=4, dt=0.05, seed=0)


# ---- generator consistency ----

def test_ito_constant_drift_residual_is_exactly_quadratic():
    beta = 0.6
    model = FilterModel(dim=1, dim_v=1, dim_w=1,
                        b=lambda x, a: np.full(x.shape, beta))
    mu0 = ParticleMeasure.from_points(np.array([[0.1], [0.5]]))
    psi = make_mean_square_functional(1)
    rep = ito_residual(model, psi, 0.0, mu0, _const_control(), [0.1, 0.05, 0.025],
                       n_paths=2, n_particles=4, n_substeps=4, seed=0)
    # deterministic Euler flow: E psi = |m0 + beta dt|^2, so the defect
    # against psi0 + dt * 2 m0 beta is exactly (beta dt)^2
    for delta, res in zip(rep.dt_values, rep.residuals):
        assert res == pytest.approx((beta * delta) ** 2, rel=1e-10)
    assert rep.slope == pytest.approx(2.0, abs=1e-6)


def test_ito_slope_for_deterministic_sinusoidal_drift():
    model = build_model("sin_drift", {"s_v": 0.0, "s_w": 0.0})
    mu0 = ParticleMeasure.from_points(np.array([[-0.3], [0.8]]))
    rep = ito_residual(model, make_mean_functional(1), 0.0, mu0, _const_control(),
                       [0.1, 0.05, 0.025], n_paths=2, n_particles=4, seed=0)
    assert rep.slope >= 1.8


@pytest.mark.filterwarnings("ignore::numpy.exceptions.RankWarning")
def test_ito_hessian_rate_matches_common_noise():
    # single-step probe: the log-log slope is unused, only the rate matters
    scale = 0.7
    model = build_model("common_noise", {"scale": scale})
    psi = make_mean_square_functional(1)
    rep = ito_residual(model, psi, 0.0, TWO_POINT, _const_control(), [0.05],
                       n_paths=600, n_particles=4, n_substeps=4, seed=1)
    rate = (rep.means[0] - rep.psi0) / rep.dt_values[0]
    rate_se = rep.ses[0] / rep.dt_values[0]
    assert rep.generator == pytest.approx(scale**2, abs=1e-14)
    assert abs(rate - scale**2) <= 3.0 * rate_se


# ---- flow growth ----

def test_flow_growth_translate_only_slope():
    scale = 0.7
    model = build_model("common_noise", {"scale": scale})
    rep = flow_lipschitz_check(model, TWO_POINT, _const_control(),
                               s_list=[0.25, 0.5, 0.75, 1.0],
                               n_paths=2000, n_particles=2, dt=0.01, seed=0)
    want = 0.5 * scale**2  # E W2^2(m_s, mu0) = s Tr(sigma sigma^T)/2
    assert abs(rep.slope - want) <= 3.0 * rep.slope_se
    assert rep.r_squared > 0.99


def test_flow_growth_reports_dual_norm(grid1):
    model = build_model("sin_drift")
    rep = flow_lipschitz_check(model, TWO_POINT, _const_control(),
                               s_list=[0.5, 1.0], n_paths=16, n_particles=4,
                               dt=0.05, seed=1, grid=grid1)
    assert rep.dual_means is not None and rep.dual_means.shape == (2,)
    assert np.all(rep.dual_means >= 0.0)
    assert np.all(np.isfinite(rep.w2_means))
    assert rep.r_squared <= 1.0 + 1e-12


def test_flow_growth_time_validation():
    model = build_model("static")
    with pytest.raises(ValueError):
        flow_lipschitz_check(model, TWO_POINT, _const_control(),
                             s_list=[0.0, 0.5], n_paths=4, n_particles=4,
                             dt=0.1, seed=0)
    with pytest.raises(ValueError):
        flow_lipschitz_check(model, TWO_POINT, _const_control(),
                             s_list=[1.5], n_paths=4, n_particles=4,
                             dt=0.1, seed=0)


# ---- dynamic programming ----

def test_dpp_separable_gap_vanishes():
    model = build_model("control_separable")
    rep = dpp_check(model, 0.0, TWO_POINT, 0.5, n_outer=8, n_paths=16,
                    inner_paths=8, n_particles=4, dt=0.05, seed=0)
    assert rep.gap == pytest.approx(0.0, abs=1e-12)
    assert rep.rhs == pytest.approx(model.horizon * min(model.controls) + 2.0,
                                    abs=1e-12)


def test_dpp_split_at_horizon_uses_terminal_cost():
    model = build_model("control_separable")
    rep = dpp_check(model, 0.0, TWO_POINT, model.horizon, n_outer=8, n_paths=16,
                    inner_paths=8, n_particles=4, dt=0.05, seed=1)
    assert rep.gap == pytest.approx(0.0, abs=1e-12)


def test_dpp_single_control_tower_property():
    model = build_model("gauss_cost", {"controls": (0.0,), "horizon": 0.4})
    rep = dpp_check(model, 0.0, TWO_POINT, 0.2, n_outer=24, n_paths=64,
                    inner_paths=32, n_particles=4, dt=0.05, seed=2)
    assert abs(rep.gap) <= 3.0 * rep.mc_error + 1e-9


def test_dpp_time_validation():
    model = build_model("control_separable")
    with pytest.raises(ValueError):
        dpp_check(model, 0.5, TWO_POINT, 0.5, n_outer=4, n_paths=8,
                  inner_paths=8, n_particles=4, dt=0.05, seed=0)


# ---- threading determinism ----

def test_thread_count_does_not_change_results(monkeypatch):
    model = build_model("gauss_cost")
    kwargs = dict(n_paths=1040, n_particles=4, dt=0.1, seed=7)

    monkeypatch.setenv("WCALC_THREADS", "1")
    serial = cost_J(model, 0.0, TWO_POINT, _const_control(), **kwargs)
    monkeypatch.setenv("WCALC_THREADS", "3")
    threaded = cost_J(model, 0.0, TWO_POINT, _const_control(), **kwargs)
    assert serial == threaded
