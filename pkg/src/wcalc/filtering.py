"""Partially observed controlled particle systems and their conditional laws.

The state dynamics

    dX_s = b(X_s, a_s) ds + sigma(X_s, a_s) dV_s + sigma_tilde(a_s) dW_s

carry two independent noises: V drives each particle privately, W is
common and observed.  The conditional law given W is simulated by the
shift decomposition: with Y_s = int sigma_tilde(a_u) dW_u and
X_tilde = X - Y,

    dX_tilde^i = b(X_tilde^i + Y, a) ds + sigma(X_tilde^i + Y, a) dV^i,

and the conditional law is the translate m_s = (I + Y_s)_# m_tilde_s of
the empirical tilde cloud.  When b and sigma vanish the cloud never
moves and m_s is exactly a translate of the initial measure.

Monte-Carlo drivers are chunked over paths; each path owns a
counter-based stream derived from (seed, namespace, path id), with the
whole-horizon W block drawn before the V block, so results do not
depend on chunking or on the WCALC_THREADS worker count.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .calculus import MeasureFunctional
from .fourier import QuadratureGrid, ThetaPoint, dual_norm_lambda
from .measures import ParticleMeasure, w2
from .rng import stream, thread_count

__all__ = [
    "FilterModel",
    "ControlPath",
    "ConditionalFlow",
    "simulate_flow",
    "hamiltonian_K",
    "cost_J",
    "ValueReport",
    "value_estimate",
    "ItoReport",
    "ito_residual",
    "FlowReport",
    "flow_lipschitz_check",
    "DPPReport",
    "dpp_check",
    "weak_equation_residuals",
]

_CHUNK = 512
_TIME_TOL = 1e-9

# stream namespaces; cost_J and value_estimate share one so that the
# tree optimum is an exact lower bound for any cost_J control on a
# common seed
_NS_FLOW = 0
_NS_COST = 1
_NS_ITO = 3
_NS_LIP = 4
_NS_DPP_OUTER = 5


# ----------------------------------------------------------------------
# model and control containers
# ----------------------------------------------------------------------

def _scalar_field(val, x: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.asarray(val, dtype=float), x.shape[:-1])


def _vector_field(val, x: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.asarray(val, dtype=float), x.shape)


@dataclass(frozen=True)
class FilterModel:
    """Coefficients of the partially observed control problem.

    ``b(x, a)`` maps an (..., d) point array to a drift broadcastable to
    the same shape; ``sigma(x, a)`` yields (..., d, dim_v) (a constant
    (d, dim_v) matrix is accepted); ``sigma_tilde(a)`` yields the exact
    (d, dim_w) common-noise loading; ``f(x, a)`` and ``g(x)`` yield
    scalars broadcastable to (...,).  Any coefficient may be None, which
    removes the corresponding term (and its noise draws).  ``controls``
    is the finite action set and ``horizon`` the terminal time.

    Coefficients are probed on a fixed point sample at construction:
    values must be finite and of compatible shape for every control.
    """

    dim: int
    dim_v: int
    dim_w: int
    b: Optional[Callable] = None
    sigma: Optional[Callable] = None
    sigma_tilde: Optional[Callable] = None
    f: Optional[Callable] = None
    g: Optional[Callable] = None
    controls: tuple = (0.0,)
    horizon: float = 1.0

    def __post_init__(self) -> None:
        for name in ("dim", "dim_v", "dim_w"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        controls = tuple(self.controls)
        if not controls:
            raise ValueError("controls must be nonempty")
        object.__setattr__(self, "controls", controls)
        probe = np.stack([np.linspace(-3.0, 3.0, 8)] * self.dim, axis=1)
        for a in controls:
            self._probe(probe, a)

    def _probe(self, x: np.ndarray, a) -> None:
        checks = []
        if self.b is not None:
            checks.append(("b", _vector_field(self.b(x, a), x)))
        if self.sigma is not None:
            sig = np.asarray(self.sigma(x, a), dtype=float)
            checks.append(("sigma", np.broadcast_to(sig, x.shape + (self.dim_v,))))
        if self.sigma_tilde is not None:
            st = np.asarray(self.sigma_tilde(a), dtype=float)
            if st.shape != (self.dim, self.dim_w):
                raise ValueError("sigma_tilde(a) must have shape (dim, dim_w)")
            checks.append(("sigma_tilde", st))
        if self.f is not None:
            checks.append(("f", _scalar_field(self.f(x, a), x)))
        if self.g is not None:
            checks.append(("g", _scalar_field(self.g(x), x)))
        for name, arr in checks:
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"coefficient {name} is not finite on the probe sample")


_ADAPTEDNESS_TAGS = ("open_loop", "w_scenario_tree")


@dataclass(frozen=True)
class ControlPath:
    """Piecewise-constant control: values[i] applies from breakpoints[i] on."""

    breakpoints: np.ndarray
    values: tuple
    adaptedness_tag: str = "open_loop"

    def __post_init__(self) -> None:
        bp = np.asarray(self.breakpoints, dtype=float).reshape(-1)
        if bp.size == 0:
            raise ValueError("breakpoints must be nonempty")
        if bp.size > 1 and np.min(np.diff(bp)) <= 0:
            raise ValueError("breakpoints must be strictly increasing")
        values = tuple(self.values)
        if len(values) != bp.size:
            raise ValueError("one control value per breakpoint is required")
        if self.adaptedness_tag not in _ADAPTEDNESS_TAGS:
            raise ValueError(f"adaptedness_tag must be one of {_ADAPTEDNESS_TAGS}")
        bp.flags.writeable = False
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", values)

    def value_at(self, s: float):
        idx = int(np.searchsorted(self.breakpoints, s + _TIME_TOL, side="right")) - 1
        return self.values[max(idx, 0)]

    @staticmethod
    def constant(a, t_start: float = 0.0) -> "ControlPath":
        return ControlPath(np.array([t_start]), (a,))


@dataclass(frozen=True)
class ConditionalFlow:
    """One realized conditional-law path on a uniform time grid.

    ``tilde_particles[i]`` is the shifted cloud at ``times[i]``; the
    conditional law there is its translate by ``y_path[i]``.
    ``w_increments[i]`` is the common-noise increment over step i.
    """

    times: np.ndarray
    y_path: np.ndarray
    tilde_particles: np.ndarray
    weights: np.ndarray
    w_increments: np.ndarray

    def __post_init__(self) -> None:
        n_t = self.times.shape[0]
        if self.y_path.shape[0] != n_t or self.tilde_particles.shape[0] != n_t:
            raise ValueError("per-time arrays must align with the time grid")
        if self.w_increments.shape[0] != n_t - 1:
            raise ValueError("one noise increment per step is required")
        if self.tilde_particles.shape[1] != self.weights.shape[0]:
            raise ValueError("particle count must be constant along the path")

    def __len__(self) -> int:
        return self.times.shape[0]

    def tilde_measure_at(self, i: int) -> ParticleMeasure:
        return ParticleMeasure(self.tilde_particles[i], self.weights)

    def measure_at(self, i: int) -> ParticleMeasure:
        return ParticleMeasure(self.tilde_particles[i] + self.y_path[i], self.weights)


# ----------------------------------------------------------------------
# time grid, replication, noise
# ----------------------------------------------------------------------

def _time_grid(t0: float, t1: float, dt: float, anchors=()) -> np.ndarray:
    if dt <= 0:
        raise ValueError("dt must be positive")
    span = t1 - t0
    if span <= 0:
        raise ValueError("the time interval is empty")
    steps = int(round(span / dt))
    if steps < 1 or abs(steps * dt - span) > _TIME_TOL * max(1, steps):
        raise ValueError("dt must divide the simulation interval")
    times = t0 + dt * np.arange(steps + 1)
    times[-1] = t1
    for a in np.atleast_1d(np.asarray(anchors, dtype=float)).ravel():
        if t0 - _TIME_TOL <= a <= t1 + _TIME_TOL:
            k = round((a - t0) / dt)
            if abs(t0 + k * dt - a) > _TIME_TOL:
                raise ValueError("dt must divide every control/record interval")
    return times


def _grid_index(s: float, t0: float, dt: float, n_steps: int) -> int:
    k = int(round((s - t0) / dt))
    if abs(t0 + k * dt - s) > _TIME_TOL or not 0 <= k <= n_steps:
        raise ValueError(f"time {s} does not lie on the simulation grid")
    return k


def _replicate(mu0: ParticleMeasure, n_particles: int):
    # k copies of the support so the initial cloud equals mu0 exactly
    if n_particles < 2:
        raise ValueError("n_particles must be at least 2")
    k = -(-n_particles // len(mu0))
    return np.tile(mu0.points, (k, 1)), np.tile(mu0.weights / k, k)


def _check_dim(model: FilterModel, mu0: ParticleMeasure) -> None:
    if mu0.dim != model.dim:
        raise ValueError("initial measure dimension must match the model")


def _path_chunks(n_paths: int):
    return [np.arange(i, min(i + _CHUNK, n_paths)) for i in range(0, n_paths, _CHUNK)]


def _thread_map(fn, chunks):
    n = thread_count()
    if n > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=n) as ex:
            return list(ex.map(fn, chunks))
    return [fn(c) for c in chunks]


def _draw_noise(model: FilterModel, seed: int, path_ids, prefix, steps: int,
                n_pts: int, dt: float):
    """Whole-horizon increments per path: the W block, then the V block."""
    need_w = model.sigma_tilde is not None
    need_v = model.sigma is not None
    p = len(path_ids)
    root = math.sqrt(dt)
    dw = np.empty((p, steps, model.dim_w)) if need_w else None
    dv = np.empty((p, steps, n_pts, model.dim_v)) if need_v else None
    for j, pid in enumerate(path_ids):
        gen = stream(seed, *prefix, int(pid))
        if need_w:
            dw[j] = root * gen.standard_normal((steps, model.dim_w))
        if need_v:
            dv[j] = root * gen.standard_normal((steps, n_pts, model.dim_v))
    return dw, dv


# ----------------------------------------------------------------------
# the Euler kernel
# ----------------------------------------------------------------------

def _advance(model: FilterModel, tilde, y, a, dt, dw_s, dv_s):
    # one Euler step of the shift decomposition; start-of-step values
    # feed every coefficient
    if model.b is not None or model.sigma is not None:
        x = tilde + y[..., None, :]
        new = tilde
        if model.b is not None:
            new = new + dt * _vector_field(model.b(x, a), x)
        if model.sigma is not None:
            sig = np.asarray(model.sigma(x, a), dtype=float)
            if sig.ndim == 2:
                new = new + dv_s @ sig.T
            else:
                sig = np.broadcast_to(sig, x.shape + (model.dim_v,))
                new = new + np.einsum("...ij,...j->...i", sig, dv_s)
        tilde = new
    if model.sigma_tilde is not None:
        st = np.asarray(model.sigma_tilde(a), dtype=float)
        y = y + dw_s @ st.T
    return tilde, y


def _simulate_chunk(model, n_chunk, pts0, wts, a_seq, dt, dw, dv,
                    record_idx=frozenset(), with_cost=False, terminal=True):
    """Evolve a chunk of paths; optionally accumulate the left-Riemann cost."""
    n_pts, d = pts0.shape
    tilde = np.broadcast_to(pts0, (n_chunk, n_pts, d)).copy()
    y = np.zeros((n_chunk, d))
    rec_tilde, rec_y = {}, {}
    if 0 in record_idx:
        rec_tilde[0], rec_y[0] = tilde.copy(), y.copy()
    cost = np.zeros(n_chunk) if with_cost else None
    for s, a in enumerate(a_seq):
        if with_cost and model.f is not None:
            x = tilde + y[:, None, :]
            cost += dt * (_scalar_field(model.f(x, a), x) @ wts)
        tilde, y = _advance(
            model, tilde, y, a, dt,
            dw[:, s] if dw is not None else None,
            dv[:, s] if dv is not None else None,
        )
        if s + 1 in record_idx:
            rec_tilde[s + 1], rec_y[s + 1] = tilde.copy(), y.copy()
    if with_cost and terminal and model.g is not None:
        x = tilde + y[:, None, :]
        cost += _scalar_field(model.g(x), x) @ wts
    return cost, rec_tilde, rec_y


# ----------------------------------------------------------------------
# public drivers
# ----------------------------------------------------------------------

def simulate_flow(model: FilterModel, mu0: ParticleMeasure, control: ControlPath,
                  n_particles: int, dt: float, seed: int,
                  path_id: int = 0) -> ConditionalFlow:
    """Simulate one conditional-law path from the first breakpoint to the horizon.

    The initial support is replicated to at least ``n_particles``
    particles with split weights, so the time-0 measure equals ``mu0``
    exactly and the static model keeps it frozen.  One common W path
    drives the translate; each particle carries its own V stream slice.
    """
    _check_dim(model, mu0)
    t0 = float(control.breakpoints[0])
    times = _time_grid(t0, model.horizon, dt, control.breakpoints)
    steps = times.shape[0] - 1
    pts0, wts = _replicate(mu0, n_particles)
    dw, dv = _draw_noise(model, seed, [path_id], (_NS_FLOW,), steps, len(wts), dt)

    n_pts, d = pts0.shape
    tilde_hist = np.empty((steps + 1, n_pts, d))
    y_hist = np.zeros((steps + 1, d))
    tilde_hist[0] = pts0
    tilde, y = pts0.copy(), np.zeros(d)
    for s in range(steps):
        tilde, y = _advance(
            model, tilde, y, control.value_at(times[s]), dt,
            dw[0, s] if dw is not None else None,
            dv[0, s] if dv is not None else None,
        )
        tilde_hist[s + 1] = tilde
        y_hist[s + 1] = y
    w_inc = dw[0] if dw is not None else np.zeros((steps, model.dim_w))
    return ConditionalFlow(
        times=times, y_path=y_hist, tilde_particles=tilde_hist,
        weights=wts, w_increments=w_inc,
    )


def hamiltonian_K(model: FilterModel, a, mu: ParticleMeasure,
                  p=None, q=None, m_mat=None) -> float:
    """K(a, mu, p, q, M) = int [f + b.p + Tr(q sigma sigma^T)/2] dmu
    + Tr(sigma_tilde sigma_tilde^T(a) M)/2.

    ``p`` maps the (n, d) support to an (n, d) field, ``q`` to an
    (n, d, d) field; ``m_mat`` is a symmetric (d, d) matrix.  Absent
    coefficients or arguments contribute zero.
    """
    _check_dim(model, mu)
    x, wts = mu.points, mu.weights
    total = 0.0
    if model.f is not None:
        total += float(_scalar_field(model.f(x, a), x) @ wts)
    if model.b is not None and p is not None:
        bv = _vector_field(model.b(x, a), x)
        pv = np.asarray(p(x), dtype=float)
        total += float(np.einsum("n,ni,ni->", wts, bv, pv))
    if model.sigma is not None and q is not None:
        sig = np.asarray(model.sigma(x, a), dtype=float)
        sig = np.broadcast_to(sig, x.shape + (model.dim_v,))
        ss_t = np.einsum("nij,nkj->nik", sig, sig)
        qv = np.asarray(q(x), dtype=float)
        total += 0.5 * float(np.einsum("n,nij,nji->", wts, qv, ss_t))
    if model.sigma_tilde is not None and m_mat is not None:
        st = np.asarray(model.sigma_tilde(a), dtype=float)
        total += 0.5 * float(np.trace(st @ st.T @ np.asarray(m_mat, dtype=float)))
    return total


def cost_J(model: FilterModel, t: float, mu0: ParticleMeasure, control: ControlPath,
           n_paths: int, n_particles: int, dt: float, seed: int, ids=()):
    """Monte-Carlo estimate of E[int_t^T f(X_s, a_s) ds + g(X_T)].

    Running cost by left Riemann sums on the Euler grid; returns
    (mean, standard error) over ``n_paths`` independent W paths.
    ``ids`` prefixes the per-path stream identifiers, which lets nested
    estimators keep disjoint noise.
    """
    _check_dim(model, mu0)
    times = _time_grid(t, model.horizon, dt, control.breakpoints)
    a_seq = [control.value_at(s) for s in times[:-1]]
    pts0, wts = _replicate(mu0, n_particles)

    def worker(chunk_ids):
        dw, dv = _draw_noise(model, seed, chunk_ids, (_NS_COST, *ids),
                             len(a_seq), len(wts), dt)
        cost, _, _ = _simulate_chunk(model, len(chunk_ids), pts0, wts, a_seq,
                                     dt, dw, dv, with_cost=True)
        return cost

    costs = np.concatenate(_thread_map(worker, _path_chunks(n_paths)))
    se = float(costs.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return float(costs.mean()), se


# ----------------------------------------------------------------------
# value estimation on a W-scenario tree
# ----------------------------------------------------------------------

@dataclass
class ValueReport:
    """Tree-adapted value estimate with the open-loop comparison."""

    v_hat: float
    se: float
    v_open: float
    gap_bound: float
    n_policies: int
    n_branches: int
    stage_times: np.ndarray
    open_values: dict
    best_policy: tuple

    def to_dict(self) -> dict:
        return {
            "v_hat": self.v_hat,
            "se": self.se,
            "v_open": self.v_open,
            "gap_bound": self.gap_bound,
            "n_policies": self.n_policies,
            "n_branches": self.n_branches,
            "stage_times": np.asarray(self.stage_times).tolist(),
            "open_values": {str(k): v for k, v in self.open_values.items()},
            "best_policy": list(self.best_policy),
        }


def value_estimate(model: FilterModel, t: float, mu0: ParticleMeasure,
                   n_stages: int = 2, stage_times=None, n_paths: int = 256,
                   n_particles: int = 8, dt: float = 0.02, seed: int = 0,
                   policy_budget: int = 4096, ids=()) -> ValueReport:
    """Exact minimization over scenario-tree-adapted piecewise-constant controls.

    Stages partition [t, horizon].  After each stage the sign pattern of
    the stage-aggregate W increment is observed, giving 2^dim_w branches
    (one branch when sigma_tilde is None); a policy assigns one control
    to every tree node and all policies are enumerated on common noise.
    ``v_hat`` is the tree optimum; ``v_open`` restricts to
    history-independent policies, so ``gap_bound = v_open - v_hat`` is a
    nonnegative adaptedness diagnostic.  Raises ValueError when the
    policy count exceeds ``policy_budget``.
    """
    _check_dim(model, mu0)
    end = model.horizon
    if stage_times is None:
        if n_stages < 1:
            raise ValueError("n_stages must be at least 1")
        stage_times = np.linspace(t, end, n_stages + 1)
    stage_times = np.asarray(stage_times, dtype=float)
    n_stages = stage_times.shape[0] - 1
    if n_stages < 1 or np.min(np.diff(stage_times)) <= 0:
        raise ValueError("stage times must be strictly increasing")
    if abs(stage_times[0] - t) > _TIME_TOL or abs(stage_times[-1] - end) > _TIME_TOL:
        raise ValueError("stages must cover [t, horizon]")

    times = _time_grid(t, end, dt, stage_times)
    n_steps = times.shape[0] - 1
    stage_idx = [_grid_index(s, t, dt, n_steps) for s in stage_times]

    actions = model.controls
    n_act = len(actions)
    branches = 2 ** model.dim_w if model.sigma_tilde is not None else 1
    n_nodes = sum(branches**s for s in range(n_stages))
    n_policies = n_act**n_nodes
    if n_policies > policy_budget:
        raise ValueError(
            f"scenario tree too large: {n_policies} policies exceed the budget {policy_budget}"
        )

    seqs = list(itertools.product(range(n_act), repeat=n_stages))
    pts0, wts = _replicate(mu0, n_particles)

    def worker(chunk_ids):
        dw, dv = _draw_noise(model, seed, chunk_ids, (_NS_COST, *ids),
                             n_steps, len(wts), dt)
        costmat = np.empty((len(chunk_ids), len(seqs)))
        for col, seq in enumerate(seqs):
            a_seq = []
            for s in range(n_stages):
                a_seq += [actions[seq[s]]] * (stage_idx[s + 1] - stage_idx[s])
            cost, _, _ = _simulate_chunk(model, len(chunk_ids), pts0, wts,
                                         a_seq, dt, dw, dv, with_cost=True)
            costmat[:, col] = cost
        hist = np.zeros((len(chunk_ids), max(n_stages - 1, 0)), dtype=np.int64)
        if branches > 1:
            bit_w = 2 ** np.arange(model.dim_w)
            for s in range(n_stages - 1):
                agg = dw[:, stage_idx[s]:stage_idx[s + 1], :].sum(axis=1)
                hist[:, s] = (agg >= 0.0).astype(np.int64) @ bit_w
        return costmat, hist

    parts = _thread_map(worker, _path_chunks(n_paths))
    costmat = np.concatenate([p[0] for p in parts])
    hist = np.concatenate([p[1] for p in parts])

    # node index per path and stage: offset of the stage plus the flat
    # branch-history prefix
    path_node = np.zeros((n_paths, n_stages), dtype=np.int64)
    flat = np.zeros(n_paths, dtype=np.int64)
    offset = 0
    for s in range(n_stages):
        path_node[:, s] = offset + flat
        offset += branches**s
        if s < n_stages - 1:
            flat = flat * branches + hist[:, s]

    col_means = costmat.mean(axis=0)
    open_values = {
        tuple(actions[i] for i in seq): float(col_means[col])
        for col, seq in enumerate(seqs)
    }
    v_open = float(col_means.min())

    pow_seq = n_act ** np.arange(n_stages - 1, -1, -1)
    rows = np.arange(n_paths)
    best_val, best_assign, best_paths = math.inf, None, None
    for assign in itertools.product(range(n_act), repeat=n_nodes):
        digits = np.asarray(assign, dtype=np.int64)[path_node]
        vals = costmat[rows, digits @ pow_seq]
        mean = float(vals.mean())
        if mean < best_val:
            best_val, best_assign, best_paths = mean, assign, vals

    se = float(best_paths.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return ValueReport(
        v_hat=best_val,
        se=se,
        v_open=v_open,
        gap_bound=v_open - best_val,
        n_policies=n_policies,
        n_branches=branches,
        stage_times=stage_times,
        open_values=open_values,
        best_policy=tuple(actions[i] for i in best_assign),
    )


# ----------------------------------------------------------------------
# consistency checks
# ----------------------------------------------------------------------

@dataclass
class ItoReport:
    dt_values: np.ndarray
    means: np.ndarray
    ses: np.ndarray
    residuals: np.ndarray
    psi0: float
    generator: float
    slope: float

    def to_dict(self) -> dict:
        return {
            "dt_values": self.dt_values.tolist(),
            "means": self.means.tolist(),
            "ses": self.ses.tolist(),
            "residuals": self.residuals.tolist(),
            "psi0": self.psi0,
            "generator": self.generator,
            "slope": self.slope,
        }


def ito_residual(model: FilterModel, psi: MeasureFunctional, t: float,
                 mu0: ParticleMeasure, control: ControlPath, dt_list,
                 n_paths: int = 2000, n_particles: int = 8,
                 n_substeps: int = 8, seed: int = 0) -> ItoReport:
    """One-step generator consistency of a smooth functional of the flow.

    For each step size Delta the residual

        | E[psi(t + Delta, m_Delta)] - psi(t, mu0) - Delta * G |

    is estimated, where G collects the closed-form generator terms at
    (t, mu0): d_t psi + int b . D_mu psi dmu
    + int Tr(D_xmu psi sigma sigma^T) dmu / 2
    + Tr(H psi sigma_tilde sigma_tilde^T) / 2.  The report carries the
    per-Delta means, standard errors, residuals, and the log-log slope.
    """
    _check_dim(model, mu0)
    d = model.dim
    theta0 = ThetaPoint(t, np.zeros(d), mu0)
    psi0 = float(psi(theta0))
    a0 = control.value_at(t)

    gen = 0.0
    if psi.d_t is not None:
        gen += float(psi.d_t(theta0))
    pts, wts = mu0.points, mu0.weights
    if model.b is not None and psi.d_mu is not None:
        bv = _vector_field(model.b(pts, a0), pts)
        grad = np.stack([np.asarray(psi.d_mu(theta0, x), dtype=float) for x in pts])
        gen += float(np.einsum("n,ni,ni->", wts, bv, grad))
    if model.sigma is not None and psi.d_xmu is not None:
        sig = np.asarray(model.sigma(pts, a0), dtype=float)
        sig = np.broadcast_to(sig, pts.shape + (model.dim_v,))
        ss_t = np.einsum("nij,nkj->nik", sig, sig)
        curv = np.stack([np.asarray(psi.d_xmu(theta0, x), dtype=float) for x in pts])
        gen += 0.5 * float(np.einsum("n,nij,nji->", wts, curv, ss_t))
    if model.sigma_tilde is not None and psi.hessian is not None:
        st = np.asarray(model.sigma_tilde(a0), dtype=float)
        gen += 0.5 * float(np.trace(np.asarray(psi.hessian(theta0)) @ (st @ st.T)))

    pts0, wts_rep = _replicate(mu0, n_particles)
    dt_values = np.asarray(list(dt_list), dtype=float)
    means = np.empty(dt_values.shape[0])
    ses = np.empty_like(means)
    for k, delta in enumerate(dt_values):
        dt_sim = delta / n_substeps
        a_seq = [control.value_at(t + j * dt_sim) for j in range(n_substeps)]

        def worker(chunk_ids, k=k, dt_sim=dt_sim, a_seq=a_seq, delta=delta):
            dw, dv = _draw_noise(model, seed, chunk_ids, (_NS_ITO, k),
                                 n_substeps, len(wts_rep), dt_sim)
            _, rec_t, rec_y = _simulate_chunk(model, len(chunk_ids), pts0, wts_rep,
                                              a_seq, dt_sim, dw, dv,
                                              record_idx={n_substeps})
            tilde, y = rec_t[n_substeps], rec_y[n_substeps]
            vals = np.empty(len(chunk_ids))
            for j in range(len(chunk_ids)):
                m = ParticleMeasure(tilde[j] + y[j], wts_rep)
                vals[j] = psi(ThetaPoint(t + delta, np.zeros(d), m))
            return vals

        vals = np.concatenate(_thread_map(worker, _path_chunks(n_paths)))
        means[k] = vals.mean()
        ses[k] = vals.std(ddof=1) / math.sqrt(n_paths) if n_paths > 1 else 0.0

    residuals = np.abs(means - psi0 - dt_values * gen)
    floor = 1e-14 * max(1.0, abs(psi0))
    slope = float(np.polyfit(np.log(dt_values), np.log(np.maximum(residuals, floor)), 1)[0])
    return ItoReport(dt_values, means, ses, residuals, psi0, gen, slope)


@dataclass
class FlowReport:
    s_values: np.ndarray
    w2_means: np.ndarray
    w2_ses: np.ndarray
    slope: float
    slope_se: float
    r_squared: float
    dual_means: Optional[np.ndarray] = None
    dual_ses: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        out = {
            "s_values": self.s_values.tolist(),
            "w2_means": self.w2_means.tolist(),
            "w2_ses": self.w2_ses.tolist(),
            "slope": self.slope,
            "slope_se": self.slope_se,
            "r_squared": self.r_squared,
        }
        if self.dual_means is not None:
            out["dual_means"] = self.dual_means.tolist()
            out["dual_ses"] = self.dual_ses.tolist()
        return out


def flow_lipschitz_check(model: FilterModel, mu0: ParticleMeasure,
                         control: ControlPath, s_list, n_paths: int = 512,
                         n_particles: int = 8, dt: float = 0.01, seed: int = 0,
                         grid: Optional[QuadratureGrid] = None) -> FlowReport:
    """Linear-in-time growth of E[W2^2(m_s, mu0)] along the flow.

    Estimates the squared distance to the initial measure at each s, the
    through-origin slope in (s - t) with a per-path standard error, and
    the through-origin R^2 of the mean curve.  When b and sigma are both
    None the cloud is a translate and W2^2 = |Y_s|^2 / 2 is used exactly;
    otherwise each sampled path solves the transport problem.  With a
    quadrature grid the squared dual norm is reported alongside.
    """
    _check_dim(model, mu0)
    t0 = float(control.breakpoints[0])
    s_values = np.asarray(list(s_list), dtype=float)
    if s_values.size == 0 or np.any(s_values <= t0) or np.any(s_values > model.horizon + _TIME_TOL):
        raise ValueError("record times must lie in (t0, horizon]")
    end = float(s_values.max())
    anchors = np.concatenate([np.asarray(control.breakpoints), s_values])
    times = _time_grid(t0, end, dt, anchors)
    n_steps = times.shape[0] - 1
    rec_idx = [_grid_index(s, t0, dt, n_steps) for s in s_values]
    a_seq = [control.value_at(s) for s in times[:-1]]
    pts0, wts = _replicate(mu0, n_particles)
    translate_only = model.b is None and model.sigma is None
    want_dual = grid is not None

    def worker(chunk_ids):
        dw, dv = _draw_noise(model, seed, chunk_ids, (_NS_LIP,),
                             n_steps, len(wts), dt)
        _, rec_t, rec_y = _simulate_chunk(model, len(chunk_ids), pts0, wts,
                                          a_seq, dt, dw, dv,
                                          record_idx=set(rec_idx))
        w2sq = np.empty((len(chunk_ids), s_values.shape[0]))
        dual = np.empty_like(w2sq) if want_dual else None
        for col, idx in enumerate(rec_idx):
            tilde, y = rec_t[idx], rec_y[idx]
            if translate_only:
                w2sq[:, col] = 0.5 * np.einsum("pi,pi->p", y, y)
            else:
                for j in range(len(chunk_ids)):
                    dist, _ = w2(ParticleMeasure(tilde[j] + y[j], wts), mu0)
                    w2sq[j, col] = dist * dist
            if want_dual:
                for j in range(len(chunk_ids)):
                    m = ParticleMeasure(tilde[j] + y[j], wts)
                    dual[j, col] = dual_norm_lambda(m, mu0, grid) ** 2
        return w2sq, dual

    parts = _thread_map(worker, _path_chunks(n_paths))
    w2sq = np.concatenate([p[0] for p in parts])
    dual = np.concatenate([p[1] for p in parts]) if want_dual else None

    x = s_values - t0
    denom = float(x @ x)
    per_path = (w2sq @ x) / denom
    slope = float(per_path.mean())
    slope_se = float(per_path.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    w2_means = w2sq.mean(axis=0)
    w2_ses = w2sq.std(axis=0, ddof=1) / math.sqrt(n_paths) if n_paths > 1 else np.zeros_like(w2_means)
    ss_tot = float(w2_means @ w2_means)
    resid = w2_means - slope * x
    r_squared = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0

    dual_means = dual.mean(axis=0) if want_dual else None
    dual_ses = (
        dual.std(axis=0, ddof=1) / math.sqrt(n_paths)
        if want_dual and n_paths > 1 else (np.zeros_like(dual_means) if want_dual else None)
    )
    return FlowReport(s_values, w2_means, w2_ses, slope, slope_se, r_squared,
                      dual_means, dual_ses)


@dataclass
class DPPReport:
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    gap: float
    mc_error: float
    r: float
    per_control: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "lhs_se": self.lhs_se,
            "rhs": self.rhs,
            "rhs_se": self.rhs_se,
            "gap": self.gap,
            "mc_error": self.mc_error,
            "r": self.r,
            "per_control": self.per_control,
        }


def dpp_check(model: FilterModel, t: float, mu0: ParticleMeasure, r: float,
              n_outer: int = 24, n_paths: int = 192, inner_paths: int = 96,
              n_particles: int = 8, dt: float = 0.02, seed: int = 0,
              policy_budget: int = 4096) -> DPPReport:
    """Deterministic-time dynamic programming gap.

    Compares v_hat(t, mu0) (tree split at r) against
    min_a E[int_t^r f(X_s, a) ds + v_hat(r, m_r)] with the inner value
    re-estimated per outer path (one open-loop stage on [r, horizon]).
    The reported mc_error combines the outer standard error, the mean
    inner standard error, and the lhs standard error.  At r = horizon
    the inner value degenerates to the terminal cost.
    """
    _check_dim(model, mu0)
    end = model.horizon
    if not t < r <= end + _TIME_TOL:
        raise ValueError("r must lie in (t, horizon]")
    at_end = abs(r - end) <= _TIME_TOL

    lhs_stages = (t, end) if at_end else (t, r, end)
    lhs = value_estimate(model, t, mu0, stage_times=lhs_stages, n_paths=n_paths,
                         n_particles=n_particles, dt=dt, seed=seed,
                         policy_budget=policy_budget)

    times = _time_grid(t, r, dt)
    steps = times.shape[0] - 1
    pts0, wts = _replicate(mu0, n_particles)
    per_control = []
    rhs, rhs_se = math.inf, math.inf
    for a_idx, a in enumerate(model.controls):
        a_seq = [a] * steps
        dw, dv = _draw_noise(model, seed, np.arange(n_outer), (_NS_DPP_OUTER, a_idx),
                             steps, len(wts), dt)
        stage_cost, rec_t, rec_y = _simulate_chunk(
            model, n_outer, pts0, wts, a_seq, dt, dw, dv,
            record_idx={steps}, with_cost=True, terminal=False,
        )
        tilde, y = rec_t[steps], rec_y[steps]
        inner_vals = np.empty(n_outer)
        inner_ses = np.empty(n_outer)
        for p in range(n_outer):
            m_r = ParticleMeasure(tilde[p] + y[p], wts)
            if at_end:
                x = m_r.points
                inner_vals[p] = float(_scalar_field(model.g(x), x) @ wts) if model.g is not None else 0.0
                inner_ses[p] = 0.0
            else:
                rep = value_estimate(model, r, m_r, n_stages=1, n_paths=inner_paths,
                                     n_particles=len(m_r), dt=dt, seed=seed,
                                     policy_budget=policy_budget, ids=(a_idx, p))
                inner_vals[p] = rep.v_hat
                inner_ses[p] = rep.se
        totals = stage_cost + inner_vals
        mean = float(totals.mean())
        se_outer = float(totals.std(ddof=1) / math.sqrt(n_outer)) if n_outer > 1 else 0.0
        se = se_outer + float(inner_ses.mean())
        per_control.append({"control": a, "mean": mean, "se": se})
        if mean < rhs:
            rhs, rhs_se = mean, se

    gap = lhs.v_hat - rhs
    return DPPReport(
        lhs=lhs.v_hat, lhs_se=lhs.se, rhs=rhs, rhs_se=rhs_se, gap=gap,
        mc_error=lhs.se + rhs_se, r=r, per_control=per_control,
    )


def weak_equation_residuals(model: FilterModel, flow: ConditionalFlow,
                            control: ControlPath, h, grad_h, hess_h=None) -> np.ndarray:
    """Per-step defects of the conditional-law weak equation for a test h.

    Computes m_{s+dt}(h) - m_s(h) - m_s(L^a h) dt - m_s(M^a h) . dW_s with
    L^a h = b.Dh + Tr((sigma sigma^T + sigma_tilde sigma_tilde^T) D^2 h)/2
    and M^a h = sigma_tilde^T Dh.  The mean defect is O(dt) for smooth h.
    """
    wts = flow.weights
    n_steps = len(flow) - 1
    res = np.empty(n_steps)
    for s in range(n_steps):
        x = flow.tilde_particles[s] + flow.y_path[s]
        x1 = flow.tilde_particles[s + 1] + flow.y_path[s + 1]
        dt_s = float(flow.times[s + 1] - flow.times[s])
        a = control.value_at(flow.times[s])

        increment = float(_scalar_field(h(x1), x1) @ wts - _scalar_field(h(x), x) @ wts)
        grad = np.broadcast_to(np.asarray(grad_h(x), dtype=float), x.shape)

        drift = 0.0
        if model.b is not None:
            bv = _vector_field(model.b(x, a), x)
            drift += float(np.einsum("n,ni,ni->", wts, bv, grad))
        if hess_h is not None:
            hv = np.broadcast_to(np.asarray(hess_h(x), dtype=float),
                                 x.shape + (model.dim,))
            diffusion = np.zeros((x.shape[0], model.dim, model.dim))
            if model.sigma is not None:
                sig = np.asarray(model.sigma(x, a), dtype=float)
                sig = np.broadcast_to(sig, x.shape + (model.dim_v,))
                diffusion = diffusion + np.einsum("nij,nkj->nik", sig, sig)
            if model.sigma_tilde is not None:
                st = np.asarray(model.sigma_tilde(a), dtype=float)
                diffusion = diffusion + (st @ st.T)[None, :, :]
            drift += 0.5 * float(np.einsum("n,nij,nji->", wts, hv, diffusion))

        noise = 0.0
        if model.sigma_tilde is not None:
            st = np.asarray(model.sigma_tilde(a), dtype=float)
            m_mh = np.einsum("n,ni,ik->k", wts, grad, st)
            noise = float(m_mh @ flow.w_increments[s])

        res[s] = increment - drift * dt_s - noise
    return res
