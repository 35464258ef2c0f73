"""Doubled-variable second-order machinery: matrix sandwiches, jets, doubling runs.

For a doubled maximum of u(theta) - v(theta_tilde) - (alpha/2) d_F^2 the
second-order blocks (X, X_tilde) in the y-and-measure directions must fit
between a negative multiple of the identity and a positive multiple of
the difference quadratic form

    K = [[ I, -I],
         [-I,  I]]   (blocks of size 2d),

with mode-dependent constants.  ``check_sandwich`` certifies both sides
by eigenvalue margins.  ``assemble_jets`` packages the first- and
second-order data of the doubled maximum into super/subjet containers,
and ``doubling_experiment`` runs the full doubling procedure on a finite
candidate set with the gauge-perturbed maximizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .calculus import Jet, dmu_psi, dmu_psi_tilde, dxmu_psi, dxmu_psi_tilde
from .fourier import QuadratureGrid, ThetaPoint, d_F, rho_F2
from .gauge import GaugeParams, perturbed_maximize

__all__ = [
    "SandwichInstance",
    "SandwichReport",
    "check_sandwich",
    "assemble_jets",
    "DoublingReport",
    "doubling_experiment",
]

PSD_TOL = 1e-10


@dataclass(frozen=True)
class SandwichInstance:
    """Symmetric blocks X, X_tilde in S^{2d} with the doubling parameters."""

    x: np.ndarray
    x_tilde: np.ndarray
    alpha: float
    epsilon: float

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        xt = np.asarray(self.x_tilde, dtype=float)
        if x.shape != xt.shape or x.ndim != 2 or x.shape[0] != x.shape[1]:
            raise ValueError("X and X_tilde must be square matrices of equal size")
        if x.shape[0] % 2 != 0:
            raise ValueError("blocks must have even size 2d")
        for mat, name in ((x, "X"), (xt, "X_tilde")):
            if np.max(np.abs(mat - mat.T)) > 1e-10:
                raise ValueError(f"{name} must be symmetric")
        if self.alpha <= 0 or self.epsilon <= 0:
            raise ValueError("alpha and epsilon must be positive")
        object.__setattr__(self, "x", 0.5 * (x + x.T))
        object.__setattr__(self, "x_tilde", 0.5 * (xt + xt.T))


@dataclass(frozen=True)
class SandwichReport:
    satisfied: bool
    left_margin: float
    right_margin: float
    left_violation: bool
    right_violation: bool
    witness: Optional[np.ndarray]

    def to_dict(self) -> dict:
        return {
            "satisfied": self.satisfied,
            "left_margin": self.left_margin,
            "right_margin": self.right_margin,
            "left_violation": self.left_violation,
            "right_violation": self.right_violation,
            "witness": None if self.witness is None else self.witness.tolist(),
        }


def _difference_form(two_d: int) -> np.ndarray:
    eye = np.eye(two_d)
    return np.block([[eye, -eye], [-eye, eye]])


def check_sandwich(instance: SandwichInstance, mode: str = "ishii") -> SandwichReport:
    """Certify the two-sided matrix bound for diag(X, X_tilde).

    mode "ishii":        -(1/eps + 2 alpha) I <= diag <= (alpha + 2 eps alpha^2) K
    mode "comparison":   -(3/eps) I <= diag <= (3/eps) K

    Margins are smallest eigenvalues of the slack matrices; the bound is
    accepted down to -1e-10.  On a right-side violation the most negative
    eigenvector is returned as a witness.
    """
    if mode == "ishii":
        c_left = 1.0 / instance.epsilon + 2.0 * instance.alpha
        c_right = instance.alpha + 2.0 * instance.epsilon * instance.alpha**2
    elif mode == "comparison":
        c_left = 3.0 / instance.epsilon
        c_right = 3.0 / instance.epsilon
    else:
        raise ValueError("mode must be 'ishii' or 'comparison'")

    two_d = instance.x.shape[0]
    diag = np.block(
        [
            [instance.x, np.zeros((two_d, two_d))],
            [np.zeros((two_d, two_d)), instance.x_tilde],
        ]
    )
    left_slack = diag + c_left * np.eye(2 * two_d)
    right_slack = c_right * _difference_form(two_d) - diag

    left_margin = float(np.linalg.eigvalsh(left_slack)[0])
    evals, evecs = np.linalg.eigh(right_slack)
    right_margin = float(evals[0])

    left_violation = left_margin < -PSD_TOL
    right_violation = right_margin < -PSD_TOL
    witness = evecs[:, 0].copy() if right_violation else None
    return SandwichReport(
        satisfied=not (left_violation or right_violation),
        left_margin=left_margin,
        right_margin=right_margin,
        left_violation=left_violation,
        right_violation=right_violation,
        witness=witness,
    )


# ----------------------------------------------------------------------
# jets of the doubled maximum
# ----------------------------------------------------------------------

def assemble_jets(alpha: float, theta_star: ThetaPoint, theta_tilde_star: ThetaPoint,
                  x_mat: np.ndarray, x_tilde_mat: np.ndarray, grid: QuadratureGrid):
    """Super/subjet pair at a doubled maximum with penalty (alpha/2) d_F^2.

    With epsilon = 1/alpha, the superjet of u at theta_star carries

        (alpha (t* - t~*), alpha (y* - y~*), X11,
         x -> alpha (m(mu*) - m(mu~*)) + D_mu Psi(mu*, x)/(2 eps),
         x -> D_xmu Psi(mu*, x)/(2 eps), X12, X22)

    and the subjet of v at theta_tilde_star mirrors it with Psi_tilde at
    mu~* and negated X_tilde blocks.  First-order slots vanish when the
    two base points coincide.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    d = theta_star.dim
    x_mat = np.asarray(x_mat, dtype=float)
    x_tilde_mat = np.asarray(x_tilde_mat, dtype=float)
    if x_mat.shape != (2 * d, 2 * d) or x_tilde_mat.shape != (2 * d, 2 * d):
        raise ValueError("X blocks must have shape (2d, 2d)")
    eps = 1.0 / alpha
    mu_s, mu_t = theta_star.mu, theta_tilde_star.mu
    dm = mu_s.mean() - mu_t.mean()

    def f_plus(x):
        return alpha * dm + dmu_psi(mu_s, mu_s, mu_t, x, grid, eps)

    def g_plus(x):
        return dxmu_psi(mu_s, mu_s, mu_t, x, grid, eps)

    def f_minus(x):
        return alpha * dm - dmu_psi_tilde(mu_t, mu_s, mu_t, x, grid, eps)

    def g_minus(x):
        return -dxmu_psi_tilde(mu_t, mu_s, mu_t, x, grid, eps)

    jet_plus = Jet(
        b=alpha * (theta_star.t - theta_tilde_star.t),
        p=alpha * (theta_star.y - theta_tilde_star.y),
        x11=x_mat[:d, :d],
        f=f_plus,
        g=g_plus,
        x12=x_mat[:d, d:],
        x22=x_mat[d:, d:],
    )
    jet_minus = Jet(
        b=alpha * (theta_star.t - theta_tilde_star.t),
        p=alpha * (theta_star.y - theta_tilde_star.y),
        x11=-x_tilde_mat[:d, :d],
        f=f_minus,
        g=g_minus,
        x12=-x_tilde_mat[:d, d:],
        x22=-x_tilde_mat[d:, d:],
    )
    return jet_plus, jet_minus


# ----------------------------------------------------------------------
# the doubling experiment
# ----------------------------------------------------------------------

@dataclass
class DoublingReport:
    theta_star: ThetaPoint
    theta_tilde_star: ThetaPoint
    objective: float
    distance: float
    diagonal: bool
    lipschitz_emp: float
    apriori: list = field(default_factory=list)
    gap_bound_ok: bool = True
    gap: float = 0.0
    certificate: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "distance": self.distance,
            "diagonal": self.diagonal,
            "lipschitz_emp": self.lipschitz_emp,
            "apriori": self.apriori,
            "gap_bound_ok": self.gap_bound_ok,
            "gap": self.gap,
            "certificate": {
                k: v for k, v in self.certificate.items() if k != "witness"
            },
        }


def _empirical_lipschitz(v: Callable, candidates, grid: QuadratureGrid) -> float:
    """max |v(a) - v(b)| / dist over candidate pairs, preferring equal times."""
    vals = [float(v(c)) for c in candidates]
    best = 0.0
    same_t_seen = False
    for i in range(len(candidates)):
        for j in range(i + 1, len(candidates)):
            a, b = candidates[i], candidates[j]
            same_t = abs(a.t - b.t) < 1e-12
            if same_t:
                dy = a.y - b.y
                dist = np.sqrt(dy @ dy + rho_F2(a.mu, b.mu, grid))
            else:
                dist = d_F(a, b, grid)
            if dist < 1e-12:
                continue
            ratio = abs(vals[i] - vals[j]) / dist
            if same_t and not same_t_seen:
                best, same_t_seen = ratio, True
            elif same_t == same_t_seen:
                best = max(best, ratio)
    return best


def doubling_experiment(u: Callable, v: Callable, candidates, alpha: float,
                        grid: QuadratureGrid, gauge_params: GaugeParams,
                        delta: float = 1e-6, kappa: float = 1e-4,
                        epsilons=(0.1, 0.01)) -> DoublingReport:
    """Maximize u(theta) - v(theta_tilde) - (alpha/2) d_F^2 over candidate pairs.

    Runs the gauge-perturbed maximizer, then reports: the selected pair
    and objective, whether it is diagonal, the crude localization bound
    d_F(star, tilde) <= 10 sqrt(gap / alpha) with
    gap = (max u - min v) - max (u - v), and for each epsilon in
    ``epsilons`` the a-priori displacement check

        sqrt(|y* - y~*|^2 + rho_F^2(mu*, mu~*)) / eps
            <= L + sqrt(2 L^2 + 2 kappa / eps)

    with L the empirical Lipschitz constant of v on the candidate set.
    """
    cands = list(candidates)

    def objective_factory(a: float) -> Callable:
        def g(th, tt):
            return float(u(th)) - float(v(tt)) - 0.5 * a * d_F(th, tt, grid) ** 2

        return g

    th_s, th_t, _, cert = perturbed_maximize(
        objective_factory(alpha), cands, delta, kappa, gauge_params
    )
    obj = objective_factory(alpha)(th_s, th_t)
    dist = d_F(th_s, th_t, grid)

    u_vals = np.array([float(u(c)) for c in cands])
    v_vals = np.array([float(v(c)) for c in cands])
    gap = float((u_vals.max() - v_vals.min()) - (u_vals - v_vals).max())
    gap_ok = dist <= 10.0 * np.sqrt(max(gap, 0.0) / alpha) + 1e-12

    lip = _empirical_lipschitz(v, cands, grid)
    apriori = []
    for eps in epsilons:
        a = 1.0 / eps
        s, t, _, _ = perturbed_maximize(
            objective_factory(a), cands, delta, kappa, gauge_params
        )
        dy = s.y - t.y
        observed = float(np.sqrt(dy @ dy + rho_F2(s.mu, t.mu, grid)) / eps)
        bound = float(lip + np.sqrt(2.0 * lip * lip + 2.0 * kappa / eps))
        apriori.append(
            {"epsilon": eps, "observed": observed, "bound": bound,
             "ok": observed <= bound + 1e-9}
        )

    diagonal = (
        abs(th_s.t - th_t.t) < 1e-12
        and np.array_equal(th_s.y, th_t.y)
        and np.array_equal(th_s.mu.points, th_t.mu.points)
        and np.array_equal(th_s.mu.weights, th_t.mu.weights)
    )
    return DoublingReport(
        theta_star=th_s,
        theta_tilde_star=th_t,
        objective=obj,
        distance=dist,
        diagonal=diagonal,
        lipschitz_emp=lip,
        apriori=apriori,
        gap_bound_ok=gap_ok,
        gap=gap,
        certificate=cert,
    )
