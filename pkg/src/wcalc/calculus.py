"""Derivatives of functionals of measures along pushforwards.

The measure derivative D_mu u evaluated at (mu, x) is the gradient field
whose pairing recovers directional derivatives along pushforwards:

    d/dh  u((I + h phi)_# mu) |_{h=0}  =  int phi(x) . D_mu u(mu, x) mu(dx).

This module provides the universal finite-difference oracle for that
limit, closed forms for the derivatives of the Fourier-moment metric and
its companion bilinear functional, translation Hessians, and the
second-order jet container used by the doubled-variable experiments.

Closed forms and the oracle are evaluated on the same quadrature grid,
so they agree to differencing accuracy independently of grid fidelity.

Conventions.  With f_k(x) = (2 pi)^(-d/2) exp(-i k.x) and
A_k(mu) = the characteristic function of the centered part of mu:

    D_mu A_k(mu)(x)         = i k (A_k(mu) - f_k(x - m(mu)))
    D_mu V^{ij}(mu)(x)      = (x^j - m^j) e_i + (x^i - m^i) e_j
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .fourier import QuadratureGrid, ThetaPoint, centered_char, rho_F2
from .measures import ParticleMeasure

__all__ = [
    "MeasureFunctional",
    "Jet",
    "fd_lions_derivative",
    "partial_hessian",
    "translation_hessian",
    "cross_derivative",
    "dmu_rhoF2",
    "dxmu_rhoF2",
    "script_L",
    "dmu_script_L",
    "dxmu_script_L",
    "psi_pair",
    "dmu_psi",
    "dmu_psi_tilde",
    "dxmu_psi",
    "dxmu_psi_tilde",
    "make_mean_functional",
    "make_mean_square_functional",
    "make_integral_functional",
]

BASE_STEP = 1e-3


@dataclass
class MeasureFunctional:
    """Scalar functional of (t, y, mu) with optional closed-form derivatives.

    ``eval`` maps a ThetaPoint to a float.  The optional callbacks supply
    D_mu (theta, x) -> (d,), D_xmu (theta, x) -> (d, d), the time
    derivative, and the translation Hessian (theta) -> (d, d); finite
    differences stand in when a callback is absent.  ``growth_tag`` is
    free-form metadata about growth in the measure argument.
    """

    eval: Callable[[ThetaPoint], float]
    d_mu: Optional[Callable] = None
    d_xmu: Optional[Callable] = None
    d_t: Optional[Callable] = None
    hessian: Optional[Callable] = None
    growth_tag: str = ""

    def __call__(self, theta: ThetaPoint) -> float:
        return float(self.eval(theta))


@dataclass
class Jet:
    """Second-order jet (b, p, X11, f, g, X12, X22) at a point of [0,T] x R^d x P_2.

    Slots: time derivative, y-gradient, y-Hessian, measure gradient field
    f(x) in R^d, its x-derivative field g(x) in R^{d x d}, the mixed
    y-measure block, and the translation-Hessian block.
    """

    b: float
    p: np.ndarray
    x11: np.ndarray
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    x12: np.ndarray
    x22: np.ndarray

    def __post_init__(self) -> None:
        for name in ("x11", "x22"):
            mat = np.asarray(getattr(self, name), dtype=float)
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
                raise ValueError(f"{name} must be square")
            if np.max(np.abs(mat - mat.T)) > 1e-12:
                raise ValueError(f"{name} must be symmetric")
            setattr(self, name, mat)
        self.p = np.asarray(self.p, dtype=float)
        self.x12 = np.asarray(self.x12, dtype=float)
        self.b = float(self.b)


# ----------------------------------------------------------------------
# finite-difference oracles
# ----------------------------------------------------------------------

def _displacement(mu: ParticleMeasure, phi) -> np.ndarray:
    if callable(phi):
        disp = np.asarray(phi(mu.points), dtype=float)
    else:
        disp = np.asarray(phi, dtype=float)
        if disp.shape == (mu.dim,):
            disp = np.broadcast_to(disp, mu.points.shape)
    if disp.shape != mu.points.shape:
        raise ValueError("phi must yield one displacement row per particle")
    return disp


def fd_lions_derivative(u, mu: ParticleMeasure, phi, h: float = BASE_STEP) -> float:
    """Richardson-extrapolated central difference of h -> u((I + h phi)_# mu).

    ``u`` is a callable on measures; ``phi`` is a vector field given as a
    callable on the (n, d) point array, a constant (d,) vector, or an
    (n, d) displacement sample at the particles.  The limit equals
    int phi . D_mu u dmu.
    """
    disp = _displacement(mu, phi)

    def central(step: float) -> float:
        up = u(mu.displaced(step * disp))
        dn = u(mu.displaced(-step * disp))
        return (up - dn) / (2.0 * step)

    d1 = central(h)
    d2 = central(h / 2.0)
    return (4.0 * d2 - d1) / 3.0


def translation_hessian(fn, measures, h: float = BASE_STEP) -> np.ndarray:
    """Hessian of stacked translations z -> fn([(I + z_i)_# mu_i]) at z = 0.

    ``measures`` is a sequence of ParticleMeasure and ``fn`` takes the
    translated sequence to a float; the result is the symmetric
    (sum d_i, sum d_i) second-difference matrix.
    """
    measures = list(measures)
    dims = [m.dim for m in measures]
    total = sum(dims)
    offsets = np.cumsum([0] + dims)

    def shifted(z: np.ndarray) -> float:
        parts = [
            m.translate(z[offsets[i]:offsets[i + 1]]) for i, m in enumerate(measures)
        ]
        return float(fn(parts))

    f0 = shifted(np.zeros(total))
    hess = np.empty((total, total))
    for i in range(total):
        ei = np.zeros(total)
        ei[i] = h
        hess[i, i] = (shifted(ei) - 2.0 * f0 + shifted(-ei)) / (h * h)
        for j in range(i + 1, total):
            ej = np.zeros(total)
            ej[j] = h
            val = (
                shifted(ei + ej) - shifted(ei - ej) - shifted(ej - ei) + shifted(-ei - ej)
            ) / (4.0 * h * h)
            hess[i, j] = hess[j, i] = val
    return 0.5 * (hess + hess.T)


def _as_eval(u):
    return u.eval if isinstance(u, MeasureFunctional) else u


def partial_hessian(u, theta: ThetaPoint, h: float = BASE_STEP) -> np.ndarray:
    """Translation Hessian of z -> u(t, y, (I + z)_# mu) at z = 0, shape (d, d)."""
    ev = _as_eval(u)

    def fn(parts):
        return ev(ThetaPoint(theta.t, theta.y, parts[0]))

    return translation_hessian(fn, [theta.mu], h)


def cross_derivative(u, theta: ThetaPoint, h: float = BASE_STEP) -> np.ndarray:
    """Mixed block  M[i, j] = d^2/dy_i dz_j  u(t, y, (I + z)_# mu)  at (y, 0)."""
    ev = _as_eval(u)
    d = theta.dim

    def point(dy: np.ndarray, dz: np.ndarray) -> float:
        return ev(ThetaPoint(theta.t, theta.y + dy, theta.mu.translate(dz)))

    out = np.empty((d, d))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        for j in range(d):
            ej = np.zeros(d)
            ej[j] = h
            out[i, j] = (
                point(ei, ej) - point(ei, -ej) - point(-ei, ej) + point(-ei, -ej)
            ) / (4.0 * h * h)
    return out


# ----------------------------------------------------------------------
# closed-form derivative building blocks
# ----------------------------------------------------------------------

def _plane_wave(mu: ParticleMeasure, x: np.ndarray, grid: QuadratureGrid) -> np.ndarray:
    """f_k(x - m(mu)) over the grid nodes, shape (M,)."""
    rel = np.asarray(x, dtype=float).reshape(mu.dim) - mu.mean()
    return (2.0 * np.pi) ** (-mu.dim / 2.0) * np.exp(-1j * (grid.nodes @ rel))


def _fourier_gradient(mu: ParticleMeasure, gap: np.ndarray, x, grid: QuadratureGrid) -> np.ndarray:
    """2 int Re( i k (A_k(mu) - f_k(x - m)) conj(gap_k) ) q(dk), shape (d,)."""
    a = centered_char(mu, grid.nodes)
    fx = _plane_wave(mu, x, grid)
    scal = np.real(1j * (a - fx) * np.conj(gap))  # (M,)
    return 2.0 * (grid.weights * scal) @ grid.nodes


def _fourier_curvature(mu: ParticleMeasure, gap: np.ndarray, x, grid: QuadratureGrid) -> np.ndarray:
    """-2 int k k^T Re( f_k(x - m) conj(gap_k) ) q(dk), shape (d, d)."""
    fx = _plane_wave(mu, x, grid)
    scal = grid.weights * np.real(fx * np.conj(gap))
    return -2.0 * np.einsum("m,mi,mj->ij", scal, grid.nodes, grid.nodes)


def _char_gap(mu: ParticleMeasure, nu: ParticleMeasure, grid: QuadratureGrid) -> np.ndarray:
    return centered_char(mu, grid.nodes) - centered_char(nu, grid.nodes)


def _cov_gradient(dv: np.ndarray, mu: ParticleMeasure, x) -> np.ndarray:
    """sum_ij dv_ij [ (x - m)_j e_i + (x - m)_i e_j ] = (dv + dv^T)(x - m)."""
    rel = np.asarray(x, dtype=float).reshape(mu.dim) - mu.mean()
    return (dv + dv.T) @ rel


# ----------------------------------------------------------------------
# metric derivatives
# ----------------------------------------------------------------------

def dmu_rhoF2(mu: ParticleMeasure, nu: ParticleMeasure, x, grid: QuadratureGrid) -> np.ndarray:
    """D_mu rho_F^2(., nu) at (mu, x):

        2 (m(mu) - m(nu)) + 4 (V(mu) - V(nu))(x - m(mu))
        + 2 int Re( i k (A_k(mu) - f_k(x - m)) conj(A_k(mu) - A_k(nu)) ) q(dk).
    """
    dm = mu.mean() - nu.mean()
    dv = mu.covariance() - nu.covariance()
    gap = _char_gap(mu, nu, grid)
    return 2.0 * dm + 2.0 * _cov_gradient(dv, mu, x) + _fourier_gradient(mu, gap, x, grid)


def dxmu_rhoF2(mu: ParticleMeasure, nu: ParticleMeasure, x, grid: QuadratureGrid) -> np.ndarray:
    """x-derivative of the field above: 4 (V(mu) - V(nu)) plus the k k^T term."""
    dv = mu.covariance() - nu.covariance()
    gap = _char_gap(mu, nu, grid)
    return 2.0 * (dv + dv.T) + _fourier_curvature(mu, gap, x, grid)


def _dmu_centered_rhoF2(mu, anchor, x, grid) -> np.ndarray:
    # derivative of mu -> rho_F^2(centered mu, centered anchor); no mean term
    dv = mu.covariance() - anchor.covariance()
    gap = _char_gap(mu, anchor, grid)
    return 2.0 * _cov_gradient(dv, mu, x) + _fourier_gradient(mu, gap, x, grid)


def _dxmu_centered_rhoF2(mu, anchor, x, grid) -> np.ndarray:
    dv = mu.covariance() - anchor.covariance()
    gap = _char_gap(mu, anchor, grid)
    return 2.0 * (dv + dv.T) + _fourier_curvature(mu, gap, x, grid)


# ----------------------------------------------------------------------
# the companion bilinear functional
# ----------------------------------------------------------------------

def script_L(mu: ParticleMeasure, eta: ParticleMeasure, nu: ParticleMeasure,
             grid: QuadratureGrid) -> float:
    """L(mu, eta, nu) = 2 int Re(A_k(mu) conj(A_k(eta) - A_k(nu))) q(dk)
    + 2 tr(V(mu)^T (V(eta) - V(nu))).

    All slots enter through their centered parts; the functional is
    antisymmetric in (eta, nu).
    """
    a = centered_char(mu, grid.nodes)
    gap = _char_gap(eta, nu, grid)
    fourier = 2.0 * float(grid.weights @ np.real(a * np.conj(gap)))
    dv = eta.covariance() - nu.covariance()
    return fourier + 2.0 * float(np.sum(mu.covariance() * dv))


def dmu_script_L(mu, eta, nu, x, grid: QuadratureGrid) -> np.ndarray:
    """First-slot measure derivative of script_L at (mu, x)."""
    dv = eta.covariance() - nu.covariance()
    gap = _char_gap(eta, nu, grid)
    return 2.0 * _cov_gradient(dv, mu, x) + _fourier_gradient(mu, gap, x, grid)


def dxmu_script_L(mu, eta, nu, x, grid: QuadratureGrid) -> np.ndarray:
    """x-derivative of the first-slot field of script_L."""
    dv = eta.covariance() - nu.covariance()
    gap = _char_gap(eta, nu, grid)
    return 2.0 * (dv + dv.T) + _fourier_curvature(mu, gap, x, grid)


# ----------------------------------------------------------------------
# the doubled-variable penalty pair
# ----------------------------------------------------------------------

def psi_pair(mu: ParticleMeasure, mu_star: ParticleMeasure,
             mu_tilde_star: ParticleMeasure, grid: QuadratureGrid):
    """(Psi(mu), Psi_tilde(mu)) built from centered-part metric gaps:

        Psi(mu)       = 2 rho_F^2(mu_0, mu*_0) + L(mu, mu*, mu~*)
        Psi_tilde(mu) = 2 rho_F^2(mu_0, mu~*_0) - L(mu, mu*, mu~*)

    Their sum dominates rho_F^2(mu*_0, mu~*_0) for every mu (the L terms
    cancel and the parallelogram bound applies).
    """
    ell = script_L(mu, mu_star, mu_tilde_star, grid)
    r_star = rho_F2(mu.center(), mu_star.center(), grid)
    r_tilde = rho_F2(mu.center(), mu_tilde_star.center(), grid)
    return 2.0 * r_star + ell, 2.0 * r_tilde - ell


def dmu_psi(mu, mu_star, mu_tilde_star, x, grid: QuadratureGrid,
            epsilon: float = 1.0) -> np.ndarray:
    """D_mu Psi(mu, x) / (2 epsilon).

    At mu = mu* the centered-gap terms cancel and the value reduces to

        (2/eps)(V(mu*) - V(mu~*))(x - m(mu*))
        + (1/eps) int Re( i k (A_k(mu*) - f_k(x - m(mu*))) conj(A_k(mu*) - A_k(mu~*)) ) q(dk).
    """
    full = 2.0 * _dmu_centered_rhoF2(mu, mu_star, x, grid) + \
        dmu_script_L(mu, mu_star, mu_tilde_star, x, grid)
    return full / (2.0 * epsilon)


def dmu_psi_tilde(mu, mu_star, mu_tilde_star, x, grid: QuadratureGrid,
                  epsilon: float = 1.0) -> np.ndarray:
    """D_mu Psi_tilde(mu, x) / (2 epsilon); at mu = mu~* it is the negated
    anchor-gap field of ``dmu_psi`` evaluated at mu~*."""
    full = 2.0 * _dmu_centered_rhoF2(mu, mu_tilde_star, x, grid) - \
        dmu_script_L(mu, mu_star, mu_tilde_star, x, grid)
    return full / (2.0 * epsilon)


def dxmu_psi(mu, mu_star, mu_tilde_star, x, grid: QuadratureGrid,
             epsilon: float = 1.0) -> np.ndarray:
    full = 2.0 * _dxmu_centered_rhoF2(mu, mu_star, x, grid) + \
        dxmu_script_L(mu, mu_star, mu_tilde_star, x, grid)
    return full / (2.0 * epsilon)


def dxmu_psi_tilde(mu, mu_star, mu_tilde_star, x, grid: QuadratureGrid,
                   epsilon: float = 1.0) -> np.ndarray:
    full = 2.0 * _dxmu_centered_rhoF2(mu, mu_tilde_star, x, grid) - \
        dxmu_script_L(mu, mu_star, mu_tilde_star, x, grid)
    return full / (2.0 * epsilon)


# ----------------------------------------------------------------------
# ready-made functionals
# ----------------------------------------------------------------------

def make_mean_functional(dim: int, component: int = 0) -> MeasureFunctional:
    """u(theta) = m(mu)[component], with exact derivative callbacks."""
    e = np.zeros(dim)
    e[component] = 1.0
    return MeasureFunctional(
        eval=lambda th: float(th.mu.mean()[component]),
        d_mu=lambda th, x: e.copy(),
        d_xmu=lambda th, x: np.zeros((dim, dim)),
        d_t=lambda th: 0.0,
        hessian=lambda th: np.zeros((dim, dim)),
        growth_tag="linear",
    )


def make_mean_square_functional(dim: int) -> MeasureFunctional:
    """u(theta) = |m(mu)|^2; translation Hessian is 2 I."""
    return MeasureFunctional(
        eval=lambda th: float(th.mu.mean() @ th.mu.mean()),
        d_mu=lambda th, x: 2.0 * th.mu.mean(),
        d_xmu=lambda th, x: np.zeros((dim, dim)),
        d_t=lambda th: 0.0,
        hessian=lambda th: 2.0 * np.eye(dim),
        growth_tag="quadratic",
    )


def make_integral_functional(phi, grad, hess, tag: str = "integral") -> MeasureFunctional:
    """u(theta) = int phi dmu for a smooth phi with supplied gradient and Hessian.

    ``phi``: (n, d) -> (n,); ``grad``: (d,) -> (d,); ``hess``: (d,) -> (d, d).
    The translation Hessian is int hess dmu.
    """

    def _hess(th: ThetaPoint) -> np.ndarray:
        mats = np.stack([np.asarray(hess(x), dtype=float) for x in th.mu.points])
        return np.einsum("n,nij->ij", th.mu.weights, mats)

    return MeasureFunctional(
        eval=lambda th: float(th.mu.weights @ np.asarray(phi(th.mu.points), dtype=float)),
        d_mu=lambda th, x: np.asarray(grad(x), dtype=float),
        d_xmu=lambda th, x: np.asarray(hess(x), dtype=float),
        d_t=lambda th: 0.0,
        hessian=_hess,
        growth_tag=tag,
    )
