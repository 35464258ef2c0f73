"""Weighted particle measures and exact transport distances at desk scale.

A measure is a finite cloud of points in R^d with nonnegative weights
summing to one.  Moments are exact weighted sums.  Transport distances
solve the discrete assignment/transportation problem exactly (Hungarian
algorithm for uniform clouds of equal size, a HiGHS linear program
otherwise); no entropic regularization is used anywhere.

The squared transport cost is HALF the squared Euclidean distance:

    w2(mu, nu)^2 = inf_pi  integral  |x - y|^2 / 2  pi(dx, dy)

so a translate satisfies  w2(mu, mu + c)^2 = |c|^2 / 2,  and the exact
splitting  w2^2 = |mean gap|^2 / 2 + w2(centered parts)^2  holds at the
optimum.  The half factor is part of the distance definition and is kept
consistently across the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

__all__ = [
    "ParticleMeasure",
    "CouplingPlan",
    "w2",
    "w2_sigma",
    "gaussian_box_mass",
    "gaussian_smoothed",
    "unit_variance_outlier_mixture",
    "load_measure",
    "save_measure",
    "measure_from_dict",
    "measure_to_dict",
]

# Largest transportation problem solved exactly; beyond this the LP is refused.
MAX_LP_CELLS = 512 * 512

_WEIGHT_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ParticleMeasure:
    """Immutable weighted point cloud on R^d.

    Parameters
    ----------
    points : (n, d) array_like
        Particle locations.  Must be finite.
    weights : (n,) array_like
        Nonnegative weights summing to one within 1e-12.  Stored
        renormalized so the sum is exactly one.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("points must be a nonempty (n, d) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        if w.shape[0] != pts.shape[0]:
            raise ValueError("weights length must match number of points")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        s = w.sum()
        if abs(s - 1.0) > _WEIGHT_SUM_TOL:
            raise ValueError(f"weights must sum to 1 within {_WEIGHT_SUM_TOL}, got {s!r}")
        w = w / s
        pts = pts.copy()
        pts.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    # ------------------------------------------------------------------
    # basic queries
    # ------------------------------------------------------------------
    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        """First moment  m(mu) = sum_i w_i x_i,  shape (d,)."""
        return self.weights @ self.points

    def covariance(self) -> np.ndarray:
        """Second central moment  sum_i w_i (x_i - m)(x_i - m)^T,  shape (d, d)."""
        c = self.points - self.mean()
        return (c * self.weights[:, None]).T @ c

    # ------------------------------------------------------------------
    # transformations
    # ------------------------------------------------------------------
    def center(self) -> "ParticleMeasure":
        """Pushforward under x -> x - m(mu); the result has mean 0 within 1e-12."""
        return ParticleMeasure(self.points - self.mean(), self.weights)

    def pushforward(self, fn) -> "ParticleMeasure":
        """Image measure under a map applied to the points.

        Parameters
        ----------
        fn : callable
            Vectorized map taking the (n, d) point array to a (n, d) array.
        """
        new_pts = np.asarray(fn(self.points), dtype=float)
        if new_pts.shape != self.points.shape:
            raise ValueError("pushforward map must preserve the (n, d) shape")
        return ParticleMeasure(new_pts, self.weights)

    def translate(self, z) -> "ParticleMeasure":
        """Pushforward under x -> x + z for a constant shift z."""
        z = np.asarray(z, dtype=float).reshape(self.dim)
        return ParticleMeasure(self.points + z, self.weights)

    def displaced(self, disp: np.ndarray) -> "ParticleMeasure":
        """Move each particle by its own displacement row, shape (n, d)."""
        disp = np.asarray(disp, dtype=float)
        if disp.shape != self.points.shape:
            raise ValueError("displacement must have shape (n, d)")
        return ParticleMeasure(self.points + disp, self.weights)

    # ------------------------------------------------------------------
    # constructors
    # ------------------------------------------------------------------
    @staticmethod
    def from_points(points, weights=None) -> "ParticleMeasure":
        """Build a measure; uniform weights when none are given."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if weights is None:
            weights = np.full(pts.shape[0], 1.0 / pts.shape[0])
        return ParticleMeasure(pts, weights)

    @staticmethod
    def dirac(x) -> "ParticleMeasure":
        """Point mass at x."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return ParticleMeasure(x[None, :], np.array([1.0]))


@dataclass(frozen=True)
class CouplingPlan:
    """Sparse optimal coupling between two particle measures.

    rows/cols index the source/target supports, ``mass`` carries the
    transported weight per pair, and ``cost`` is the total half-squared
    Euclidean cost of the plan.
    """

    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    cost: float
    shape: tuple

    def marginals(self):
        """Return (row_marginal, col_marginal) accumulated from the plan."""
        a = np.zeros(self.shape[0])
        b = np.zeros(self.shape[1])
        np.add.at(a, self.rows, self.mass)
        np.add.at(b, self.cols, self.mass)
        return a, b

    def to_rows(self):
        """Plan entries as (row, col, mass) tuples for delimited export."""
        return [
            (int(i), int(j), float(m))
            for i, j, m in zip(self.rows, self.cols, self.mass)
        ]


# ----------------------------------------------------------------------
# transport distances
# ----------------------------------------------------------------------

def _half_sq_dist(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - y[None, :, :]
    return 0.5 * np.einsum("ijk,ijk->ij", diff, diff)


def w2(mu: ParticleMeasure, nu: ParticleMeasure):
    """Exact 2-Wasserstein distance with half-squared-Euclidean cost.

    Returns
    -------
    (distance, plan) : (float, CouplingPlan)
        distance = sqrt(min_pi sum_ij pi_ij |x_i - y_j|^2 / 2).

    Raises
    ------
    ValueError
        On dimension mismatch or problems beyond the 512 x 512 desk scale.
    """
    if mu.dim != nu.dim:
        raise ValueError("measures must share the ambient dimension")
    n, m = len(mu), len(nu)
    if n * m > MAX_LP_CELLS:
        raise ValueError(f"transport problem {n}x{m} exceeds the desk-scale limit")
    cost_mat = _half_sq_dist(mu.points, nu.points)

    uniform = (
        n == m
        and np.allclose(mu.weights, 1.0 / n, rtol=0.0, atol=1e-14)
        and np.allclose(nu.weights, 1.0 / m, rtol=0.0, atol=1e-14)
    )
    if uniform:
        rows, cols = linear_sum_assignment(cost_mat)
        mass = np.full(n, 1.0 / n)
        total = float(cost_mat[rows, cols].sum() / n)
        plan = CouplingPlan(rows, cols, mass, total, (n, m))
    else:
        plan = _transport_lp(cost_mat, mu.weights, nu.weights)

    _check_marginals(plan, mu.weights, nu.weights)
    return float(np.sqrt(max(plan.cost, 0.0))), plan


def _transport_lp(cost_mat: np.ndarray, a: np.ndarray, b: np.ndarray) -> CouplingPlan:
    n, m = cost_mat.shape
    # Row-sum constraints plus all but the last column constraint; the
    # dropped one is implied because both weight vectors sum to one.
    data, rows_idx, cols_idx = [], [], []
    for i in range(n):
        for j in range(m):
            k = i * m + j
            rows_idx.append(i)
            cols_idx.append(k)
            data.append(1.0)
            if j < m - 1:
                rows_idx.append(n + j)
                cols_idx.append(k)
                data.append(1.0)
    a_eq = sparse.csr_matrix(
        (data, (rows_idx, cols_idx)), shape=(n + m - 1, n * m)
    )
    b_eq = np.concatenate([a, b[:-1]])
    res = linprog(cost_mat.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    x = res.x.reshape(n, m)
    keep = x > 1e-14
    rr, cc = np.nonzero(keep)
    total = float(np.sum(x * cost_mat))
    return CouplingPlan(rr, cc, x[keep], total, (n, m))


def _check_marginals(plan: CouplingPlan, a: np.ndarray, b: np.ndarray) -> None:
    pa, pb = plan.marginals()
    if np.max(np.abs(pa - a)) > 1e-10 or np.max(np.abs(pb - b)) > 1e-10:
        raise RuntimeError("coupling marginals deviate from the input weights")


def gaussian_smoothed(mu: ParticleMeasure, sigma: float, n_smooth: int = 64,
                      seed: int = 0) -> ParticleMeasure:
    """Approximate mu convolved with a centered Gaussian of covariance sigma*I.

    Each particle is augmented with ``n_smooth`` shared quasi-random
    Gaussian offsets (scrambled Sobol points through the normal inverse
    CDF).  Sharing one offset set across measures makes smoothed
    distances between translates exact.  ``n_smooth`` must be a power of
    two so the Sobol set is balanced.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if n_smooth < 1 or (n_smooth & (n_smooth - 1)) != 0:
        raise ValueError("n_smooth must be a power of two")
    offsets = _gaussian_offsets(mu.dim, sigma, n_smooth, seed)
    pts = (mu.points[:, None, :] + offsets[None, :, :]).reshape(-1, mu.dim)
    w = np.repeat(mu.weights, n_smooth) / n_smooth
    return ParticleMeasure(pts, w)


def _gaussian_offsets(dim: int, sigma: float, n_smooth: int, seed: int) -> np.ndarray:
    eng = qmc.Sobol(d=dim, scramble=True, seed=int(seed))
    u = eng.random(n_smooth)
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    return ndtri(u) * np.sqrt(sigma)


def w2_sigma(mu: ParticleMeasure, nu: ParticleMeasure, sigma: float,
             n_smooth: int = 64, seed: int = 0) -> float:
    """Transport distance between Gaussian-smoothed copies of mu and nu.

    Both measures receive the same offset set (common random numbers), so
    the result is deterministic given the seed and exact for translates.
    """
    mu_s = gaussian_smoothed(mu, sigma, n_smooth, seed)
    nu_s = gaussian_smoothed(nu, sigma, n_smooth, seed)
    return w2(mu_s, nu_s)[0]


# ----------------------------------------------------------------------
# Gaussian box masses
# ----------------------------------------------------------------------

def gaussian_box_mass(mu: ParticleMeasure, lower, upper, sigma: float):
    """Mass of (mu * N_sigma) on the half-open box  prod_j (lower_j, upper_j].

    N_sigma is the centered Gaussian with covariance sigma * I_d.  Since
    the smoothing is absolutely continuous the open/closed ends carry no
    mass; the value is the product CDF formula

        sum_i w_i prod_j [Phi((u_j - x_ij)/sqrt(sigma)) - Phi((l_j - x_ij)/sqrt(sigma))].

    ``lower``/``upper`` may be (d,) for a single box or (B, d) for a
    batch; the return is a float or a (B,) array accordingly.  Degenerate
    boxes (upper <= lower in any coordinate) have mass zero; infinities
    are allowed.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    single = lo.ndim == 1
    lo = np.atleast_2d(lo)
    hi = np.atleast_2d(hi)
    if lo.shape != hi.shape or lo.shape[1] != mu.dim:
        raise ValueError("box bounds must both have shape (B, d) matching the measure")
    root = np.sqrt(sigma)
    # (B, n, d) normalized coordinates
    z_hi = (hi[:, None, :] - mu.points[None, :, :]) / root
    z_lo = (lo[:, None, :] - mu.points[None, :, :]) / root
    per_coord = np.clip(ndtr(z_hi) - ndtr(z_lo), 0.0, None)
    mass = per_coord.prod(axis=2) @ mu.weights
    return float(mass[0]) if single else mass


# ----------------------------------------------------------------------
# named families and serialization
# ----------------------------------------------------------------------

def unit_variance_outlier_mixture(n: int, dim: int = 1) -> ParticleMeasure:
    """Mixture (1 - 1/n) delta_0 + (1/2n) delta_{-sqrt(n) e1} + (1/2n) delta_{+sqrt(n) e1}.

    Mean zero and covariance e1 e1^T for every n >= 2, while the outlier
    mass 1/n vanishes; the family separates moment-based metrics from
    weak convergence.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    r = np.sqrt(float(n))
    pts = np.zeros((3, dim))
    pts[1, 0] = -r
    pts[2, 0] = r
    w = np.array([1.0 - 1.0 / n, 0.5 / n, 0.5 / n])
    return ParticleMeasure(pts, w)


def measure_to_dict(mu: ParticleMeasure) -> dict:
    return {
        "dim": mu.dim,
        "points": mu.points.tolist(),
        "weights": mu.weights.tolist(),
    }


def measure_from_dict(d: dict) -> ParticleMeasure:
    mu = ParticleMeasure(np.asarray(d["points"], dtype=float),
                         np.asarray(d["weights"], dtype=float))
    if "dim" in d and int(d["dim"]) != mu.dim:
        raise ValueError("declared dim does not match the point array")
    return mu


def save_measure(mu: ParticleMeasure, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(measure_to_dict(mu), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_measure(path) -> ParticleMeasure:
    with open(path, "r", encoding="utf-8") as fh:
        return measure_from_dict(json.load(fh))
