"""Figure writers for the experiment reports (Agg backend, PNG files)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "save_metric_bars",
    "save_error_scatter",
    "save_gauge_scatter",
    "save_margin_bars",
    "save_flow_path",
    "save_value_bars",
    "save_dpp_bars",
    "save_loglog_residuals",
    "save_noncompleteness",
    "save_flow_scaling",
]

_DPI = 120


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_metric_bars(labels, series: dict, path) -> None:
    """Grouped bars: one group per pair, one bar per metric."""
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(labels), dtype=float)
    width = 0.8 / max(len(series), 1)
    for i, (name, vals) in enumerate(series.items()):
        ax.bar(x + i * width, vals, width, label=name)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels(labels)
    ax.set_xlabel("pair")
    ax.set_ylabel("distance")
    ax.legend()
    _finish(fig, path)


def save_error_scatter(families: dict, tol: float, path) -> None:
    """Per-family relative errors on a log scale with the tolerance line."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for i, (name, errs) in enumerate(families.items()):
        errs = np.maximum(np.asarray(errs, dtype=float), 1e-18)
        ax.scatter(np.full(len(errs), i) + 0.08 * np.arange(len(errs)) / max(len(errs), 1),
                   errs, s=14, label=name)
    ax.axhline(tol, color="k", linestyle="--", linewidth=1)
    ax.set_yscale("log")
    ax.set_xticks(range(len(families)))
    ax.set_xticklabels(list(families), rotation=20)
    ax.set_ylabel("relative error")
    _finish(fig, path)


def save_gauge_scatter(deltas, tails, path) -> None:
    """Observed refinement change against the certified tail bound."""
    deltas = np.maximum(np.asarray(deltas, dtype=float), 1e-18)
    tails = np.maximum(np.asarray(tails, dtype=float), 1e-18)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(tails, deltas, s=18)
    lim = [min(tails.min(), deltas.min()) * 0.5, max(tails.max(), deltas.max()) * 2]
    ax.plot(lim, lim, "k--", linewidth=1)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("tail bound")
    ax.set_ylabel("|refined - value|")
    _finish(fig, path)


def save_margin_bars(names, lefts, rights, path) -> None:
    """Left/right sandwich margins per instance."""
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(names), dtype=float)
    ax.bar(x - 0.18, lefts, 0.36, label="left margin")
    ax.bar(x + 0.18, rights, 0.36, label="right margin")
    ax.axhline(0.0, color="k", linewidth=1)
    ax.set_xticks(x)
    ax.set_xticklabels(names)
    ax.set_ylabel("smallest eigenvalue")
    ax.legend()
    _finish(fig, path)


def save_flow_path(times, y_path, means, path) -> None:
    """Common-noise translate and conditional mean along one path."""
    fig, ax = plt.subplots(figsize=(7, 4))
    y_path = np.asarray(y_path)
    means = np.asarray(means)
    for j in range(y_path.shape[1]):
        ax.plot(times, y_path[:, j], label=f"Y[{j}]")
        ax.plot(times, means[:, j], linestyle="--", label=f"mean m_s[{j}]")
    ax.set_xlabel("s")
    ax.legend()
    _finish(fig, path)


def save_value_bars(open_values: dict, v_hat: float, path) -> None:
    """Open-loop value per control sequence with the tree optimum line."""
    fig, ax = plt.subplots(figsize=(7, 4))
    labels = [str(k) for k in open_values]
    vals = list(open_values.values())
    ax.bar(range(len(vals)), vals)
    ax.axhline(v_hat, color="r", linestyle="--", label="tree value")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, fontsize=7)
    ax.set_ylabel("estimated cost")
    ax.legend()
    _finish(fig, path)


def save_dpp_bars(lhs, lhs_se, per_control, path) -> None:
    """Left side of the programming principle against each one-stage split."""
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = ["v(t)"] + [f"a={c['control']}" for c in per_control]
    vals = [lhs] + [c["mean"] for c in per_control]
    errs = [lhs_se] + [c["se"] for c in per_control]
    ax.bar(range(len(vals)), vals, yerr=errs, capsize=4)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels)
    ax.set_ylabel("value")
    _finish(fig, path)


def save_loglog_residuals(curves: dict, path) -> None:
    """Generator residuals vs step size, log-log, one line per functional."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, (dts, residuals) in curves.items():
        residuals = np.maximum(np.asarray(residuals, dtype=float), 1e-18)
        ax.plot(dts, residuals, "o-", label=name)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("residual")
    ax.legend()
    _finish(fig, path)


def save_noncompleteness(rows, path) -> None:
    """The escaping family: vanishing consecutive gaps, unit dirac gap."""
    n = [r["n"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(n, [r["rho_to_double"] for r in rows], "o-", label="rho(mu_n, mu_2n)")
    ax.plot(n, [r["rho_to_dirac"] for r in rows], "s-", label="rho(mu_n, dirac)")
    ax.axhline(1.0, color="k", linewidth=1, linestyle=":")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.legend()
    _finish(fig, path)


def save_flow_scaling(elapsed, means, ses, slope, path) -> None:
    """Squared transport distance to the start against elapsed time."""
    elapsed = np.asarray(elapsed, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(elapsed, means, yerr=ses, fmt="o", capsize=4, label="estimate")
    ax.plot(elapsed, slope * elapsed, "r--", label=f"slope {slope:.4g}")
    ax.set_xlabel("s - t")
    ax.set_ylabel("E[W2^2]")
    ax.legend()
    _finish(fig, path)
