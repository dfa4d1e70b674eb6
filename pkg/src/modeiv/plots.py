"""Figure rendering for the benchmark reports.

Every renderer takes aggregated curve points ``(x, label, mean, ci)`` as
produced by :func:`modeiv.experiments.aggregate_curve` and writes a PNG next
to the corresponding plot-data CSV.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _curves_by_label(points):
    curves: dict[str, list[tuple[float, float, float]]] = {}
    for x, label, mean, ci in points:
        curves.setdefault(label, []).append((float(x), mean, ci))
    for series in curves.values():
        series.sort(key=lambda p: p[0])
    return curves


def plot_metric_curves(points, path, xlabel, ylabel="MSE", title=None, logy=False, logx=False):
    """One errorbar line per label over the x axis; saved as PNG."""
    curves = _curves_by_label(points)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label in sorted(curves):
        xs, means, cis = zip(*curves[label])
        ax.errorbar(xs, means, yerr=cis, marker="o", markersize=4, capsize=3, label=label)
    if logy:
        ax.set_yscale("log")
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150, format="png")
    plt.close(fig)


def plot_demand_bias(points, path, n_invalid):
    plot_metric_curves(
        points,
        path,
        xlabel="direct-effect scale gamma",
        ylabel="grid MSE",
        title=f"Demand benchmark, {n_invalid} invalid instrument(s)",
        logy=True,
    )


def plot_v_sensitivity(points, path):
    plot_metric_curves(
        points,
        path,
        xlabel="V (assumed lower bound on valid instruments)",
        ylabel="grid MSE",
        title="Sensitivity of the modal estimator to V",
        logy=True,
    )


def plot_mr_table(points, path):
    plot_metric_curves(
        points,
        path,
        xlabel="fraction of valid instruments",
        ylabel="grid MSE",
        title="Genetic-style benchmark across valid fractions",
        logy=True,
    )


def plot_theorem(rows, path, true_value=1.0):
    """Mean modal estimate with CI bars against sample size (log x)."""
    rows = sorted(rows, key=lambda r: r["n"])
    ns = [r["n"] for r in rows]
    means = [r["mean"] for r in rows]
    cis = [r["ci"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.errorbar(ns, means, yerr=cis, marker="o", capsize=3, label="mean modal estimate")
    ax.axhline(true_value, color="k", linestyle="--", linewidth=1, label="true effect")
    ax.set_xscale("log")
    ax.set_xlabel("effective sample size n")
    ax.set_ylabel("modal estimate")
    ax.set_title("Consistency of the synthetic modal estimator")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150, format="png")
    plt.close(fig)
