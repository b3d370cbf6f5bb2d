"""Figure rendering for the report paths.

Every CLI command that writes a CSV also renders the matching PNG next to it.
Figures are deliberately plain: one axes, labeled, no styling beyond what
matplotlib ships, Agg backend so headless runs work.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_pressure_series(path, results, estimate) -> None:
    """log partition sum against n, with the fitted slope line."""
    ns = np.array([r.n for r in results], dtype=float)
    ys = np.array([r.log_value for r in results])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ns, ys, "o-", label="log partition sum")
    fit = np.polyfit(ns, ys, 1)
    ax.plot(ns, np.polyval(fit, ns), "--",
            label=f"slope {estimate.slope:.3f}")
    sat = [r.n for r in results if r.saturated]
    if sat:
        ax.plot(sat, [ys[list(ns).index(n)] for n in sat], "rx",
                markersize=10, label="saturated")
    ax.set_xlabel("n")
    ax.set_ylabel("log partition sum")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_srb_curve(path, curve) -> None:
    """Pressure-curve estimates with the linear envelopes and the root."""
    t = np.array(curve.t_values)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(t, curve.P_estimates, "o-", label="pressure estimate")
    ax.plot(t, curve.l1, ":", label="lower envelope l1")
    if not np.any(np.isnan(curve.l2)):
        ax.plot(t, curve.l2, ":", label="upper envelope l2")
    ax.axhline(0.0, color="gray", lw=0.8)
    if np.isfinite(curve.root_estimate):
        ax.axvline(curve.root_estimate, color="red", lw=0.8,
                   label=f"root {curve.root_estimate:.4f}")
    ax.set_xlabel("t")
    ax.set_ylabel("pressure of t * phi_geo")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_decomposition_batch(path, rows) -> None:
    """Stacked prefix/middle/suffix fractions over the sampled segments."""
    rows = list(rows)
    n = np.array([r[1] for r in rows], dtype=float)
    p = np.array([r[2] for r in rows], dtype=float) / n
    g = np.array([r[3] for r in rows], dtype=float) / n
    s = np.array([r[4] for r in rows], dtype=float) / n
    idx = np.arange(len(rows))
    order = np.argsort(-g)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(idx, p[order], label="prefix fraction")
    ax.bar(idx, g[order], bottom=p[order], label="good fraction")
    ax.bar(idx, s[order], bottom=p[order] + g[order], label="suffix fraction")
    ax.set_xlabel("segment (sorted by good fraction)")
    ax.set_ylabel("fraction of n")
    ax.legend(loc="lower left")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_tail_entropy(path, result) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(np.arange(len(result.per_point)), result.per_point)
    ax.axhline(result.estimate, color="red", lw=0.8,
               label=f"estimate {result.estimate:.4f}")
    ax.set_xlabel("sample point")
    ax.set_ylabel("tail entropy estimate")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_lyapunov(path, exponents_by_label: dict) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, exps in exponents_by_label.items():
        ax.plot(np.arange(1, len(exps) + 1), exps, "o-", label=label)
    ax.axhline(0.0, color="gray", lw=0.8)
    ax.set_xlabel("index")
    ax.set_ylabel("Lyapunov exponent")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
