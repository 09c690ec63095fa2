"""Figure rendering for the report path.

Figures are drawn from a run directory's saved CSV tables only (no
recomputation): per-subgroup bias/RMSE/coverage curves for simulation
runs, and a balance dot plot plus an effects interval plot for fit runs.
All files are written next to the tables they were rendered from.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

MEASURES = (("abs_bias", "absolute bias"),
            ("rmse", "RMSE"),
            ("coverage", "95% interval coverage"))


def _read_rows(path: Path) -> list[dict]:
    from .cli import read_table
    return read_table(path)[1]


def _maybe_float(text: str) -> float:
    return float(text) if text not in ("", None) else np.nan


def render_simulation_figures(run_dir: Path) -> list[Path]:
    rows = _read_rows(run_dir / "results_by_subgroup.csv")
    models = sorted({row["model"] for row in rows})
    series = sorted({(row["method"], row["estimator"]) for row in rows})
    written = []

    for key, label in MEASURES:
        fig, axes = plt.subplots(1, len(models), sharey=True,
                                 figsize=(6.0 * len(models), 4.2), squeeze=False)
        for ax, model in zip(axes[0], models):
            for method, estimator in series:
                pts = sorted(
                    ((int(r["subgroup"]), _maybe_float(r[key])) for r in rows
                     if r["model"] == model and r["method"] == method
                     and r["estimator"] == estimator),
                )
                xs = [p[0] for p in pts]
                ys = [p[1] for p in pts]
                ax.plot(xs, ys, marker="o", markersize=3, linewidth=1.2,
                        label=f"{method} / {estimator}")
            if key == "coverage":
                ax.axhline(0.95, color="gray", linestyle=":", linewidth=1)
                ax.set_ylim(-0.02, 1.02)
            ax.set_title(f"{model} model")
            ax.set_xlabel("subgroup")
            ax.grid(alpha=0.3)
        axes[0][0].set_ylabel(label)
        axes[0][-1].legend(fontsize=8, loc="best")
        fig.tight_layout()
        path = run_dir / f"{key}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written


def render_fit_figures(run_dir: Path) -> list[Path]:
    written = []
    balance = _read_rows(run_dir / "balance.csv")
    labels = []
    before = []
    after = []
    for row in balance:
        where = "all" if row["subgroup"] == "overall" else f"g={row['label']}"
        labels.append(f"{where}: {row['covariate']}")
        before.append(abs(_maybe_float(row["smd_before"])))
        after.append(abs(_maybe_float(row["smd_after"])))

    height = max(3.0, 0.22 * len(labels) + 1.2)
    fig, ax = plt.subplots(figsize=(7, height))
    ypos = np.arange(len(labels))[::-1]
    ax.scatter(before, ypos, facecolors="none", edgecolors="tab:red",
               label="before matching", zorder=3)
    ax.scatter(after, ypos, color="tab:blue", marker="o",
               label="after matching", zorder=3)
    ax.axvline(0.1, color="gray", linestyle=":", linewidth=1)
    ax.set_yticks(ypos)
    ax.set_yticklabels(labels, fontsize=7)
    ax.set_xlabel("|standardized mean difference|")
    ax.grid(axis="x", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = run_dir / "balance.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)

    effects_path = run_dir / "effects.csv"
    if effects_path.exists():
        rows = _read_rows(effects_path)
        xs = [int(r["subgroup"]) for r in rows]
        tau = np.array([_maybe_float(r["tau_hat"]) for r in rows])
        lo = np.array([_maybe_float(r["ci_low"]) for r in rows])
        hi = np.array([_maybe_float(r["ci_high"]) for r in rows])
        labels = [r["label"] for r in rows]

        fig, ax = plt.subplots(figsize=(max(5.0, 0.7 * len(xs) + 2), 4))
        ax.errorbar(xs, tau, yerr=[tau - lo, hi - tau], fmt="o",
                    capsize=3, linewidth=1.2)
        ax.axhline(0.0, color="gray", linestyle=":", linewidth=1)
        ax.set_xticks(xs)
        ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
        ax.set_xlabel("subgroup")
        ax.set_ylabel("estimated effect on the treated")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = run_dir / "effects.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written


def render_run_figures(run_dir: Path) -> list[Path]:
    """Render the figures appropriate for a saved run directory."""
    manifest = json.loads((run_dir / "manifest.json").read_text())
    if manifest["command"] == "simulate":
        return render_simulation_figures(run_dir)
    return render_fit_figures(run_dir)
