"""Figure rendering for the report paths.

Every command that writes a CSV also drops a PNG next to it; the CSV stays
the machine-readable contract, the figure is for eyeballs. Rendering uses
the Agg backend so it works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def training_curves_figure(per_seed_rows: dict[int, list], out_png: str | Path, title: str) -> None:
    """Per-seed evaluation return curves plus a mean with 1-std shading."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    curves = []
    for seed, rows in sorted(per_seed_rows.items()):
        steps = [r.env_steps for r in rows]
        returns = [r.eval_return_mean for r in rows]
        curves.append(returns)
        ax.plot(steps, returns, alpha=0.35, linewidth=1.0, label=f"seed {seed}")
    lengths = {len(c) for c in curves}
    if len(lengths) == 1 and len(curves) > 1:
        stacked = np.asarray(curves)
        mean = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        ax.plot(steps, mean, color="black", linewidth=2.0, label="mean")
        ax.fill_between(steps, mean - std, mean + std, color="black", alpha=0.15)
    ax.set_xlabel("environment steps")
    ax.set_ylabel("evaluation return")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.savefig(out_png, dpi=130, bbox_inches="tight")
    plt.close(fig)


def estlab_figure(rows: list[dict], out_png: str | Path) -> None:
    """Bias and variance per (method, temperature) cell, seeds averaged."""
    cells: dict[str, dict[str, list[float]]] = {}
    for row in rows:
        label = row["method"]
        if row["method"] != "ste":
            label += f" @ {row['temperature']:g}"
        cell = cells.setdefault(label, {"bias": [], "var": []})
        cell["bias"].append(row["bias_norm"])
        cell["var"].append(row["variance_trace"])
    labels = list(cells)
    biases = [np.mean(cells[l]["bias"]) for l in labels]
    variances = [np.mean(cells[l]["var"]) for l in labels]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    xs = np.arange(len(labels))
    for ax, ys, name in ((ax1, biases, "bias norm"), (ax2, variances, "variance trace")):
        ax.bar(xs, ys, color="tab:blue")
        ax.set_xticks(xs)
        ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
        ax.set_ylabel(name)
        if max(ys) > 0 and min(y for y in ys if y > 0) / max(ys) < 1e-3:
            ax.set_yscale("symlog", linthresh=1e-12)
    fig.suptitle("gradient estimator bias and variance vs exact gradient")
    fig.savefig(out_png, dpi=130, bbox_inches="tight")
    plt.close(fig)


def sweep_figure(cell_stats: list[tuple[str, float, float]], out_png: str | Path, env: str) -> None:
    """Final-return mean with std error bars per mode-capacity cell."""
    labels = [c[0] for c in cell_stats]
    means = [c[1] for c in cell_stats]
    stds = [c[2] for c in cell_stats]
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = np.arange(len(labels))
    ax.bar(xs, means, yerr=stds, capsize=4, color="tab:orange")
    ax.set_xticks(xs)
    ax.set_xticklabels(labels)
    ax.set_xlabel("mode layout (factors x classes)")
    ax.set_ylabel("final evaluation return")
    ax.set_title(f"capacity sweep on {env}")
    fig.savefig(out_png, dpi=130, bbox_inches="tight")
    plt.close(fig)
