"""Figure rendering for reports: covariance heatmaps, trajectory fans,
variance profiles and death-time scaling fits.

matplotlib is imported lazily with the Agg backend so headless runs and
figure-free paths never touch a display.
"""

from __future__ import annotations

import os
from typing import Sequence

import numpy as np


def _plt():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def covariance_heatmap(report: dict, path: str, title: str = "") -> str:
    """Empirical vs theoretical covariance side by side with their difference."""
    plt = _plt()
    emp = np.asarray(report["empirical"]["re"] if isinstance(report["empirical"], dict)
                     else report["empirical"], dtype=float)
    th = np.asarray(report["theoretical"]["re"] if isinstance(report["theoretical"], dict)
                    else report["theoretical"], dtype=float)
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.2))
    vmax = max(np.abs(emp).max(), np.abs(th).max(), 1e-300)
    for ax, M, name in zip(axes, [emp, th, emp - th],
                           ["empirical", "theoretical", "difference"]):
        scale = vmax if name != "difference" else max(np.abs(emp - th).max(), 1e-300)
        im = ax.imshow(M, cmap="RdBu_r", vmin=-scale, vmax=scale)
        ax.set_title(name, fontsize=9)
        fig.colorbar(im, ax=ax, fraction=0.046)
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def trajectory_fan(result, path: str, max_paths: int = 200, title: str = "") -> str:
    """Per-colour fan of recorded states across replicates."""
    plt = _plt()
    R, G, d = result.states.shape
    take = min(R, max_paths)
    x = list(result.draw_indices)
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for j in range(d):
        for r in range(take):
            ax.plot(x, result.states[r, :, j], color=colors[j % len(colors)],
                    alpha=0.05, lw=0.6)
        ax.plot(x, result.states[:, :, j].mean(axis=0),
                color=colors[j % len(colors)], lw=1.8, label=f"colour {j}")
    ax.set_xlabel("draw")
    ax.set_ylabel("count")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def variance_profile(times: Sequence[float], empirical: Sequence[float],
                     slope: float, path: str, title: str = "") -> str:
    """Empirical variances against the t(1-t) bridge profile."""
    plt = _plt()
    x = np.asarray([t * (1 - t) for t in times])
    y = np.asarray(empirical)
    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    ax.scatter(x, y, s=16, label="empirical")
    xg = np.linspace(0, x.max() * 1.05, 50)
    ax.plot(xg, slope * xg, lw=1.2, label=f"fit slope {slope:.4g}")
    ax.set_xlabel("t (1 - t)")
    ax.set_ylabel("variance")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def tau_scaling(detail: dict, path: str) -> str:
    """Median death-time regressions per regime."""
    plt = _plt()
    fig, axes = plt.subplots(1, len(detail), figsize=(3.4 * len(detail), 3.2))
    if len(detail) == 1:
        axes = [axes]
    for ax, (name, rec) in zip(axes, detail.items()):
        pts = np.asarray(rec.get("points", []))
        if pts.size:
            ax.scatter(pts[:, 0], pts[:, 1], s=18)
            coef = np.polyfit(pts[:, 0], pts[:, 1], 1)
            xg = np.linspace(pts[:, 0].min(), pts[:, 0].max(), 20)
            ax.plot(xg, np.polyval(coef, xg), lw=1.1)
        labels = rec.get("axes", ["predicted clock", "median tau"])
        ax.set_xlabel(labels[0], fontsize=8)
        ax.set_ylabel(labels[1], fontsize=8)
        ax.set_title(f"{name}: slope {rec['slope']:.3f} "
                     f"(target {rec['target']:g})", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def suite_figures(report: dict, out_dir: str) -> list[str]:
    """Render every renderable check of a suite report; returns the paths."""
    written = []
    name = report.get("suite", "suite")
    for check in report.get("checks", []):
        sub = check.get("report")
        if sub and "empirical" in sub and "theoretical" in sub:
            fname = os.path.join(out_dir, f"{name}-{check['name']}.png")
            covariance_heatmap(sub, fname, title=f"{name}: {check['name']}")
            written.append(fname)
    if "detail" in report:
        fname = os.path.join(out_dir, f"{name}-scaling.png")
        tau_scaling(report["detail"], fname)
        written.append(fname)
    return written
