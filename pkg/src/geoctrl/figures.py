"""Report figures rendered next to the delimited outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def slope_figure(fit: dict, out_path: str) -> str:
    """Log-log regret curve with the fitted power law and bootstrap CI."""
    horizons = np.array(fit["horizons"], dtype=float)
    means = np.array([fit["means"][T] for T in fit["horizons"]], dtype=float)
    keep = means > 0
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.loglog(horizons[keep], means[keep], "o", color="tab:blue",
              label="mean regret")
    if keep.sum() >= 2:
        x = np.log(horizons[keep])
        y = np.log(means[keep])
        b = np.polyfit(x, y, 1)
        xs = np.linspace(x.min(), x.max(), 64)
        ax.loglog(np.exp(xs), np.exp(np.polyval(b, xs)), "-",
                  color="tab:orange",
                  label=f"slope {fit['slope']:.2f} "
                        f"[{fit['ci_lo']:.2f}, {fit['ci_hi']:.2f}]")
    ax.set_xlabel("horizon T")
    ax.set_ylabel("regret")
    ax.set_title(fit["controller"])
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def compare_figure(cmp: dict, out_path: str) -> str:
    """Mean regret vs horizon for every controller, with stderr bars."""
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for c in cmp["controllers"]:
        Ts, ms, es = [], [], []
        for entry in cmp["table"]:
            if c in entry:
                Ts.append(entry["T"])
                ms.append(entry[c][0])
                es.append(entry[c][1])
        if Ts:
            ax.errorbar(Ts, ms, yerr=es, marker="o", capsize=3, label=c)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("horizon T")
    ax.set_ylabel("mean regret")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
