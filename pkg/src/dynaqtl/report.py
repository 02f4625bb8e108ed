"""Figure rendering for scan and simulation outputs.

Figures are written to files (SVG by default) next to the delimited
outputs; nothing is shown interactively.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .simulate import CurveStudy

# omit the creation date so identical runs produce byte-identical SVGs
_SVG_METADATA = {"Date": None}

TRAIT_COLORS = ("tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple")


def _save(fig, path) -> None:
    metadata = _SVG_METADATA if str(path).endswith(".svg") else None
    fig.savefig(path, metadata=metadata)
    plt.close(fig)


def plot_lr_profile(result, path) -> None:
    """LR versus position per linkage group, with the threshold dashed
    and marker positions ticked along the top."""
    groups = sorted({sp.group_index for sp in result.positions})
    fig, axes = plt.subplots(
        1, len(groups), figsize=(max(6, 4 * len(groups)), 3.5),
        squeeze=False, sharey=True,
    )
    for ax, gi in zip(axes[0], groups):
        sel = [k for k, sp in enumerate(result.positions) if sp.group_index == gi]
        x = np.array([result.positions[k].position_cM for k in sel])
        y = result.lr[sel]
        ax.plot(x, y, color="black", lw=1.2)
        if result.threshold is not None:
            ax.axhline(result.threshold, ls="--", color="gray", lw=1)
        for gi_c, pos, _ in result.qtl_calls:
            if gi_c == gi:
                ax.axvline(pos, color="tab:red", lw=0.8, alpha=0.7)
        ax.set_title(result.group_names[gi])
        ax.set_xlabel("position (cM)")
    axes[0][0].set_ylabel("LR")
    fig.tight_layout()
    _save(fig, path)


def plot_mean_curves(bases, coefficients, path, trait_names=None) -> None:
    """Fitted genotype mean trajectories, one panel per trait."""
    n_geno, _ = coefficients.shape
    n_traits = len(bases)
    trait_names = trait_names or [f"trait {h + 1}" for h in range(n_traits)]
    fig, axes = plt.subplots(
        1, n_traits, figsize=(3.2 * n_traits, 3.0), squeeze=False
    )
    start = 0
    styles = ("-", "--", ":", "-.")
    slices = []
    for b in bases:
        slices.append(slice(start, start + b.n_basis))
        start += b.n_basis
    for h, ax in enumerate(axes[0]):
        grid = np.linspace(bases[h].t_min, bases[h].t_max, 200)
        phi = bases[h].design_matrix(grid)
        for j in range(n_geno):
            ax.plot(
                grid, phi @ coefficients[j, slices[h]],
                styles[j % len(styles)], color=TRAIT_COLORS[h % len(TRAIT_COLORS)],
                label=f"genotype {j + 1}",
            )
        ax.set_title(trait_names[h])
        ax.set_xlabel("time")
    axes[0][0].legend(frameon=False, fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_curve_study(study: CurveStudy, path, trait_names=None) -> None:
    """Pointwise bias and STD of the fitted mean curves, per trait, with
    the two genotypes in solid and dashed lines."""
    n_geno, n_traits, _ = study.bias.shape
    trait_names = trait_names or [f"trait {h + 1}" for h in range(n_traits)]
    fig, axes = plt.subplots(
        2, n_traits, figsize=(3.2 * n_traits, 5.0), squeeze=False, sharex=True
    )
    styles = ("-", "--", ":", "-.")
    for h in range(n_traits):
        for j in range(n_geno):
            axes[0][h].plot(
                study.grid, study.bias[j, h], styles[j % len(styles)],
                color="black", lw=1.0,
            )
            axes[1][h].plot(
                study.grid, study.std[j, h], styles[j % len(styles)],
                color="black", lw=1.0,
            )
        axes[0][h].axhline(0.0, color="gray", lw=0.5)
        axes[0][h].set_title(trait_names[h])
        axes[1][h].set_xlabel("time")
    axes[0][0].set_ylabel("bias")
    axes[1][0].set_ylabel("STD")
    fig.tight_layout()
    _save(fig, path)
