"""Matplotlib renderings of the report bundle, written next to the CSVs."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .analysis import ReportBundle  # noqa: E402

# Visual anchor on the error panel: published stay-after-error rate of a
# turn-level router on a text-game benchmark. Context only, never reproduced.
STAY_RATE_REFERENCE = 0.902


def render_figures(bundle: ReportBundle, outdir) -> list[str]:
    """Render switch-curve, phase-usage, lift, and error-stat figures.

    Returns the list of files written (figures with nothing to show are
    skipped, e.g. the error panel when no errors were logged).
    """
    os.makedirs(outdir, exist_ok=True)
    written = []

    if bundle.curve.pooled:
        fig, ax = plt.subplots(figsize=(5.5, 4))
        for points in bundle.curve.per_episode[:200]:
            xs = [p[0] for p in points]
            ys = [p[1] for p in points]
            ax.plot(xs, ys, color="steelblue", alpha=0.08, linewidth=0.8)
        xs = [p[0] for p in bundle.curve.pooled]
        ys = [p[1] for p in bundle.curve.pooled]
        ax.plot(xs, ys, color="crimson", marker="o", linewidth=2, label="pooled mean")
        ax.set_xlabel("cumulative model switches")
        ax.set_ylabel("cumulative cost (USD)")
        ax.set_title("Cost vs. switches over successful episodes")
        ax.legend()
        path = os.path.join(outdir, "switch_curve.png")
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    phases = bundle.phases
    if phases.model_ids:
        fig, ax = plt.subplots(figsize=(5.5, 4))
        bottoms = np.zeros(phases.frequencies.shape[0])
        x = np.arange(phases.frequencies.shape[0])
        for mi, mid in enumerate(phases.model_ids):
            heights = phases.frequencies[:, mi]
            ax.bar(x, heights, bottom=bottoms, label=mid)
            bottoms += heights
        ax.set_xticks(x)
        ax.set_xticklabels([f"phase {i}" for i in x])
        ax.set_ylabel("model frequency")
        ax.set_title("Model usage by episode phase")
        ax.legend(fontsize=7)
        path = os.path.join(outdir, "phase_usage.png")
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    lifts = bundle.lifts
    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(lifts.action_types), 1.0 + 0.6 * len(lifts.model_ids)))
    image = ax.imshow(lifts.lift, cmap="RdBu_r", vmin=0.0, vmax=2.0)
    ax.set_xticks(range(len(lifts.action_types)))
    ax.set_xticklabels(lifts.action_types, rotation=30, ha="right")
    ax.set_yticks(range(len(lifts.model_ids)))
    ax.set_yticklabels(lifts.model_ids)
    for mi in range(len(lifts.model_ids)):
        for ai in range(len(lifts.action_types)):
            value = lifts.lift[mi, ai]
            if np.isfinite(value):
                ax.text(ai, mi, f"{value:.2f}", ha="center", va="center", fontsize=7)
    fig.colorbar(image, ax=ax, label="lift = P(model | action) / P(model)")
    ax.set_title("Action specialization by model")
    path = os.path.join(outdir, "lift.png")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)

    if bundle.errors.defined:
        fig, ax = plt.subplots(figsize=(4.5, 3.5))
        labels = ["switch", "recover", "stay"]
        values = [bundle.errors.p_switch, bundle.errors.p_recover, bundle.errors.p_stay]
        ax.bar(labels, values, color=["darkorange", "seagreen", "slateblue"])
        ax.axhline(STAY_RATE_REFERENCE, color="gray", linestyle="--", linewidth=1,
                   label=f"published stay-rate reference ({STAY_RATE_REFERENCE:.3f})")
        ax.legend(fontsize=7)
        ax.set_ylim(0, 1)
        ax.set_ylabel("probability")
        ax.set_title(f"Behavior after an error (n={bundle.errors.n_conditioning})")
        path = os.path.join(outdir, "error_stats.png")
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    return written
