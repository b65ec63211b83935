"""Matplotlib renderings saved next to the delimited report outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluator import CostReport, RatioReport


def _new_fig(width: float = 6.0, height: float = 4.2):
    return plt.subplots(figsize=(width, height), dpi=140, layout="constrained")


def save_attention_figure(matrix: np.ndarray, path, title: str = "attention rollout") -> None:
    """Heatmap of a rollout (or any token-to-token) matrix."""
    fig, ax = _new_fig(5.2, 4.4)
    im = ax.imshow(matrix, cmap="viridis", aspect="equal", interpolation="nearest")
    ax.set_title(title)
    ax.set_xlabel("source token")
    ax.set_ylabel("target token")
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.savefig(path)
    plt.close(fig)


def save_cost_figure(report: CostReport, path) -> None:
    """Horizontal bars of the per-layer MAC breakdown."""
    names = [n for n, _ in report.flops_breakdown]
    values = [v / 1e6 for _, v in report.flops_breakdown]
    fig, ax = _new_fig(7.0, 0.28 * len(names) + 1.6)
    ypos = np.arange(len(names))
    ax.barh(ypos, values, color="#3572b0")
    ax.set_yticks(ypos, names, fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("MFLOPs (1 MAC = 1 FLOP)")
    ax.set_title(f"total {report.flops / 1e9:.3f} GFLOPs, {report.params / 1e6:.2f} M params")
    fig.savefig(path)
    plt.close(fig)


def save_ratio_figure(report: RatioReport, path) -> None:
    """Per-block pruning ratios for the QK, value, and FFN groups."""
    depth = len(report.qk)
    xpos = np.arange(depth)
    width = 0.27
    fig, ax = _new_fig(max(6.0, 0.6 * depth + 2.0), 4.0)
    ax.bar(xpos - width, report.qk, width, label="query/key", color="#3572b0")
    ax.bar(xpos, report.v, width, label="value", color="#e4a33d")
    ax.bar(xpos + width, report.ffn, width, label="ffn", color="#5aa469")
    ax.axhline(report.embed, color="#b05a5a", linestyle="--", label="residual stream")
    ax.set_xticks(xpos, [str(b) for b in range(depth)])
    ax.set_xlabel("block")
    ax.set_ylabel("pruning ratio")
    ax.set_ylim(0.0, 1.0)
    ax.set_title(
        f"MSA aggregate {report.msa_aggregate:.2f}, FFN aggregate {report.ffn_aggregate:.2f}"
    )
    ax.legend(fontsize=8)
    fig.savefig(path)
    plt.close(fig)
