"""Importance criteria for every prune group.

Query/key filter pairs are scored by how much their rank-1 contribution to
the captured attention scores correlates (flattened cosine) with the leading
SVD components of those scores, averaged over calibration images. Value
filters are scored by inter-head diversity: the summed cosine distance to
every value filter of the same block. FFN hidden units and residual-stream
channels reuse the same diversity score within their own layers; the
residual-stream score is the elementwise sum over all producer layers.

Baseline criteria used for comparisons: ``l2`` (row norms summed across the
paired query/key layers), ``gm`` (per-layer diversity summed across the
pair), and ``reverse`` (negated pair scores, so ascending-order pruning
removes the most important pairs first). Baselines replace only the QK pair
scores; other groups always use the diversity criterion.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from . import serialize
from .errors import DimensionError
from .groups import FFN_HIDDEN, QK_PAIR, VALUE, build_groups
from .linalg import ZERO_NORM_GUARD, svd
from .model import AttentionCapture, HeadCapture, ModelBundle, forward

CRITERIA = ("snp", "l2", "gm", "reverse")


@dataclass
class ImportanceTable:
    """Per-group, per-filter scalar scores plus provenance."""

    fingerprint: str
    criterion: str
    r: int
    images: int
    scores: dict[tuple, np.ndarray] = field(default_factory=dict)
    reduction: str = "mean"

    def to_dict(self) -> dict:
        groups = []
        for (kind, block, head), vec in self.scores.items():
            groups.append(
                {
                    "kind": kind,
                    "block": block,
                    "head": head,
                    "scores": [float(x) for x in vec],
                }
            )
        return {
            "fingerprint": self.fingerprint,
            "criterion": self.criterion,
            "r": self.r,
            "images": self.images,
            "reduction": self.reduction,
            "groups": groups,
        }

    @staticmethod
    def from_dict(d: dict) -> "ImportanceTable":
        scores = {}
        for g in d["groups"]:
            block = g["block"] if g["block"] is None else int(g["block"])
            head = g["head"] if g["head"] is None else int(g["head"])
            scores[(g["kind"], block, head)] = np.asarray(g["scores"], dtype=np.float64)
        return ImportanceTable(
            fingerprint=str(d["fingerprint"]),
            criterion=str(d["criterion"]),
            r=int(d["r"]),
            images=int(d["images"]),
            reduction=str(d.get("reduction", "mean")),
            scores=scores,
        )


def _qk_scores_single(hc: HeadCapture, r: int) -> np.ndarray:
    # Score of filter i against the top-r SVD components of the captured
    # attention scores. Because both the contribution and the rank-1 matrix
    # are outer products, each flattened cosine factors into
    # (u_j . q_i)(v_j . k_i) / (|q_i||k_i|); the attention scale cancels.
    res = svd(hc.scores)
    q = hc.q.astype(np.float64)
    k = hc.k.astype(np.float64)
    qn = np.linalg.norm(q, axis=0)
    kn = np.linalg.norm(k, axis=0)
    uq = res.u[:, :r].astype(np.float64).T @ q  # (r, d_q)
    vk = res.v[:, :r].astype(np.float64).T @ k
    live = res.s[:r].astype(np.float64) >= ZERO_NORM_GUARD  # zero rank-1 -> cosine 0
    denom = qn * kn
    contrib_norm = hc.scale * denom
    terms = np.abs(uq[live]) * np.abs(vk[live])
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.minimum(terms / np.where(denom > 0.0, denom, 1.0), 1.0)
    scores = terms.sum(axis=0)
    scores[contrib_norm < ZERO_NORM_GUARD] = 0.0
    return scores


def qk_importance(
    captures: Sequence[AttentionCapture], block: int, head: int, r: int
) -> np.ndarray:
    """Mean per-filter attention-preservation score over calibration images."""
    if len(captures) == 0:
        raise ValueError("empty calibration set")
    n = captures[0].head(block, head).scores.shape[0]
    if not 1 <= r <= n:
        raise ValueError(f"rank budget r={r} outside [1, {n}]")
    acc = None
    for cap in captures:
        s = _qk_scores_single(cap.head(block, head), r)
        acc = s if acc is None else acc + s
    return acc / len(captures)


def _abs_cosine_matrix(w: np.ndarray) -> np.ndarray:
    w64 = w.astype(np.float64)
    gram = w64 @ w64.T
    norms = np.sqrt(np.diag(gram).copy())
    live = norms >= ZERO_NORM_GUARD
    denom = np.outer(np.where(live, norms, 1.0), np.where(live, norms, 1.0))
    cos = np.abs(gram) / denom
    cos[~live, :] = 0.0
    cos[:, ~live] = 0.0
    return np.minimum(cos, 1.0)


def layer_diversity_importance(w: np.ndarray) -> np.ndarray:
    """Summed cosine distance of each filter row to the layer's own filters.

    The self term is exactly zero; duplicated filters rank last.
    """
    if w.ndim != 2:
        raise DimensionError(f"expected a (width, in) weight matrix, got {w.shape}")
    dist = 1.0 - _abs_cosine_matrix(w)
    np.fill_diagonal(dist, 0.0)
    return dist.sum(axis=1)


def value_importance(model: ModelBundle, block: int) -> np.ndarray:
    """(heads, d_v) inter-head redundancy scores for one block's value layers."""
    cfg = model.config
    rows = [model.tensors[f"block{block}.head{h}.wv"] for h in range(cfg.heads)]
    stacked = np.concatenate(rows, axis=0)
    dist = 1.0 - _abs_cosine_matrix(stacked)
    np.fill_diagonal(dist, 0.0)
    return dist.sum(axis=1).reshape(cfg.heads, cfg.head_dim_v[block])


def head_importance(model: ModelBundle, block: int) -> np.ndarray:
    """Per-head score: sum of the head's value-filter scores."""
    return value_importance(model, block).sum(axis=1)


def residual_aggregate(producer_scores: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise sum of per-producer scores, by residual channel index."""
    if len(producer_scores) == 0:
        raise ValueError("no producer scores to aggregate")
    width = len(producer_scores[0])
    for s in producer_scores:
        if len(s) != width:
            raise DimensionError(
                f"producer score lengths disagree: {len(s)} vs {width}"
            )
    return np.sum(np.stack([np.asarray(s, dtype=np.float64) for s in producer_scores]), axis=0)


def l2_scores(w: np.ndarray) -> np.ndarray:
    """Euclidean norm of each filter row."""
    return np.linalg.norm(w.astype(np.float64), axis=1)


def embed_residual_scores(model: ModelBundle) -> np.ndarray:
    """Diversity scores summed over every residual-stream producer layer."""
    producers = [layer_diversity_importance(model.tensors["patch_embed.weight"])]
    for b in range(model.config.depth):
        producers.append(layer_diversity_importance(model.tensors[f"block{b}.proj.weight"]))
        producers.append(layer_diversity_importance(model.tensors[f"block{b}.fc2.weight"]))
    return residual_aggregate(producers)


def capture_calibration(
    model: ModelBundle, images: np.ndarray
) -> list[AttentionCapture]:
    """Forward every calibration image with attention capture enabled."""
    captures = []
    for i in range(images.shape[0]):
        _, cap = forward(model, images[i], capture=True)
        captures.append(cap)
    return captures


def build_importance_table(
    model: ModelBundle,
    images: np.ndarray | None,
    criterion: str = "snp",
    rank: int | None = None,
) -> ImportanceTable:
    """Score every prune group of the model under one criterion.

    Calibration images are required for the capture-based criteria (``snp``
    and ``reverse``); ``l2`` and ``gm`` are weight-only. Images are processed
    one at a time in file order and reduced by arithmetic mean, so repeated
    runs are byte-identical.
    """
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}, expected one of {CRITERIA}")
    cfg = model.config
    n = cfg.tokens
    r = n if rank is None else rank
    if not 1 <= r <= n:
        raise ValueError(f"rank budget r={r} outside [1, {n}]")

    image_count = 0
    qk_scores: dict[tuple[int, int], np.ndarray] = {}
    if criterion in ("snp", "reverse"):
        if images is None or images.shape[0] == 0:
            raise ValueError(f"criterion {criterion!r} needs a non-empty calibration set")
        image_count = images.shape[0]
        sums = {
            (b, h): np.zeros(cfg.head_dim_qk[b])
            for b in range(cfg.depth)
            for h in range(cfg.heads)
        }
        for i in range(image_count):
            _, cap = forward(model, images[i], capture=True)
            for b in range(cfg.depth):
                for h in range(cfg.heads):
                    sums[(b, h)] += _qk_scores_single(cap.head(b, h), r)
        sign = -1.0 if criterion == "reverse" else 1.0
        qk_scores = {key: sign * (vec / image_count) for key, vec in sums.items()}
    elif images is not None:
        image_count = images.shape[0]

    table = ImportanceTable(
        fingerprint=serialize.fingerprint(model),
        criterion=criterion,
        r=r,
        images=image_count,
    )
    value_cache = {b: value_importance(model, b) for b in range(cfg.depth)}
    for group in build_groups(cfg):
        kind, b, h = group.key
        if kind == QK_PAIR:
            if criterion == "l2":
                vec = l2_scores(model.tensors[f"block{b}.head{h}.wq"]) + l2_scores(
                    model.tensors[f"block{b}.head{h}.wk"]
                )
            elif criterion == "gm":
                vec = layer_diversity_importance(
                    model.tensors[f"block{b}.head{h}.wq"]
                ) + layer_diversity_importance(model.tensors[f"block{b}.head{h}.wk"])
            else:
                vec = qk_scores[(b, h)]
        elif kind == VALUE:
            vec = value_cache[b][h]
        elif kind == FFN_HIDDEN:
            vec = layer_diversity_importance(model.tensors[f"block{b}.fc1.weight"])
        else:
            vec = embed_residual_scores(model)
        table.scores[group.key] = np.asarray(vec, dtype=np.float64)
    return table


def baseline_importance(
    model: ModelBundle,
    criterion: str,
    images: np.ndarray | None = None,
    rank: int | None = None,
) -> ImportanceTable:
    """Importance table under one of the baseline criteria (l2/gm/reverse)."""
    if criterion not in ("l2", "gm", "reverse"):
        raise ValueError(f"unknown baseline criterion {criterion!r}")
    return build_importance_table(model, images, criterion=criterion, rank=rank)
