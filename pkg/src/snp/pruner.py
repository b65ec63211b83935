"""Turn importance tables into valid plans and physically slice models.

``apply_plan`` removes filters for real: every member of a group is sliced
along its axis by the group's keep-set, shapes shrink, and dense execution
gets faster on any device. ``apply_mask`` is the simulation oracle: it zeroes
the same filters (weights AND biases) at original shapes and restricts layer
norms to the kept residual channels, so masked and pruned models produce the
same logits up to float rounding.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from . import serialize
from .errors import InvalidPlanError, StalePlanError
from .groups import (
    EMBED_RESIDUAL,
    FFN_HIDDEN,
    QK_PAIR,
    VALUE,
    PruneGroup,
    PrunePlan,
    build_groups,
    require_valid,
)
from .importance import ImportanceTable
from .model import ModelBundle

# Guards ratio*width landing a hair below an exact integer in binary floats.
_FLOOR_EPS = 1e-9


def _drop_count(ratio: float, width: int) -> int:
    return int(math.floor(ratio * width + _FLOOR_EPS))


@dataclass(frozen=True)
class RatioSpec:
    """Requested pruning ratios, each in [0, 1); keep-count stays >= 1."""

    qk: float = 0.0
    v: float = 0.0
    ffn: float = 0.0
    embed: float = 0.0
    heads: float = 0.0
    qk_overrides: Mapping[int, float] = field(default_factory=dict)
    v_overrides: Mapping[int, float] = field(default_factory=dict)
    ffn_overrides: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        named = {"qk": self.qk, "v": self.v, "ffn": self.ffn, "embed": self.embed,
                 "heads": self.heads}
        for overrides in (self.qk_overrides, self.v_overrides, self.ffn_overrides):
            for b, r in overrides.items():
                named[f"override[{b}]"] = r
        for name, r in named.items():
            if not 0.0 <= r < 1.0:
                raise ValueError(f"ratio {name}={r} outside [0, 1)")

    def for_group(self, group: PruneGroup) -> float:
        if group.kind == QK_PAIR:
            return self.qk_overrides.get(group.block, self.qk)
        if group.kind == VALUE:
            return self.v_overrides.get(group.block, self.v)
        if group.kind == FFN_HIDDEN:
            return self.ffn_overrides.get(group.block, self.ffn)
        return self.embed


def make_plan(
    table: ImportanceTable,
    ratios: RatioSpec,
    groups: Sequence[PruneGroup],
    fingerprint: str | None = None,
) -> PrunePlan:
    """Drop the lowest-scoring floor(ratio*width) indices of every group.

    Ordering is a stable ascending sort of the scores, so among tied scores
    the lowest index is dropped first. Per-head uniform keep-counts hold by
    construction because one ratio applies to equal widths.
    """
    if fingerprint is not None and table.fingerprint != fingerprint:
        raise StalePlanError(
            f"importance table was built for {table.fingerprint[:12]}..., "
            f"model is {fingerprint[:12]}..."
        )
    plan = PrunePlan(fingerprint=table.fingerprint, criterion=table.criterion)
    for group in groups:
        if group.key not in table.scores:
            raise InvalidPlanError(f"importance table has no scores for group {group.key}")
        scores = table.scores[group.key]
        if len(scores) != group.width:
            raise InvalidPlanError(
                f"group {group.key}: {len(scores)} scores for width {group.width}"
            )
        drops = _drop_count(ratios.for_group(group), group.width)
        if group.width - drops < 1:
            raise InvalidPlanError(f"group {group.key}: ratio leaves zero filters")
        order = np.argsort(scores, kind="stable")
        keep = np.sort(order[drops:])
        plan.keeps[group.key] = tuple(int(i) for i in keep)
    require_valid(plan, list(groups), table.fingerprint)
    return plan


def _gather_axis_keeps(
    groups: Sequence[PruneGroup], plan: PrunePlan
) -> dict[tuple[str, int], np.ndarray]:
    # Combine keep-sets into one index array per (tensor, axis). Tensors hit
    # by several groups on the same axis (the out-projection's per-head
    # column ranges) concatenate in offset order.
    slices: dict[tuple[str, int], list[tuple[int, np.ndarray]]] = {}
    for group in groups:
        keep = np.asarray(plan.keeps[group.key], dtype=np.intp)
        for m in group.members:
            slices.setdefault((m.name, m.axis), []).append((m.offset, m.offset + keep))
    out = {}
    for key, parts in slices.items():
        parts.sort(key=lambda p: p[0])
        out[key] = np.concatenate([idx for _, idx in parts])
    return out


def apply_plan(model: ModelBundle, plan: PrunePlan) -> ModelBundle:
    """Physically slice every group's members by its keep-set."""
    cfg = model.config
    groups = build_groups(cfg)
    require_valid(plan, groups, serialize.fingerprint(model))

    tensors = dict(model.tensors)
    for (name, axis), idx in _gather_axis_keeps(groups, plan).items():
        tensors[name] = np.ascontiguousarray(np.take(tensors[name], idx, axis=axis))
    # untouched tensors still get copied so the result owns its memory
    for name, t in tensors.items():
        if t is model.tensors[name]:
            tensors[name] = t.copy()

    new_cfg = replace(
        cfg,
        embed_dim=len(plan.keeps[(EMBED_RESIDUAL, None, None)]),
        head_dim_qk=tuple(
            len(plan.keeps[(QK_PAIR, b, 0)]) for b in range(cfg.depth)
        ),
        head_dim_v=tuple(len(plan.keeps[(VALUE, b, 0)]) for b in range(cfg.depth)),
        ffn_hidden=tuple(
            len(plan.keeps[(FFN_HIDDEN, b, None)]) for b in range(cfg.depth)
        ),
    )
    pruned = ModelBundle(config=new_cfg, tensors=tensors)
    pruned.validate()
    return pruned


def apply_mask(model: ModelBundle, plan: PrunePlan) -> ModelBundle:
    """Zero the dropped filters at original shapes (simulation oracle).

    Dropped rows AND their biases are zeroed; consumer columns are left
    intact because their inputs are exactly zero. When the residual group has
    drops, layer norms are restricted to the kept channels so masked
    statistics match the pruned model's.
    """
    cfg = model.config
    groups = build_groups(cfg)
    require_valid(plan, groups, serialize.fingerprint(model))

    masked = model.copy()
    ln_active: tuple[int, ...] | None = None
    for group in groups:
        keep = plan.keeps[group.key]
        dropped = np.asarray(sorted(set(range(group.width)) - set(keep)), dtype=np.intp)
        if group.kind == EMBED_RESIDUAL and len(dropped):
            ln_active = tuple(keep)
        if len(dropped) == 0:
            continue
        for m in group.members:
            if m.role not in ("filter_weight", "filter_bias", "stream"):
                continue
            t = masked.tensors[m.name]
            idx = m.offset + dropped
            if m.axis == 0:
                t[idx] = 0.0
            else:
                t[:, idx] = 0.0
    masked.ln_active = ln_active
    return masked


def head_prune(
    model: ModelBundle, head_scores: Sequence[np.ndarray], ratio: float
) -> ModelBundle:
    """Remove the lowest-scoring floor(ratio*H) heads of every block."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"head prune ratio {ratio} outside [0, 1)")
    cfg = model.config
    if len(head_scores) != cfg.depth:
        raise InvalidPlanError(
            f"head scores cover {len(head_scores)} blocks, model has {cfg.depth}"
        )
    remove = _drop_count(ratio, cfg.heads)
    if remove >= cfg.heads:
        raise InvalidPlanError("head pruning would remove every head of a block")
    if remove == 0:
        return model.copy()

    tensors: dict[str, np.ndarray] = {}
    kept_by_block: list[list[int]] = []
    for b in range(cfg.depth):
        scores = np.asarray(head_scores[b], dtype=np.float64)
        if scores.shape != (cfg.heads,):
            raise InvalidPlanError(
                f"block {b}: {scores.shape} head scores for {cfg.heads} heads"
            )
        order = np.argsort(scores, kind="stable")
        kept = sorted(int(h) for h in order[remove:])
        kept_by_block.append(kept)

    for name, t in model.tensors.items():
        if ".head" in name or ".proj.weight" in name:
            continue
        tensors[name] = t.copy()
    for b, kept in enumerate(kept_by_block):
        dv = cfg.head_dim_v[b]
        for new_h, old_h in enumerate(kept):
            for part in ("wq", "bq", "wk", "bk", "wv", "bv"):
                tensors[f"block{b}.head{new_h}.{part}"] = model.tensors[
                    f"block{b}.head{old_h}.{part}"
                ].copy()
        cols = np.concatenate([np.arange(h * dv, (h + 1) * dv) for h in kept])
        tensors[f"block{b}.proj.weight"] = np.ascontiguousarray(
            model.tensors[f"block{b}.proj.weight"][:, cols]
        )

    pruned = ModelBundle(config=replace(cfg, heads=cfg.heads - remove), tensors=tensors)
    pruned.validate()
    return pruned
