"""Prunable groups and the coupling constraints that keep pruning graph-consistent.

Four group kinds exist:

* ``qk_pair``   -- one head's query/key filter pairs; rows of W_q and W_k
                   (plus biases) must be removed together because filter i of
                   both layers meets in one outer product.
* ``value``     -- one head's value filters; rows of W_v plus the matching
                   input columns of the block's output projection.
* ``ffn_hidden``-- a block's FFN hidden units; fc1 rows plus fc2 columns.
* ``embed_residual`` -- the single global residual-stream group: every tensor
                   axis tied to the embedding dimension, including the class
                   token, positional embedding, and all layer norms. One
                   keep-set applies to the whole stream.

Member roles describe how mask simulation treats each tensor axis:
``filter_weight``/``filter_bias``/``stream`` entries are zeroed at dropped
indices; ``input_cols`` feed from already-zeroed activations and stay intact;
``norm_param`` entries are handled by the restricted layer norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InvalidPlanError, StalePlanError
from .model import ModelConfig

QK_PAIR = "qk_pair"
VALUE = "value"
FFN_HIDDEN = "ffn_hidden"
EMBED_RESIDUAL = "embed_residual"


@dataclass(frozen=True)
class GroupMember:
    name: str
    axis: int
    role: str
    offset: int = 0  # slice indices along the axis are offset + keep


@dataclass(frozen=True)
class PruneGroup:
    kind: str
    block: int | None
    head: int | None
    width: int
    members: tuple[GroupMember, ...]

    @property
    def key(self) -> tuple:
        return (self.kind, self.block, self.head)


@dataclass
class PrunePlan:
    """Per-group sorted keep-index lists; every group appears exactly once."""

    fingerprint: str
    criterion: str
    keeps: dict[tuple, tuple[int, ...]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        groups = []
        for (kind, block, head), keep in self.keeps.items():
            groups.append(
                {"kind": kind, "block": block, "head": head, "keep": list(keep)}
            )
        return {
            "fingerprint": self.fingerprint,
            "criterion": self.criterion,
            "groups": groups,
        }

    @staticmethod
    def from_dict(d: dict) -> "PrunePlan":
        keeps = {}
        for g in d["groups"]:
            block = g["block"] if g["block"] is None else int(g["block"])
            head = g["head"] if g["head"] is None else int(g["head"])
            keeps[(g["kind"], block, head)] = tuple(int(i) for i in g["keep"])
        return PrunePlan(
            fingerprint=str(d["fingerprint"]),
            criterion=str(d["criterion"]),
            keeps=keeps,
        )


def build_groups(config: ModelConfig) -> list[PruneGroup]:
    """Resolve all prune groups of a model, embed group last."""
    groups: list[PruneGroup] = []
    for b in range(config.depth):
        dq = config.head_dim_qk[b]
        for h in range(config.heads):
            groups.append(
                PruneGroup(
                    kind=QK_PAIR,
                    block=b,
                    head=h,
                    width=dq,
                    members=(
                        GroupMember(f"block{b}.head{h}.wq", 0, "filter_weight"),
                        GroupMember(f"block{b}.head{h}.bq", 0, "filter_bias"),
                        GroupMember(f"block{b}.head{h}.wk", 0, "filter_weight"),
                        GroupMember(f"block{b}.head{h}.bk", 0, "filter_bias"),
                    ),
                )
            )
    for b in range(config.depth):
        dv = config.head_dim_v[b]
        for h in range(config.heads):
            groups.append(
                PruneGroup(
                    kind=VALUE,
                    block=b,
                    head=h,
                    width=dv,
                    members=(
                        GroupMember(f"block{b}.head{h}.wv", 0, "filter_weight"),
                        GroupMember(f"block{b}.head{h}.bv", 0, "filter_bias"),
                        GroupMember(f"block{b}.proj.weight", 1, "input_cols", offset=h * dv),
                    ),
                )
            )
    for b in range(config.depth):
        groups.append(
            PruneGroup(
                kind=FFN_HIDDEN,
                block=b,
                head=None,
                width=config.ffn_hidden[b],
                members=(
                    GroupMember(f"block{b}.fc1.weight", 0, "filter_weight"),
                    GroupMember(f"block{b}.fc1.bias", 0, "filter_bias"),
                    GroupMember(f"block{b}.fc2.weight", 1, "input_cols"),
                ),
            )
        )
    members: list[GroupMember] = [
        GroupMember("patch_embed.weight", 0, "filter_weight"),
        GroupMember("patch_embed.bias", 0, "filter_bias"),
        GroupMember("cls_token", 0, "stream"),
        GroupMember("pos_embed", 1, "stream"),
    ]
    for b in range(config.depth):
        members.append(GroupMember(f"block{b}.ln1.gamma", 0, "norm_param"))
        members.append(GroupMember(f"block{b}.ln1.beta", 0, "norm_param"))
        for h in range(config.heads):
            members.append(GroupMember(f"block{b}.head{h}.wq", 1, "input_cols"))
            members.append(GroupMember(f"block{b}.head{h}.wk", 1, "input_cols"))
            members.append(GroupMember(f"block{b}.head{h}.wv", 1, "input_cols"))
        members.append(GroupMember(f"block{b}.proj.weight", 0, "filter_weight"))
        members.append(GroupMember(f"block{b}.proj.bias", 0, "filter_bias"))
        members.append(GroupMember(f"block{b}.ln2.gamma", 0, "norm_param"))
        members.append(GroupMember(f"block{b}.ln2.beta", 0, "norm_param"))
        members.append(GroupMember(f"block{b}.fc1.weight", 1, "input_cols"))
        members.append(GroupMember(f"block{b}.fc2.weight", 0, "filter_weight"))
        members.append(GroupMember(f"block{b}.fc2.bias", 0, "filter_bias"))
    members.append(GroupMember("final_ln.gamma", 0, "norm_param"))
    members.append(GroupMember("final_ln.beta", 0, "norm_param"))
    members.append(GroupMember("classifier.weight", 1, "input_cols"))
    groups.append(
        PruneGroup(
            kind=EMBED_RESIDUAL,
            block=None,
            head=None,
            width=config.embed_dim,
            members=tuple(members),
        )
    )
    return groups


def keep_all_plan(groups: list[PruneGroup], fingerprint: str) -> PrunePlan:
    return PrunePlan(
        fingerprint=fingerprint,
        criterion="keep-all",
        keeps={g.key: tuple(range(g.width)) for g in groups},
    )


def validate_plan(
    plan: PrunePlan, groups: list[PruneGroup], fingerprint: str | None = None
) -> list[str]:
    """Return the full list of violated constraints; empty means applicable."""
    if fingerprint is not None and plan.fingerprint != fingerprint:
        raise StalePlanError(
            f"plan was built for fingerprint {plan.fingerprint[:12]}..., "
            f"model is {fingerprint[:12]}..."
        )
    violations: list[str] = []
    by_key = {g.key: g for g in groups}
    for key in by_key:
        if key not in plan.keeps:
            violations.append(f"group {key} missing from plan (keep-all must be explicit)")
    for key in plan.keeps:
        if key not in by_key:
            violations.append(f"plan group {key} does not exist in the model")
    for key, keep in plan.keeps.items():
        group = by_key.get(key)
        if group is None:
            continue
        if len(keep) == 0:
            violations.append(f"group {key} keeps zero filters")
        if any(keep[i] >= keep[i + 1] for i in range(len(keep) - 1)):
            violations.append(f"group {key} keep indices not strictly increasing")
        if keep and (keep[0] < 0 or keep[-1] >= group.width):
            violations.append(
                f"group {key} keep indices out of bounds for width {group.width}"
            )
    # uniform keep-counts across heads within a block, for QK and VALUE alike
    for kind in (QK_PAIR, VALUE):
        blocks: dict[int, set[int]] = {}
        for g in groups:
            if g.kind != kind or g.key not in plan.keeps:
                continue
            blocks.setdefault(g.block, set()).add(len(plan.keeps[g.key]))
        for b, counts in blocks.items():
            if len(counts) > 1:
                violations.append(
                    f"{kind} keep-counts differ across heads of block {b}: {sorted(counts)}"
                )
    return violations


def require_valid(plan: PrunePlan, groups: list[PruneGroup], fingerprint: str | None) -> None:
    violations = validate_plan(plan, groups, fingerprint)
    if violations:
        raise InvalidPlanError("; ".join(violations))
