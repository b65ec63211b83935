"""ViT architecture definition, weight container, and deterministic forward pass.

The model is a plain pre-norm ViT/DeiT block structure. Per-head query, key,
and value weights are stored as separate tensors so each head can keep its
own filter indices after pruning; all linear weights use the (out, in)
convention, so filters are rows.

The attention scale of every block is frozen at 1/sqrt(d_q) of the ORIGINAL
model and stored in the config; it is deliberately not recomputed after
pruning so pruned and masked models score attention identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, NumericError
from .tensor_ops import F32, gelu, layer_norm, linear, matmul, softmax_rows


@dataclass(frozen=True)
class ModelConfig:
    image_size: int
    patch_size: int
    in_channels: int
    embed_dim: int
    depth: int
    heads: int
    head_dim_qk: tuple[int, ...]  # per block; identical for all heads of a block
    head_dim_v: tuple[int, ...]
    ffn_hidden: tuple[int, ...]
    num_classes: int
    attn_scale: tuple[float, ...]

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise DimensionError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        for name in ("head_dim_qk", "head_dim_v", "ffn_hidden", "attn_scale"):
            seq = getattr(self, name)
            if len(seq) != self.depth:
                raise DimensionError(f"{name} must have one entry per block, got {len(seq)}")
        if any(d < 1 for d in self.head_dim_qk) or any(d < 1 for d in self.head_dim_v):
            raise DimensionError("per-head dimensions must be >= 1 in every block")
        if min(self.embed_dim, self.depth, self.heads, self.num_classes) < 1:
            raise DimensionError("embed_dim, depth, heads, and num_classes must be >= 1")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def tokens(self) -> int:
        """Token count N: patch grid plus the class token."""
        return self.grid * self.grid + 1

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "patch_size": self.patch_size,
            "in_channels": self.in_channels,
            "embed_dim": self.embed_dim,
            "depth": self.depth,
            "heads": self.heads,
            "head_dim_qk": list(self.head_dim_qk),
            "head_dim_v": list(self.head_dim_v),
            "ffn_hidden": list(self.ffn_hidden),
            "num_classes": self.num_classes,
            "attn_scale": list(self.attn_scale),
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(
            image_size=int(d["image_size"]),
            patch_size=int(d["patch_size"]),
            in_channels=int(d["in_channels"]),
            embed_dim=int(d["embed_dim"]),
            depth=int(d["depth"]),
            heads=int(d["heads"]),
            head_dim_qk=tuple(int(x) for x in d["head_dim_qk"]),
            head_dim_v=tuple(int(x) for x in d["head_dim_v"]),
            ffn_hidden=tuple(int(x) for x in d["ffn_hidden"]),
            num_classes=int(d["num_classes"]),
            attn_scale=tuple(float(x) for x in d["attn_scale"]),
        )


def expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical tensor-name -> shape map for a config.

    The iteration order of the returned dict is the canonical tensor order
    used by serialization and the synthetic weight generator.
    """
    d = config.embed_dim
    n = config.tokens
    patch_in = config.patch_size * config.patch_size * config.in_channels
    shapes: dict[str, tuple[int, ...]] = {
        "patch_embed.weight": (d, patch_in),
        "patch_embed.bias": (d,),
        "cls_token": (d,),
        "pos_embed": (n, d),
    }
    for b in range(config.depth):
        dq = config.head_dim_qk[b]
        dv = config.head_dim_v[b]
        ffn = config.ffn_hidden[b]
        shapes[f"block{b}.ln1.gamma"] = (d,)
        shapes[f"block{b}.ln1.beta"] = (d,)
        for h in range(config.heads):
            shapes[f"block{b}.head{h}.wq"] = (dq, d)
            shapes[f"block{b}.head{h}.bq"] = (dq,)
            shapes[f"block{b}.head{h}.wk"] = (dq, d)
            shapes[f"block{b}.head{h}.bk"] = (dq,)
            shapes[f"block{b}.head{h}.wv"] = (dv, d)
            shapes[f"block{b}.head{h}.bv"] = (dv,)
        shapes[f"block{b}.proj.weight"] = (d, config.heads * dv)
        shapes[f"block{b}.proj.bias"] = (d,)
        shapes[f"block{b}.ln2.gamma"] = (d,)
        shapes[f"block{b}.ln2.beta"] = (d,)
        shapes[f"block{b}.fc1.weight"] = (ffn, d)
        shapes[f"block{b}.fc1.bias"] = (ffn,)
        shapes[f"block{b}.fc2.weight"] = (d, ffn)
        shapes[f"block{b}.fc2.bias"] = (d,)
    shapes["final_ln.gamma"] = (d,)
    shapes["final_ln.beta"] = (d,)
    shapes["classifier.weight"] = (config.num_classes, d)
    shapes["classifier.bias"] = (config.num_classes,)
    return shapes


@dataclass
class ModelBundle:
    """Architecture config plus named weight tensors.

    `ln_active` is only set on mask-simulated bundles: it restricts every
    layer norm to the kept residual channels. Such bundles are in-memory
    oracles and cannot be serialized.
    """

    config: ModelConfig
    tensors: dict[str, np.ndarray]
    ln_active: tuple[int, ...] | None = None

    def validate(self) -> None:
        shapes = expected_shapes(self.config)
        missing = [k for k in shapes if k not in self.tensors]
        if missing:
            raise DimensionError(f"bundle is missing tensors: {missing[:4]} ...")
        extra = [k for k in self.tensors if k not in shapes]
        if extra:
            raise DimensionError(f"bundle has unexpected tensors: {extra[:4]} ...")
        for name, shape in shapes.items():
            t = self.tensors[name]
            if tuple(t.shape) != shape:
                raise DimensionError(
                    f"tensor {name} has shape {tuple(t.shape)}, config expects {shape}"
                )
            if t.dtype != F32:
                raise DimensionError(f"tensor {name} has dtype {t.dtype}, expected float32")

    def param_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ModelBundle":
        return ModelBundle(
            config=self.config,
            tensors={k: v.copy() for k, v in self.tensors.items()},
            ln_active=self.ln_active,
        )


@dataclass
class HeadCapture:
    """Intermediates of one head: projections and attention matrices."""

    q: np.ndarray  # (N, d_q)
    k: np.ndarray  # (N, d_q)
    scores: np.ndarray  # (N, N), pre-softmax, already multiplied by attn_scale
    probs: np.ndarray  # (N, N), rows sum to 1
    scale: float


@dataclass
class AttentionCapture:
    blocks: list[list[HeadCapture]] = field(default_factory=list)

    def head(self, block: int, head: int) -> HeadCapture:
        return self.blocks[block][head]


def patchify(image: np.ndarray, config: ModelConfig) -> np.ndarray:
    """(C, H, W) image -> (patches, P*P*C) rows in row-major patch order.

    Within a patch the layout is channel-major (c, py, px), matching the
    patch-embed weight layout.
    """
    c, h, w = config.in_channels, config.image_size, config.image_size
    if image.shape != (c, h, w):
        raise DimensionError(f"image shape {image.shape} does not match config {(c, h, w)}")
    p = config.patch_size
    g = config.grid
    x = image.reshape(c, g, p, g, p)
    x = x.transpose(1, 3, 0, 2, 4)
    return np.ascontiguousarray(x.reshape(g * g, c * p * p), dtype=F32)


def forward(
    model: ModelBundle, image: np.ndarray, capture: bool = False
) -> tuple[np.ndarray, AttentionCapture | None]:
    """Run the model on one image; optionally capture per-head attention.

    Pre-norm ViT: patchify, linear embed, prepend class token, add positional
    embedding, then depth x (LN, MSA, residual, LN, FFN, residual), final LN,
    classifier on the class token.
    """
    cfg = model.config
    t = model.tensors
    active = list(model.ln_active) if model.ln_active is not None else None

    patches = patchify(image, cfg)
    x = linear(patches, t["patch_embed.weight"], t["patch_embed.bias"])
    x = np.concatenate([t["cls_token"][None, :], x], axis=0)
    x = (x.astype(np.float64) + t["pos_embed"].astype(np.float64)).astype(F32)

    cap = AttentionCapture() if capture else None
    for b in range(cfg.depth):
        y = layer_norm(x, t[f"block{b}.ln1.gamma"], t[f"block{b}.ln1.beta"], active)
        scale = cfg.attn_scale[b]
        heads_out = []
        block_caps: list[HeadCapture] = []
        for h in range(cfg.heads):
            q = linear(y, t[f"block{b}.head{h}.wq"], t[f"block{b}.head{h}.bq"])
            k = linear(y, t[f"block{b}.head{h}.wk"], t[f"block{b}.head{h}.bk"])
            v = linear(y, t[f"block{b}.head{h}.wv"], t[f"block{b}.head{h}.bv"])
            scores = matmul(q, k.T) * F32(scale)
            probs = softmax_rows(scores)
            heads_out.append(matmul(probs, v))
            if capture:
                block_caps.append(
                    HeadCapture(q=q, k=k, scores=scores, probs=probs, scale=float(scale))
                )
        concat = np.concatenate(heads_out, axis=1)
        x = (
            x.astype(np.float64)
            + linear(concat, t[f"block{b}.proj.weight"], t[f"block{b}.proj.bias"]).astype(
                np.float64
            )
        ).astype(F32)
        y = layer_norm(x, t[f"block{b}.ln2.gamma"], t[f"block{b}.ln2.beta"], active)
        hidden = gelu(linear(y, t[f"block{b}.fc1.weight"], t[f"block{b}.fc1.bias"]))
        x = (
            x.astype(np.float64)
            + linear(hidden, t[f"block{b}.fc2.weight"], t[f"block{b}.fc2.bias"]).astype(
                np.float64
            )
        ).astype(F32)
        if not np.isfinite(x).all():
            raise NumericError(f"non-finite activations after block {b}")
        if capture:
            cap.blocks.append(block_caps)
    y = layer_norm(x, t["final_ln.gamma"], t["final_ln.beta"], active)
    logits = linear(y[0:1], t["classifier.weight"], t["classifier.bias"])[0]
    if not np.isfinite(logits).all():
        raise NumericError("non-finite logits after classifier")
    return logits, cap


def qk_filter_contribution(
    capture: AttentionCapture, block: int, head: int, i: int
) -> np.ndarray:
    """Rank-1 contribution of filter pair i to the captured attention scores.

    Summing over all i reproduces the captured pre-softmax scores, which is
    the decomposition the importance criterion relies on.
    """
    hc = capture.head(block, head)
    if not 0 <= i < hc.q.shape[1]:
        raise IndexError(f"filter index {i} out of range for d_q={hc.q.shape[1]}")
    qi = hc.q[:, i].astype(np.float64)
    ki = hc.k[:, i].astype(np.float64)
    return (hc.scale * np.outer(qi, ki)).astype(F32)


def attention_rollout(capture: AttentionCapture) -> np.ndarray:
    """Cumulative token-to-token influence map across all blocks.

    Per block: average post-softmax probabilities over heads, add identity,
    renormalize rows, then left-multiply cumulatively from input to output.
    """
    rollout: np.ndarray | None = None
    for block_caps in capture.blocks:
        mean = np.mean([hc.probs.astype(np.float64) for hc in block_caps], axis=0)
        aug = mean + np.eye(mean.shape[0])
        aug /= aug.sum(axis=1, keepdims=True)
        rollout = aug if rollout is None else aug @ rollout
    if rollout is None:
        raise DimensionError("capture holds no blocks")
    return rollout.astype(F32)


def with_tensors(model: ModelBundle, tensors: dict[str, np.ndarray]) -> ModelBundle:
    """Bundle with some tensors replaced (shares the rest)."""
    merged = dict(model.tensors)
    merged.update(tensors)
    return replace(model, tensors=merged)
