"""Cost accounting, attention-preservation metrics, latency benchmarking, reports.

FLOPs use the 1 multiply-accumulate = 1 FLOP convention and cover the dense
projections only; softmax, layer norm, and GELU element counts are reported
separately and excluded from totals, matching common ViT accounting.
"""

from __future__ import annotations

import statistics
import time
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import DimensionError
from .linalg import cosine_flat
from .model import AttentionCapture, ModelBundle, ModelConfig, expected_shapes, forward
from .synth import gaussian_images


@dataclass
class CostReport:
    """MAC counts and parameter counts with per-layer breakdowns."""

    flops: int
    params: int
    flops_breakdown: list[tuple[str, int]]
    params_breakdown: list[tuple[str, int]]
    aux_flops: list[tuple[str, int]]  # softmax/layernorm/gelu, excluded from totals

    def to_dict(self) -> dict:
        return {
            "flops": self.flops,
            "gflops": self.flops / 1e9,
            "params": self.params,
            "params_millions": self.params / 1e6,
            "flops_breakdown": [{"layer": n, "flops": v} for n, v in self.flops_breakdown],
            "params_breakdown": [
                {"layer": n, "params": v} for n, v in self.params_breakdown
            ],
            "aux_flops_excluded": [{"op": n, "flops": v} for n, v in self.aux_flops],
        }


def count_costs(config: ModelConfig) -> CostReport:
    """Closed-form MAC and parameter accounting for a config.

    Per block and head: the three projections N*d*(d_q+d_k+d_v), the two
    attention matmuls N^2*d_q and N^2*d_v, then the output projection
    N*(H*d_v)*d and the FFN 2*N*d*ffn. Params are counted from the actual
    tensor sizes the config implies.
    """
    n = config.tokens
    d = config.embed_dim
    h = config.heads
    flops: list[tuple[str, int]] = [
        ("patch_embed", n * (config.patch_size**2 * config.in_channels) * d)
    ]
    aux: list[tuple[str, int]] = []
    softmax = layernorm = gelu_ops = 0
    for b in range(config.depth):
        dq = config.head_dim_qk[b]
        dv = config.head_dim_v[b]
        ffn = config.ffn_hidden[b]
        flops.append((f"block{b}.qkv_proj", h * n * d * (2 * dq + dv)))
        flops.append((f"block{b}.attn_matmul", h * (n * n * dq + n * n * dv)))
        flops.append((f"block{b}.out_proj", n * (h * dv) * d))
        flops.append((f"block{b}.ffn", 2 * n * d * ffn))
        softmax += h * 3 * n * n
        layernorm += 2 * 5 * n * d
        gelu_ops += 6 * n * ffn
    layernorm += 5 * n * d  # final LN
    flops.append(("classifier", d * config.num_classes))
    aux = [("softmax", softmax), ("layer_norm", layernorm), ("gelu", gelu_ops)]

    shapes = expected_shapes(config)
    per_layer: dict[str, int] = {}
    for name, shape in shapes.items():
        layer = name.split(".")[0]
        per_layer[layer] = per_layer.get(layer, 0) + int(np.prod(shape))
    params_breakdown = list(per_layer.items())
    return CostReport(
        flops=sum(v for _, v in flops),
        params=sum(v for _, v in params_breakdown),
        flops_breakdown=flops,
        params_breakdown=params_breakdown,
        aux_flops=aux,
    )


@dataclass
class SimilarityReport:
    per_head: dict[tuple[int, int], float]
    mean: float

    def to_dict(self) -> dict:
        return {
            "mean_abs_cosine": self.mean,
            "per_head": [
                {"block": b, "head": h, "abs_cosine": v}
                for (b, h), v in self.per_head.items()
            ],
        }


def attention_similarity(
    orig: Sequence[AttentionCapture], other: Sequence[AttentionCapture]
) -> SimilarityReport:
    """Mean |cosine| between post-softmax attention maps, per head and overall.

    Captures must come from models with identical token, block, and head
    counts (physically pruned models keep N, so either masked or pruned
    captures work).
    """
    if len(orig) != len(other) or len(orig) == 0:
        raise DimensionError(
            f"capture counts disagree or empty: {len(orig)} vs {len(other)}"
        )
    depth = len(orig[0].blocks)
    heads = len(orig[0].blocks[0])
    sums: dict[tuple[int, int], float] = {(b, h): 0.0 for b in range(depth) for h in range(heads)}
    for cap_o, cap_m in zip(orig, other):
        if len(cap_o.blocks) != depth or len(cap_m.blocks) != depth:
            raise DimensionError("captures disagree on block count")
        for b in range(depth):
            if len(cap_o.blocks[b]) != heads or len(cap_m.blocks[b]) != heads:
                raise DimensionError(f"captures disagree on head count in block {b}")
            for h in range(heads):
                po = cap_o.head(b, h).probs
                pm = cap_m.head(b, h).probs
                if po.shape != pm.shape:
                    raise DimensionError(
                        f"attention maps disagree: {po.shape} vs {pm.shape}"
                    )
                sums[(b, h)] += abs(cosine_flat(po, pm))
    per_head = {key: v / len(orig) for key, v in sums.items()}
    mean = float(np.mean(list(per_head.values())))
    return SimilarityReport(per_head=per_head, mean=mean)


@dataclass
class BenchReport:
    warmup: int
    runs: int
    batch: int
    times_ms: list[float]
    mean_ms: float
    median_ms: float
    stddev_ms: float

    def to_dict(self) -> dict:
        return {
            "warmup": self.warmup,
            "runs": self.runs,
            "batch": self.batch,
            "mean_ms": self.mean_ms,
            "median_ms": self.median_ms,
            "stddev_ms": self.stddev_ms,
            "times_ms": self.times_ms,
        }


def bench(
    model: ModelBundle, runs: int = 1000, warmup: int = 200, batch: int = 1
) -> BenchReport:
    """Wall-clock forward latency on a fixed random input, single-threaded.

    The benchmark must own the process's compute while running; BLAS thread
    pools are pinned to one thread so speedups are attributable to arithmetic
    reduction rather than scheduling.
    """
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    if warmup < 0 or batch < 1:
        raise ValueError(f"warmup must be >= 0 and batch >= 1, got {warmup}/{batch}")
    cfg = model.config
    images = gaussian_images(
        count=batch,
        channels=cfg.in_channels,
        height=cfg.image_size,
        width=cfg.image_size,
        seed=0x42EC,
    )
    times: list[float] = []
    with threadpool_limits(limits=1):
        for _ in range(warmup):
            for i in range(batch):
                forward(model, images[i])
        for _ in range(runs):
            t0 = time.perf_counter()
            for i in range(batch):
                forward(model, images[i])
            times.append((time.perf_counter() - t0) * 1e3)
    return BenchReport(
        warmup=warmup,
        runs=runs,
        batch=batch,
        times_ms=times,
        mean_ms=statistics.fmean(times),
        median_ms=statistics.median(times),
        stddev_ms=statistics.stdev(times) if len(times) > 1 else 0.0,
    )


@dataclass
class RatioReport:
    qk: list[float]  # per block
    v: list[float]
    ffn: list[float]
    embed: float
    msa_aggregate: float
    ffn_aggregate: float

    def to_dict(self) -> dict:
        return {
            "qk_per_block": self.qk,
            "value_per_block": self.v,
            "ffn_per_block": self.ffn,
            "embed": self.embed,
            "msa_aggregate": self.msa_aggregate,
            "ffn_aggregate": self.ffn_aggregate,
        }


def ratio_report(original: ModelConfig, pruned: ModelConfig) -> RatioReport:
    """Per-layer pruning ratios: 1 - pruned_width/original_width."""
    if (
        original.depth != pruned.depth
        or original.heads != pruned.heads
        or original.image_size != pruned.image_size
        or original.patch_size != pruned.patch_size
    ):
        raise DimensionError("configs are not structurally comparable")
    qk, v, ffn = [], [], []
    msa_orig = msa_drop = ffn_orig = ffn_drop = 0
    for b in range(original.depth):
        qk.append(1.0 - pruned.head_dim_qk[b] / original.head_dim_qk[b])
        v.append(1.0 - pruned.head_dim_v[b] / original.head_dim_v[b])
        ffn.append(1.0 - pruned.ffn_hidden[b] / original.ffn_hidden[b])
        # every head contributes one QK group (width d_q) and one value group
        msa_orig += original.heads * (original.head_dim_qk[b] + original.head_dim_v[b])
        msa_drop += original.heads * (
            (original.head_dim_qk[b] - pruned.head_dim_qk[b])
            + (original.head_dim_v[b] - pruned.head_dim_v[b])
        )
        ffn_orig += original.ffn_hidden[b]
        ffn_drop += original.ffn_hidden[b] - pruned.ffn_hidden[b]
    return RatioReport(
        qk=qk,
        v=v,
        ffn=ffn,
        embed=1.0 - pruned.embed_dim / original.embed_dim,
        msa_aggregate=msa_drop / msa_orig,
        ffn_aggregate=ffn_drop / ffn_orig,
    )


def format_table(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Aligned-column plain-text report."""
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for j, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_pgm(matrix: np.ndarray, path) -> None:
    """8-bit binary PGM (P5) with min-max normalization."""
    if matrix.ndim != 2:
        raise DimensionError(f"PGM needs a 2-D matrix, got {matrix.shape}")
    m = matrix.astype(np.float64)
    lo, hi = m.min(), m.max()
    scaled = np.zeros_like(m) if hi == lo else (m - lo) / (hi - lo) * 255.0
    data = np.round(scaled).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def write_csv(matrix: np.ndarray, path) -> None:
    """Raw float values, one comma-separated row per matrix row."""
    if matrix.ndim != 2:
        raise DimensionError(f"CSV needs a 2-D matrix, got {matrix.shape}")
    with open(path, "w", encoding="utf-8") as f:
        for row in matrix:
            f.write(",".join(repr(float(x)) for x in row))
            f.write("\n")
