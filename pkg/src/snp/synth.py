"""Deterministic synthetic models and calibration sets for desk-scale work.

Weights come from a counter-based splitmix64 stream, so the same seed always
produces byte-identical files regardless of platform. Presets mirror the
DeiT family shapes plus a two-block desk model for fast experiments.
"""

from __future__ import annotations

import math

import numpy as np

from .model import ModelBundle, ModelConfig, expected_shapes
from .tensor_ops import F32

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_WEIGHT_STD = 0.02


def splitmix64(seed: int, start: int, count: int) -> np.ndarray:
    """uint64 stream values [start, start+count) of the seeded sequence."""
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + idx * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        z = z ^ (z >> np.uint64(31))
    return z


def normal_stream(seed: int, start: int, count: int) -> tuple[np.ndarray, int]:
    """Standard normals via Box-Muller on splitmix64 pairs.

    Returns (values, consumed stream slots); odd counts waste one slot.
    """
    pairs = (count + 1) // 2
    z = splitmix64(seed, start, 2 * pairs)
    u1 = ((z[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53  # (0, 1]
    u2 = (z[1::2] >> np.uint64(11)).astype(np.float64) * 2.0**-53  # [0, 1)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.empty(2 * pairs)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:count], 2 * pairs


def _preset_config(
    image: int, patch: int, d: int, depth: int, heads: int, dqv: int, ffn: int, classes: int
) -> ModelConfig:
    return ModelConfig(
        image_size=image,
        patch_size=patch,
        in_channels=3,
        embed_dim=d,
        depth=depth,
        heads=heads,
        head_dim_qk=(dqv,) * depth,
        head_dim_v=(dqv,) * depth,
        ffn_hidden=(ffn,) * depth,
        num_classes=classes,
        attn_scale=(1.0 / math.sqrt(dqv),) * depth,
    )


PRESETS: dict[str, ModelConfig] = {
    "tiny-desk": _preset_config(12, 4, 24, 2, 2, 8, 48, 10),
    "deit-tiny": _preset_config(224, 16, 192, 12, 3, 64, 768, 1000),
    "deit-small": _preset_config(224, 16, 384, 12, 6, 64, 1536, 1000),
    "deit-base": _preset_config(224, 16, 768, 12, 12, 64, 3072, 1000),
}


def preset_config(name: str) -> ModelConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}, expected one of {sorted(PRESETS)}")
    return PRESETS[name]


def synth_model(config: ModelConfig | str, seed: int) -> ModelBundle:
    """Random-weight model: weights ~ N(0, 0.02), zero biases, unit LN gains.

    The stream position advances only for random tensors, in canonical tensor
    order, so files from the same seed are byte-identical.
    """
    if isinstance(config, str):
        config = preset_config(config)
    tensors: dict[str, np.ndarray] = {}
    cursor = 0
    for name, shape in expected_shapes(config).items():
        size = int(np.prod(shape))
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("bias", "bq", "bk", "bv", "beta"):
            tensors[name] = np.zeros(shape, dtype=F32)
        elif leaf == "gamma":
            tensors[name] = np.ones(shape, dtype=F32)
        else:
            values, used = normal_stream(seed, cursor, size)
            cursor += used
            tensors[name] = (_WEIGHT_STD * values).astype(F32).reshape(shape)
    bundle = ModelBundle(config=config, tensors=tensors)
    bundle.validate()
    return bundle


def gaussian_images(
    count: int, channels: int, height: int, width: int, seed: int
) -> np.ndarray:
    """(count, C, H, W) float32 standard-normal image stack."""
    size = count * channels * height * width
    values, _ = normal_stream(seed, 0, size)
    return values.astype(F32).reshape(count, channels, height, width)


def synth_calibration(config: ModelConfig, count: int, seed: int) -> np.ndarray:
    """Calibration image stack matching a model's input shape."""
    return gaussian_images(count, config.in_channels, config.image_size, config.image_size, seed)
