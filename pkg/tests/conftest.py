import math

import numpy as np
import pytest

from snp.model import ModelBundle, ModelConfig, expected_shapes


def make_config(
    image=8, patch=4, channels=3, d=16, depth=1, heads=2, dq=8, dv=8, ffn=32, classes=4
) -> ModelConfig:
    return ModelConfig(
        image_size=image,
        patch_size=patch,
        in_channels=channels,
        embed_dim=d,
        depth=depth,
        heads=heads,
        head_dim_qk=(dq,) * depth,
        head_dim_v=(dv,) * depth,
        ffn_hidden=(ffn,) * depth,
        num_classes=classes,
        attn_scale=(1.0 / math.sqrt(dq),) * depth,
    )


def random_bundle(config: ModelConfig, rng: np.random.Generator) -> ModelBundle:
    """Random model with non-zero biases and perturbed LN params.

    Deliberately richer than the synth generator so bias and norm paths get
    exercised by the equivalence tests.
    """
    tensors = {}
    for name, shape in expected_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            t = 1.0 + 0.1 * rng.standard_normal(shape)
        elif leaf == "beta":
            t = 0.05 * rng.standard_normal(shape)
        elif leaf in ("bias", "bq", "bk", "bv"):
            t = 0.03 * rng.standard_normal(shape)
        else:
            t = 0.08 * rng.standard_normal(shape)
        tensors[name] = t.astype(np.float32)
    bundle = ModelBundle(config=config, tensors=tensors)
    bundle.validate()
    return bundle


def random_image(config: ModelConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(
        (config.in_channels, config.image_size, config.image_size)
    ).astype(np.float32)


@pytest.fixture
def tiny_config() -> ModelConfig:
    return make_config()


@pytest.fixture
def desk_config() -> ModelConfig:
    return make_config(image=12, patch=4, d=24, depth=2, heads=2, dq=8, dv=8, ffn=48, classes=10)
