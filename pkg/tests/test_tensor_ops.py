import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snp.errors import DimensionError, InvalidPlanError
from snp.tensor_ops import gelu, layer_norm, matmul, softmax_rows


def matmul_oracle(a, b):
    # scalar triple loop, float64 accumulation
    m, k = a.shape
    k2, p = b.shape
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            acc = 0.0
            for t in range(k):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity_bitwise(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((4, 4)).astype(np.float32)
        out = matmul(a, np.eye(4, dtype=np.float32))
        assert out.tobytes() == a.tobytes()

    def test_permutation_matrix(self):
        a = np.array([[1, 2], [3, 4]], dtype=np.float32)
        p = np.array([[0, 1], [1, 0]], dtype=np.float32)
        assert np.array_equal(matmul(a, p), np.array([[2, 1], [4, 3]], dtype=np.float32))

    def test_triple_loop_oracle(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((5, 4)).astype(np.float32)
        b = rng.standard_normal((4, 5)).astype(np.float32)
        assert np.max(np.abs(matmul(a, b) - matmul_oracle(a, b))) <= 1e-6

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(np.zeros((2, 3), np.float32), np.zeros((2, 2), np.float32))


class TestSoftmax:
    def test_zero_row_uniform(self):
        out = softmax_rows(np.zeros((1, 4), np.float32))
        assert np.allclose(out, 0.25, atol=1e-7)

    def test_large_values_no_overflow(self):
        out = softmax_rows(np.array([[1000.0, 1000.0]], np.float32))
        assert np.isfinite(out).all()
        assert np.allclose(out, 0.5, atol=1e-7)

    def test_oracle(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((3, 7)).astype(np.float32)
        z = a.astype(np.float64)
        expect = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        assert np.max(np.abs(softmax_rows(a) - expect)) <= 1e-6

    @settings(max_examples=50, deadline=None)
    @given(
        st.integers(1, 6),
        st.integers(1, 9),
        st.integers(0, 2**32 - 1),
    )
    def test_rows_sum_to_one(self, rows, cols, seed):
        rng = np.random.default_rng(seed)
        a = (rng.standard_normal((rows, cols)) * rng.uniform(0.1, 100)).astype(np.float32)
        out = softmax_rows(a)
        assert np.max(np.abs(out.sum(axis=1) - 1.0)) <= 1e-6


class TestLayerNorm:
    def test_identical_channels_gives_zeros(self):
        x = np.full((3, 8), 2.5, np.float32)
        out = layer_norm(x, np.ones(8, np.float32), np.zeros(8, np.float32))
        assert np.array_equal(out, np.zeros_like(x))

    def test_full_oracle(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((5, 16)).astype(np.float32)
        g = rng.standard_normal(16).astype(np.float32)
        b = rng.standard_normal(16).astype(np.float32)
        z = x.astype(np.float64)
        mean = z.mean(axis=1, keepdims=True)
        var = ((z - mean) ** 2).mean(axis=1, keepdims=True)
        expect = (z - mean) / np.sqrt(var + 1e-6) * g.astype(np.float64) + b.astype(np.float64)
        assert np.max(np.abs(layer_norm(x, g, b) - expect)) <= 1e-5

    def test_active_set_matches_sliced(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((4, 12)).astype(np.float32)
        g = rng.standard_normal(12).astype(np.float32)
        b = rng.standard_normal(12).astype(np.float32)
        active = [0, 2, 3, 7, 8, 11]
        out = layer_norm(x, g, b, active)
        sliced = layer_norm(x[:, active], g[active], b[active])
        assert np.array_equal(out[:, active], sliced)
        dropped = [i for i in range(12) if i not in active]
        assert np.array_equal(out[:, dropped], np.zeros((4, len(dropped)), np.float32))

    def test_empty_active_raises(self):
        x = np.zeros((2, 4), np.float32)
        with pytest.raises(InvalidPlanError):
            layer_norm(x, np.ones(4, np.float32), np.zeros(4, np.float32), [])

    def test_unit_statistics(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((8, 64)).astype(np.float32)
        out = layer_norm(x, np.ones(64, np.float32), np.zeros(64, np.float32)).astype(
            np.float64
        )
        assert np.max(np.abs(out.mean(axis=1))) <= 1e-5
        assert np.max(np.abs(out.var(axis=1) - 1.0)) <= 1e-3


class TestGelu:
    def test_zero(self):
        assert gelu(np.zeros((1, 1), np.float32))[0, 0] == 0.0

    def test_large_negative_asymptote(self):
        out = gelu(np.array([[-30.0]], np.float32))
        assert abs(float(out[0, 0])) <= 1e-6

    def test_erf_grid_oracle(self):
        x = np.linspace(-6, 6, 121).astype(np.float32).reshape(11, 11)
        expect = np.vectorize(
            lambda v: 0.5 * float(v) * (1.0 + math.erf(float(v) / math.sqrt(2.0)))
        )(x.astype(np.float64))
        assert np.max(np.abs(gelu(x) - expect)) <= 1e-6
