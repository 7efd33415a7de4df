import math

import numpy as np
import pytest

from swarmgrad.errors import ArgumentError
from swarmgrad.models.layers import (
    activation,
    attention_backward,
    attention_forward,
    conv2d_backward,
    conv2d_forward,
    cross_entropy,
    fc_forward,
    global_average_pool,
    layer_norm_forward,
    mha_forward,
    multi_head_attention,
    pool2d_backward,
    pool2d_forward,
    position_encoding,
    position_encoding_matrix,
    scaled_dot_attention,
    softmax,
    temporal_max_pool,
    temporal_max_pool_backward,
)
from swarmgrad.models.transformer import (
    encoder_block_forward,
    encoder_block_param_shapes,
)


class TestPositionEncoding:
    def test_position_zero_alternates_zero_one(self):
        for d in (2, 4, 8, 16):
            pe = position_encoding(0, d)
            np.testing.assert_array_equal(pe[0::2], np.zeros(d // 2))
            np.testing.assert_array_equal(pe[1::2], np.ones(d // 2))

    def test_position_one_d4_hand_values(self):
        pe = position_encoding(1, 4)
        expected = [math.sin(1.0), math.cos(1.0), math.sin(0.01), math.cos(0.01)]
        np.testing.assert_allclose(pe, expected, rtol=0, atol=1e-15)
        np.testing.assert_allclose(
            pe, [0.84147, 0.54030, 0.0099998, 0.99995], atol=1e-5)

    def test_all_components_in_unit_interval(self):
        mat = position_encoding_matrix(64, 10)
        assert np.all(mat >= -1.0) and np.all(mat <= 1.0)

    def test_injective_on_sample(self):
        rng = np.random.default_rng(0)
        sample = sorted(set(rng.integers(0, 10000, 60).tolist()))
        mat = np.stack([position_encoding(p, 8) for p in sample])
        dists = np.linalg.norm(mat[:, None, :] - mat[None, :, :], axis=-1)
        off_diag = dists[~np.eye(len(sample), dtype=bool)]
        assert np.all(off_diag > 1e-8)

    def test_odd_dimension_rejected(self):
        with pytest.raises(ArgumentError):
            position_encoding(3, 5)

    def test_negative_position_rejected(self):
        with pytest.raises(ArgumentError):
            position_encoding(-1, 4)


class TestAttention:
    def test_single_row_returns_v(self):
        q = np.array([[1.0, 2.0]])
        k = np.array([[0.5, -1.0]])
        v = np.array([[3.0, 4.0, 5.0]])
        np.testing.assert_allclose(scaled_dot_attention(q, k, v), v, atol=1e-15)

    def test_identical_keys_average_values(self):
        q = np.random.default_rng(1).normal(size=(2, 3))
        k = np.tile(np.array([[1.0, 0.0, -1.0]]), (2, 1))
        v = np.array([[2.0, 0.0], [0.0, 4.0]])
        out = scaled_dot_attention(q, k, v)
        np.testing.assert_allclose(out, np.tile(v.mean(axis=0), (2, 1)), atol=1e-12)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(2)
        q, k = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
        v = rng.normal(size=(3, 4))
        # independent dense recomputation
        scores = q @ k.T / np.sqrt(2.0)
        weights = np.exp(scores - scores.max(axis=1, keepdims=True))
        weights /= weights.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(scaled_dot_attention(q, k, v), weights @ v,
                                   atol=1e-12)

    def test_rows_are_convex_combinations_of_v(self):
        rng = np.random.default_rng(3)
        q, k = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
        v = rng.normal(size=(5, 3))
        out = scaled_dot_attention(q, k, v)
        for j in range(3):
            assert np.all(out[:, j] >= v[:, j].min() - 1e-12)
            assert np.all(out[:, j] <= v[:, j].max() + 1e-12)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ArgumentError):
            scaled_dot_attention(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 2)))

    def test_backward_matches_finite_difference(self):
        rng = np.random.default_rng(4)
        q, k, v = rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
        out, cache = attention_forward(q, k, v)
        upstream = rng.normal(size=out.shape)
        dq, dk, dv = attention_backward(upstream, cache)
        eps = 1e-6
        for arr, grad in ((q, dq), (k, dk), (v, dv)):
            num = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + eps
                up = (attention_forward(q, k, v)[0] * upstream).sum()
                arr[idx] = orig - eps
                down = (attention_forward(q, k, v)[0] * upstream).sum()
                arr[idx] = orig
                num[idx] = (up - down) / (2 * eps)
            np.testing.assert_allclose(grad, num, atol=1e-6)


class TestMultiHead:
    def test_identity_single_head_equals_attention(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(4, 3))
        eye = np.eye(3)
        out = multi_head_attention(x, eye[None], eye[None], eye[None], eye)
        np.testing.assert_allclose(out, scaled_dot_attention(x, x, x), atol=1e-12)

    def test_zero_values_give_zero_output(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(4, 6))
        wq = rng.normal(size=(2, 6, 3))
        wk = rng.normal(size=(2, 6, 3))
        wv = np.zeros((2, 6, 3))
        wo = rng.normal(size=(6, 6))
        np.testing.assert_array_equal(multi_head_attention(x, wq, wk, wv, wo),
                                      np.zeros((4, 6)))

    def test_two_heads_match_concat_project_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(3, 4))
        wq, wk, wv = (rng.normal(size=(2, 4, 2)) for _ in range(3))
        wo = rng.normal(size=(4, 4))
        heads = []
        for h in range(2):
            heads.append(scaled_dot_attention(x @ wq[h], x @ wk[h], x @ wv[h]))
        expected = np.concatenate(heads, axis=1) @ wo
        np.testing.assert_allclose(multi_head_attention(x, wq, wk, wv, wo),
                                   expected, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ArgumentError):
            mha_forward(np.zeros((3, 4)), np.zeros((2, 4, 2)), np.zeros((2, 4, 2)),
                        np.zeros((2, 4, 2)), np.zeros((5, 4)))


class TestEncoderBlock:
    @staticmethod
    def block_params(rng, d_model=6, heads=2, ffn=5, zero=False):
        shapes = encoder_block_param_shapes(d_model, heads, ffn)
        params = {}
        for name, shape in shapes.items():
            if name.endswith("_g"):
                params[name] = np.ones(shape)
            elif zero or name.endswith("_b") or name.startswith("ffn_b"):
                params[name] = np.zeros(shape)
            else:
                params[name] = rng.normal(size=shape) * 0.3
        return params

    def test_layer_norm_rows_standardized(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(5, 7)) * 3 + 1
        out, _ = layer_norm_forward(x, np.ones(7), np.zeros(7))
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-9)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-9)

    def test_zero_weights_reduce_to_double_layer_norm(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(4, 6))
        params = self.block_params(rng, zero=True)
        out, _ = encoder_block_forward(x, params)
        ln1, _ = layer_norm_forward(x, params["ln1_g"], params["ln1_b"])
        ln2, _ = layer_norm_forward(ln1, params["ln2_g"], params["ln2_b"])
        np.testing.assert_allclose(out, ln2, atol=1e-12)

    def test_batched_and_single_agree(self):
        rng = np.random.default_rng(10)
        params = self.block_params(rng)
        x = rng.normal(size=(3, 5, 6))
        batched, _ = encoder_block_forward(x, params)
        for b in range(3):
            single, _ = encoder_block_forward(x[b], params)
            np.testing.assert_allclose(batched[b], single, atol=1e-12)


class TestConvPool:
    def test_identity_kernel(self):
        rng = np.random.default_rng(11)
        img = rng.normal(size=(5, 4))
        out = conv2d_forward(img, np.ones((1, 1)))
        np.testing.assert_array_equal(out, img)

    def test_hand_cross_correlation_3x3_by_2x2(self):
        img = np.arange(9, dtype=float).reshape(3, 3)
        kern = np.array([[1.0, 0.0], [0.0, 1.0]])
        # out[i, j] = img[i, j] + img[i+1, j+1]
        expected = np.array([[0 + 4, 1 + 5], [3 + 7, 4 + 8]], dtype=float)
        np.testing.assert_array_equal(conv2d_forward(img, kern), expected)

    def test_kernel_larger_than_input_rejected(self):
        with pytest.raises(ArgumentError):
            conv2d_forward(np.zeros((2, 2)), np.ones((3, 3)))

    def test_maxpool_constant_image(self):
        out, _ = pool2d_forward(np.full((4, 4), 2.5), (2, 2), mode="max")
        np.testing.assert_array_equal(out, np.full((2, 2), 2.5))

    def test_avgpool_hand_values(self):
        img = np.arange(16, dtype=float).reshape(4, 4)
        out, _ = pool2d_forward(img, (2, 2), mode="avg")
        np.testing.assert_array_equal(out, [[2.5, 4.5], [10.5, 12.5]])

    def test_pool_window_must_divide(self):
        with pytest.raises(ArgumentError):
            pool2d_forward(np.zeros((5, 4)), (2, 2))

    def test_pool_backward_routes_to_argmax(self):
        x = np.array([[1.0, 2.0], [3.0, 0.0]])
        out, cache = pool2d_forward(x, (2, 2), mode="max")
        dx = pool2d_backward(np.array([[5.0]]), cache)
        np.testing.assert_array_equal(dx, [[0.0, 0.0], [5.0, 0.0]])

    def test_conv_backward_matches_finite_difference(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(2, 4, 4, 2))
        kern = rng.normal(size=(2, 2, 2, 3))
        out = conv2d_forward(x, kern)
        upstream = rng.normal(size=out.shape)
        dx, dk, db = conv2d_backward(upstream, x, kern)
        eps = 1e-6
        num = np.zeros_like(kern)
        for idx in np.ndindex(kern.shape):
            orig = kern[idx]
            kern[idx] = orig + eps
            up = (conv2d_forward(x, kern) * upstream).sum()
            kern[idx] = orig - eps
            down = (conv2d_forward(x, kern) * upstream).sum()
            kern[idx] = orig
            num[idx] = (up - down) / (2 * eps)
        np.testing.assert_allclose(dk, num, atol=1e-5)

    def test_global_average_pool(self):
        const = np.full((3, 5, 2), 7.0)
        np.testing.assert_array_equal(global_average_pool(const), [7.0, 7.0])
        np.testing.assert_array_equal(global_average_pool(np.zeros((2, 2, 3))),
                                      np.zeros(3))
        rng = np.random.default_rng(13)
        f = rng.normal(size=(2, 2, 3))
        expected = [f[:, :, c].sum() / 4.0 for c in range(3)]
        np.testing.assert_allclose(global_average_pool(f), expected, atol=1e-15)


class TestActivationsAndLoss:
    def test_activation_values(self):
        x = np.array([-2.0, 0.0, 3.0])
        np.testing.assert_allclose(activation(x, "sigmoid"),
                                   1 / (1 + np.exp(-x)), atol=1e-15)
        np.testing.assert_allclose(activation(x, "tanh"), np.tanh(x), atol=1e-15)
        np.testing.assert_array_equal(activation(x, "relu"), [0.0, 0.0, 3.0])
        np.testing.assert_allclose(activation(x, "leaky_relu"), [-0.02, 0.0, 3.0],
                                   atol=1e-15)
        with pytest.raises(ArgumentError):
            activation(x, "swish")

    def test_softmax_rows_are_distributions(self):
        rng = np.random.default_rng(14)
        p = softmax(rng.normal(size=(20, 6)) * 30)
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_cross_entropy_uniform_is_log_c(self):
        for c in (2, 4, 10):
            p = np.full((3, c), 1.0 / c)
            labels = np.array([0, 1, c - 1])
            assert cross_entropy(p, labels) == pytest.approx(math.log(c), abs=1e-12)

    def test_cross_entropy_one_hot_correct_is_zero(self):
        p = np.eye(3)[[0, 1, 2]]
        assert cross_entropy(p, np.array([0, 1, 2])) == pytest.approx(0.0, abs=1e-9)

    def test_cross_entropy_hand_value(self):
        p = np.array([[0.7, 0.3]])
        assert cross_entropy(p, np.array([0])) == pytest.approx(-math.log(0.7),
                                                                abs=1e-12)
        assert cross_entropy(p, np.array([0])) == pytest.approx(0.35667, abs=1e-5)

    def test_cross_entropy_nonnegative_and_clamped(self):
        p = np.array([[1.0, 0.0]])
        val = cross_entropy(p, np.array([1]))  # zero prob clamps at 1e-12
        assert val == pytest.approx(-math.log(1e-12))
        assert cross_entropy(p, np.array([0])) >= 0.0

    def test_cross_entropy_requires_distribution_rows(self):
        with pytest.raises(ArgumentError):
            cross_entropy(np.array([[0.5, 0.4]]), np.array([0]))

    def test_fc_shapes(self):
        with pytest.raises(ArgumentError):
            fc_forward(np.zeros((2, 3)), np.zeros((4, 5)))

    def test_temporal_max_pool_roundtrip(self):
        x = np.array([[[1.0, 5.0], [3.0, 2.0], [2.0, 2.0]]])
        out, arg = temporal_max_pool(x)
        np.testing.assert_array_equal(out, [[3.0, 5.0]])
        dx = temporal_max_pool_backward(np.array([[1.0, 2.0]]), arg, 3)
        np.testing.assert_array_equal(dx, [[[0.0, 2.0], [1.0, 0.0], [0.0, 0.0]]])
