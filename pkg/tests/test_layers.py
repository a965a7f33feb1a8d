"""Layer forward/backward math against brute-force oracles and finite differences."""

import numpy as np
import pytest

from slidesum.gradcheck import grad_check
from slidesum.layers import (
    Conv3d,
    Linear,
    MaxPool3d,
    ReLU,
    ResidualAdd,
    conv3d,
    linear,
    maxpool3d,
    relu,
    residual_add,
    softmax_cross_entropy,
)
from slidesum.tensor import ConvParams, ShapeError, Tensor

from .oracles import central_difference, naive_conv3d, naive_linear, naive_maxpool3d


def rel_close(a, b, tol=1e-6):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom)) < tol


class TestTensor:
    def test_from_flat_roundtrip(self):
        t = Tensor.from_flat((2, 3), [1, 2, 3, 4, 5, 6])
        assert t.shape == (2, 3)
        assert t.at(1, 2) == 6.0  # row-major offset 5

    def test_from_flat_length_mismatch(self):
        with pytest.raises(ShapeError):
            Tensor.from_flat((2, 3), [1, 2, 3])

    def test_zero_axis_rejected(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 0, 3)))

    def test_precision(self):
        assert Tensor([1.0]).precision == "single"
        assert Tensor([1.0], precision="double").precision == "double"
        assert Tensor(np.zeros(3, dtype=np.float64)).precision == "double"


class TestConv3d:
    def test_all_ones_cube(self):
        x = Tensor.ones((1, 2, 2, 2))
        w = Tensor.ones((1, 1, 2, 2, 2))
        b = Tensor.zeros((1,))
        y = conv3d(x, w, b, ConvParams(stride=1, padding=0))
        assert y.shape == (1, 1, 1, 1)
        assert y.at(0, 0, 0, 0) == 8.0

    def test_zero_input_linearity(self):
        rng = np.random.default_rng(0)
        x = Tensor.zeros((2, 3, 4, 4))
        w = Tensor(rng.standard_normal((3, 2, 3, 3, 3)), precision="single")
        b = Tensor.zeros((3,))
        y = conv3d(x, w, b, ConvParams(padding=1))
        assert np.all(y.data == 0)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((1, 3, 4, 4))
        w = rng.standard_normal((2, 1, 3, 3, 3))
        b = rng.standard_normal(2)
        y = conv3d(
            Tensor(x, precision="double"),
            Tensor(w, precision="double"),
            Tensor(b, precision="double"),
            ConvParams(stride=1, padding=1),
        )
        expected = naive_conv3d(x, w, b, stride=(1, 1, 1), padding=(1, 1, 1))
        assert rel_close(y.data, expected)

    def test_randomized_against_oracle(self):
        rng = np.random.default_rng(21)
        for _ in range(25):
            cin = int(rng.integers(1, 3))
            cout = int(rng.integers(1, 3))
            D, H, W = (int(rng.integers(2, 6)) for _ in range(3))
            kd = int(rng.integers(1, min(3, D) + 1))
            kh = int(rng.integers(1, min(3, H) + 1))
            kw = int(rng.integers(1, min(3, W) + 1))
            stride = tuple(int(rng.integers(1, 3)) for _ in range(3))
            pad = tuple(int(rng.integers(0, 2)) for _ in range(3))
            x = rng.standard_normal((cin, D, H, W))
            w = rng.standard_normal((cout, cin, kd, kh, kw))
            b = rng.standard_normal(cout)
            try:
                y = conv3d(
                    Tensor(x, precision="double"),
                    Tensor(w, precision="double"),
                    Tensor(b, precision="double"),
                    ConvParams(stride=stride, padding=pad),
                )
            except ShapeError:
                continue
            expected = naive_conv3d(x, w, b, stride=stride, padding=pad)
            assert rel_close(y.data, expected)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            conv3d(Tensor.ones((2, 4, 4, 4)), Tensor.ones((1, 3, 3, 3, 3)), Tensor.zeros((1,)))

    def test_degenerate_output_axis(self):
        with pytest.raises(ShapeError):
            conv3d(Tensor.ones((1, 2, 2, 2)), Tensor.ones((1, 1, 3, 3, 3)), Tensor.zeros((1,)))

    def test_batched_matches_per_sample(self):
        rng = np.random.default_rng(3)
        xs = rng.standard_normal((4, 2, 3, 5, 5)).astype(np.float32)
        w = Tensor(rng.standard_normal((3, 2, 3, 3, 3)).astype(np.float32))
        b = Tensor(rng.standard_normal(3).astype(np.float32))
        layer = Conv3d(w, b, ConvParams(padding=1))
        batched = layer.forward(Tensor(xs))
        for i in range(4):
            single = layer.forward(Tensor(xs[i]))
            assert rel_close(batched.data[i], single.data, tol=1e-5)

    def test_permuting_batch_rows_permutes_outputs(self):
        rng = np.random.default_rng(30)
        xs = rng.standard_normal((4, 2, 3, 5, 5)).astype(np.float32)
        w = Tensor(rng.standard_normal((3, 2, 3, 3, 3)).astype(np.float32))
        b = Tensor(rng.standard_normal(3).astype(np.float32))
        layer = Conv3d(w, b, ConvParams(padding=1))
        perm = np.array([2, 0, 3, 1])
        y = layer.forward(Tensor(xs))
        y_perm = layer.forward(Tensor(xs[perm]))
        assert np.array_equal(y_perm.data, y.data[perm])

    def test_gradients(self):
        rng = np.random.default_rng(11)
        layer = Conv3d(
            Tensor(rng.standard_normal((2, 1, 3, 3, 3)), precision="double"),
            Tensor(rng.standard_normal(2), precision="double"),
            ConvParams(stride=(1, 2, 1), padding=1),
        )
        x = Tensor(rng.standard_normal((1, 3, 4, 4)), precision="double")
        assert grad_check(layer, x) < 1e-4


class TestMaxPool3d:
    def test_distinct_values(self):
        x = Tensor(np.arange(1, 9, dtype=np.float32).reshape(1, 2, 2, 2))
        y, _ = maxpool3d(x, (2, 2, 2), (2, 2, 2))
        assert y.shape == (1, 1, 1, 1)
        assert y.at(0, 0, 0, 0) == 8.0

    def test_tie_routes_to_lowest_linear_index(self):
        x = Tensor(np.full((1, 2, 2, 2), 5.0, dtype=np.float32))
        layer = MaxPool3d((2, 2, 2), (2, 2, 2))
        y, cache = layer.forward_cached(x)
        assert y.at(0, 0, 0, 0) == 5.0
        dx, _ = layer.backward(Tensor(np.ones((1, 1, 1, 1), dtype=np.float32)), cache)
        expected = np.zeros((1, 2, 2, 2))
        expected[0, 0, 0, 0] = 1.0  # lowest linear index of the window
        assert np.array_equal(dx.data, expected)

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 4, 4, 4))
        y, _ = maxpool3d(Tensor(x, precision="double"), 2, 2)
        expected, _ = naive_maxpool3d(x, (2, 2, 2), (2, 2, 2))
        assert np.array_equal(y.data, expected)

    def test_randomized_against_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(25):
            C = int(rng.integers(1, 3))
            D, H, W = (int(rng.integers(2, 7)) for _ in range(3))
            window = tuple(int(rng.integers(1, min(3, s) + 1)) for s in (D, H, W))
            stride = tuple(int(rng.integers(1, 3)) for _ in range(3))
            x = rng.standard_normal((C, D, H, W))
            y, _ = maxpool3d(Tensor(x, precision="double"), window, stride)
            expected, _ = naive_maxpool3d(x, window, stride)
            assert np.array_equal(y.data, expected)

    def test_window_too_large(self):
        with pytest.raises(ShapeError):
            maxpool3d(Tensor.ones((1, 2, 2, 2)), (3, 2, 2), (1, 1, 1))

    def test_gradients(self):
        rng = np.random.default_rng(13)
        # values spread out so windows have unique maxima
        x = Tensor(rng.permutation(64).reshape(1, 4, 4, 4) * 1.0, precision="double")
        assert grad_check(MaxPool3d(2, 2), x) < 1e-6


class TestReLU:
    def test_basic(self):
        y = relu(Tensor([-1.0, 0.0, 2.0]))
        assert y.tolist() == [0.0, 0.0, 2.0]

    def test_identity_region(self):
        rng = np.random.default_rng(2)
        x = np.abs(rng.standard_normal(10)) + 0.5
        layer = ReLU()
        y, cache = layer.forward_cached(Tensor(x, precision="double"))
        assert np.array_equal(y.data, x)
        dy = rng.standard_normal(10)
        dx, _ = layer.backward(Tensor(dy, precision="double"), cache)
        assert np.array_equal(dx.data, dy)

    def test_gradient_away_from_zero(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal(20)
        x = np.where(np.abs(x) < 0.2, x + np.sign(x) * 0.5 + 0.01, x)
        assert grad_check(ReLU(), Tensor(x, precision="double"), eps=1e-6) < 1e-6


class TestLinear:
    def test_identity_weight(self):
        x = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
        y = linear(x, Tensor(np.eye(3, dtype=np.float32)), Tensor.zeros((3,)))
        assert np.array_equal(y.data, x.data)

    def test_zero_weight_gives_bias(self):
        x = Tensor(np.ones((4, 3), dtype=np.float32))
        b = Tensor(np.array([1.0, -2.0], dtype=np.float32))
        y = linear(x, Tensor.zeros((2, 3)), b)
        assert np.array_equal(y.data, np.tile(b.data, (4, 1)))

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((3, 5))
        w = rng.standard_normal((4, 5))
        b = rng.standard_normal(4)
        y = linear(Tensor(x, precision="double"), Tensor(w, precision="double"), Tensor(b, precision="double"))
        assert rel_close(y.data, naive_linear(x, w, b))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            linear(Tensor.ones((2, 3)), Tensor.ones((4, 5)), Tensor.zeros((4,)))

    def test_gradients(self):
        rng = np.random.default_rng(8)
        layer = Linear(
            Tensor(rng.standard_normal((4, 5)), precision="double"),
            Tensor(rng.standard_normal(4), precision="double"),
        )
        assert grad_check(layer, Tensor(rng.standard_normal((2, 5)), precision="double")) < 1e-4


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss, probs, _ = softmax_cross_entropy(Tensor.zeros((2, 3)), [0, 2])
        assert np.allclose(probs.data, 1 / 3)
        assert abs(loss - np.log(3)) < 1e-6

    def test_saturated(self):
        loss, _, _ = softmax_cross_entropy(
            Tensor(np.array([[100.0, 0.0, 0.0]]), precision="double"), [0]
        )
        assert loss < 1e-6

    def test_target_out_of_range(self):
        with pytest.raises(ValueError):
            softmax_cross_entropy(Tensor.zeros((1, 3)), [3])

    def test_rows_sum_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(9)
        logits = rng.standard_normal((5, 3))
        _, probs, _ = softmax_cross_entropy(Tensor(logits, precision="double"), [0, 1, 2, 0, 1])
        assert np.allclose(probs.data.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(probs.data > 0) and np.all(probs.data < 1)
        shifted = logits + rng.standard_normal((5, 1)) * 10
        _, probs2, _ = softmax_cross_entropy(Tensor(shifted, precision="double"), [0, 1, 2, 0, 1])
        assert np.allclose(probs.data, probs2.data, atol=1e-6)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        logits = rng.standard_normal((4, 3))
        targets = [0, 2, 1, 1]
        weights = np.array([0.5, 1.5, 1.0])

        _, _, dlogits = softmax_cross_entropy(
            Tensor(logits, precision="double"), targets, Tensor(weights, precision="double")
        )

        def loss_fn():
            loss, _, _ = softmax_cross_entropy(
                Tensor(logits, precision="double"), targets, Tensor(weights, precision="double")
            )
            return loss

        numeric = central_difference(loss_fn, logits)
        denom = np.maximum(np.maximum(np.abs(dlogits.data), np.abs(numeric)), 1e-8)
        assert np.max(np.abs(dlogits.data - numeric) / denom) < 1e-6

    def test_duplicated_sample_doubles_gradient_sum(self):
        rng = np.random.default_rng(12)
        row = rng.standard_normal((1, 3))
        _, _, d1 = softmax_cross_entropy(Tensor(row, precision="double"), [1])
        both = np.vstack([row, row])
        _, _, d2 = softmax_cross_entropy(Tensor(both, precision="double"), [1, 1])
        # mean normalization: each duplicated row carries half the weight
        assert np.allclose(d2.data.sum(axis=0), d1.data[0], atol=1e-12)


class TestResidualAdd:
    def test_identity_mapping(self):
        rng = np.random.default_rng(14)
        x = rng.standard_normal((3, 2, 4, 4)).astype(np.float32)
        y = residual_add(Tensor(x), Tensor.zeros((3, 2, 4, 4)))
        assert np.array_equal(y.data, x)  # bit-exact identity

    def test_doubling(self):
        rng = np.random.default_rng(15)
        x = rng.standard_normal((2, 2, 2, 2)).astype(np.float32)
        y = residual_add(Tensor(x), Tensor(x))
        assert np.array_equal(y.data, 2 * x)

    def test_zero_pad_channel_growth(self):
        rng = np.random.default_rng(16)
        short = rng.standard_normal((2, 3, 4, 4))
        branch = rng.standard_normal((4, 3, 4, 4))
        y = residual_add(Tensor(short, precision="double"), Tensor(branch, precision="double"))
        expected = branch.copy()
        expected[:2] += short
        assert np.array_equal(y.data[:2], expected[:2])
        assert np.array_equal(y.data[2:], branch[2:])

    def test_spatial_mismatch_and_channel_order(self):
        with pytest.raises(ShapeError):
            residual_add(Tensor.ones((2, 3, 4, 4)), Tensor.ones((2, 3, 4, 5)))
        with pytest.raises(ShapeError):
            residual_add(Tensor.ones((4, 3, 4, 4)), Tensor.ones((2, 3, 4, 4)))

    def test_backward_splits(self):
        rng = np.random.default_rng(18)
        layer = ResidualAdd()
        short = Tensor(rng.standard_normal((2, 3, 3, 3)), precision="double")
        branch = Tensor(rng.standard_normal((4, 3, 3, 3)), precision="double")
        _, cache = layer.forward_cached(short, branch)
        dy = rng.standard_normal((4, 3, 3, 3))
        (d_short, d_branch), _ = layer.backward(Tensor(dy, precision="double"), cache)
        assert np.array_equal(d_short.data, dy[:2])
        assert np.array_equal(d_branch.data, dy)
        assert grad_check(layer, (short, branch)) < 1e-6


class TestForwardShapes:
    def test_conv_output_shape_formula(self):
        rng = np.random.default_rng(19)
        for _ in range(30):
            D, H, W = (int(rng.integers(3, 9)) for _ in range(3))
            k = int(rng.integers(1, 4))
            s = int(rng.integers(1, 3))
            p = int(rng.integers(0, 2))
            x = Tensor(rng.standard_normal((1, D, H, W)).astype(np.float32))
            w = Tensor(rng.standard_normal((2, 1, k, k, k)).astype(np.float32))
            try:
                y = conv3d(x, w, Tensor.zeros((2,)), ConvParams(stride=s, padding=p))
            except ShapeError:
                assert any((dim + 2 * p - k) // s + 1 < 1 for dim in (D, H, W))
                continue
            expected = tuple((dim + 2 * p - k) // s + 1 for dim in (D, H, W))
            assert y.shape == (2, *expected)
