import numpy as np
import pytest

from dsunet.tensor import (
    ConfigError,
    ConvSpec,
    ShapeError,
    Tensor,
    avg_pool2d,
    bilinear_resize,
    cast_all,
    conv2d,
    gelu,
    grad_check,
    linear,
    pointwise_activation,
    reduce,
    relu,
    sigmoid,
    softmax_over_branch,
)


def brute_force_conv(x, w, bias, stride, pad, dil):
    """Triple-loop direct convolution oracle (groups = 1)."""
    n, cin, h, w_in = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - dil * (kh - 1) - 1) // stride + 1
    ow = (w_in + 2 * pad - dil * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, cout, oh, ow))
    for b in range(n):
        for co in range(cout):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += (
                                    xp[b, ci, i * stride + ki * dil,
                                       j * stride + kj * dil]
                                    * w[co, ci, ki, kj]
                                )
                    out[b, co, i, j] = acc + (bias[co] if bias is not None else 0.0)
    return out


class TestConv2d:
    def test_all_ones_kernel_interior_and_corner(self):
        x = Tensor(np.ones((1, 1, 4, 4), dtype=np.float32))
        w = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
        spec = ConvSpec(1, 1, (3, 3), stride=1, padding=1)
        out = conv2d(x, w, None, spec).data[0, 0]
        assert out[1, 1] == 9.0
        assert out[0, 0] == 4.0

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.standard_normal((1, 1, 5, 5)).astype(np.float32))
        w = Tensor(np.ones((1, 1, 1, 1), dtype=np.float32))
        out = conv2d(x, w, None, ConvSpec(1, 1, (1, 1)))
        np.testing.assert_array_equal(out.data, x.data)

    def test_depthwise_channel_independence(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((1, 3, 5, 5)).astype(np.float32)
        w = Tensor(rng.standard_normal((3, 1, 3, 3)).astype(np.float32))
        spec = ConvSpec(3, 3, (3, 3), padding=1, groups=3)
        base = conv2d(Tensor(x), w, None, spec).data
        x2 = x.copy()
        x2[0, 1] += 1.0  # perturb channel 1 only
        pert = conv2d(Tensor(x2), w, None, spec).data
        np.testing.assert_array_equal(base[0, 0], pert[0, 0])
        np.testing.assert_array_equal(base[0, 2], pert[0, 2])
        assert np.any(base[0, 1] != pert[0, 1])

    @pytest.mark.parametrize("stride,pad,dil", [(1, 0, 1), (1, 1, 1), (2, 1, 1),
                                                (1, 2, 2)])
    def test_matches_brute_force(self, stride, pad, dil):
        rng = np.random.default_rng(42)
        x = rng.standard_normal((2, 3, 4, 4))
        w = rng.standard_normal((2, 3, 3, 3))
        b = rng.standard_normal(2)
        spec = ConvSpec(3, 2, (3, 3), stride=stride, padding=pad, dilation=dil)
        got = conv2d(Tensor(x), Tensor(w), Tensor(b), spec).data
        want = brute_force_conv(x, w, b, stride, pad, dil)
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-5)

    def test_channel_mismatch_raises(self):
        x = Tensor(np.zeros((1, 2, 4, 4)))
        w = Tensor(np.zeros((1, 3, 3, 3)))
        with pytest.raises(ShapeError, match="channels"):
            conv2d(x, w, None, ConvSpec(3, 1, (3, 3)))

    def test_nonpositive_output_raises(self):
        with pytest.raises(ConfigError, match="non-positive"):
            ConvSpec(1, 1, (5, 5)).out_size(3, 3)

    def test_grouped_conv_gradients(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((4, 5, 5)))
        w = Tensor(rng.standard_normal((4, 2, 3, 3)), trainable=True)
        b = Tensor(rng.standard_normal(4), trainable=True)
        spec = ConvSpec(4, 4, (3, 3), padding=1, groups=2)
        cast_all([x, w, b], np.float64)
        err = grad_check(lambda: conv2d(x, w, b, spec), [x, w, b])
        assert err < 1e-6


class TestLinear:
    def test_identity(self):
        x = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
        w = Tensor(np.eye(3, dtype=np.float32))
        out = linear(x, w, None)
        np.testing.assert_array_equal(out.data, x.data)

    def test_sum(self):
        out = linear(Tensor([3.0, 4.0]), Tensor([[1.0], [1.0]]),
                     Tensor([0.0]))
        assert out.data[0] == 7.0

    def test_trailing_mismatch(self):
        with pytest.raises(ShapeError):
            linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))), None)

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.standard_normal((5, 4)))
        w = Tensor(rng.standard_normal((4, 2)), trainable=True)
        b = Tensor(rng.standard_normal(2), trainable=True)
        cast_all([x, w, b], np.float64)
        assert grad_check(lambda: linear(x, w, b), [x, w, b]) < 1e-4


class TestActivations:
    def test_fixed_points(self):
        assert gelu(Tensor([0.0])).data[0] == 0.0
        assert sigmoid(Tensor([0.0])).data[0] == 0.5
        assert relu(Tensor([-1.0])).data[0] == 0.0

    def test_gelu_at_three(self):
        got = float(gelu(Tensor([3.0], dtype=np.float64)).data[0])
        # straight-line evaluation of the tanh approximation
        want = 0.5 * 3 * (1 + np.tanh(np.sqrt(2 / np.pi) * (3 + 0.044715 * 27)))
        assert abs(got - want) < 1e-12
        assert abs(got - 2.9964) < 5e-4

    def test_gelu_monotone_on_nonnegative_grid(self):
        xs = np.linspace(0, 5, 101)
        ys = gelu(Tensor(xs)).data
        assert np.all(np.diff(ys) >= 0)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            pointwise_activation(Tensor([1.0]), "tanh")

    def test_dispatch(self):
        x = Tensor([-1.0, 2.0])
        np.testing.assert_array_equal(pointwise_activation(x, "relu").data,
                                      relu(x).data)


class TestBilinearResize:
    def test_identity_size(self):
        x = Tensor(np.random.default_rng(0).random((2, 4, 4)))
        out = bilinear_resize(x, 4, 4)
        np.testing.assert_array_equal(out.data, x.data)

    def test_2x2_to_3x3_center(self):
        x = Tensor(np.array([[[0.0, 1.0], [2.0, 3.0]]]))
        out = bilinear_resize(x, 3, 3, align_corners=True)
        assert out.data[0, 1, 1] == pytest.approx(1.5)
        np.testing.assert_allclose(out.data[0, 0], [0.0, 0.5, 1.0])

    def test_constant_preserved(self):
        x = Tensor(np.full((3, 5, 7), 0.37, dtype=np.float32))
        out = bilinear_resize(x, 11, 2)
        np.testing.assert_allclose(out.data, 0.37, rtol=1e-6)

    def test_gradient(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.standard_normal((2, 4, 5)))
        cast_all([x], np.float64)
        assert grad_check(lambda: bilinear_resize(x, 7, 3), [x]) < 1e-6


class TestAvgPool:
    def test_constant_interior(self):
        x = Tensor(np.full((1, 6, 6), 2.5, dtype=np.float32))
        out = avg_pool2d(x, 3, stride=1, padding=0)
        np.testing.assert_allclose(out.data, 2.5, rtol=1e-6)

    def test_1x1_identity(self):
        x = Tensor(np.random.default_rng(1).random((2, 3, 3)))
        out = avg_pool2d(x, 1)
        np.testing.assert_allclose(out.data, x.data, rtol=1e-6)

    def test_count_include_pad_corner(self):
        x = Tensor(np.ones((1, 2, 2), dtype=np.float32))
        out = avg_pool2d(x, 3, stride=1, padding=1)
        assert out.data[0, 0, 0] == pytest.approx(4.0 / 9.0)

    def test_gradient(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.standard_normal((2, 4, 4)))
        cast_all([x], np.float64)
        assert grad_check(lambda: avg_pool2d(x, 3, stride=1, padding=1), [x]) < 1e-6


class TestReduce:
    def test_mean_of_ones(self):
        out = reduce(Tensor(np.ones((2, 3, 3))), "mean", "all")
        assert out.data.reshape(()) == 1.0

    def test_max(self):
        out = reduce(Tensor(np.array([[[-1.0]], [[2.0]]])), "max", "all")
        assert out.data.reshape(()) == 2.0

    def test_channel_shapes(self):
        x = Tensor(np.random.default_rng(2).random((4, 3, 5)))
        assert reduce(x, "mean", "channel").shape == (1, 3, 5)
        assert reduce(x, "max", "channel").shape == (1, 3, 5)
        assert reduce(x, "sum", "spatial").shape == (4, 1, 1)

    def test_sum_gradient_is_broadcast(self):
        x = Tensor(np.random.default_rng(3).random((2, 2, 2)))
        x.requires_grad = True
        reduce(x, "sum", "all").backward()
        np.testing.assert_array_equal(x.grad, np.ones_like(x.data))

    def test_gradients(self):
        rng = np.random.default_rng(11)
        for op in ("mean", "sum", "max"):
            for axis in ("channel", "spatial", "all"):
                x = Tensor(rng.standard_normal((3, 4, 4)))
                cast_all([x], np.float64)
                assert grad_check(lambda: reduce(x, op, axis), [x]) < 1e-6


class TestSoftmaxOverBranch:
    def test_equal_logits(self):
        x = Tensor(np.zeros((4, 2, 2)))
        out = softmax_over_branch(x)
        np.testing.assert_allclose(out.data, 0.25)

    def test_saturated(self):
        x = Tensor(np.stack([np.full((2, 2), 10.0), np.full((2, 2), -10.0)]))
        out = softmax_over_branch(x).data
        np.testing.assert_allclose(out[0], 1.0, atol=1e-8)
        np.testing.assert_allclose(out[1], 0.0, atol=1e-8)

    def test_shift_invariance(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((3, 4, 4)).astype(np.float32)
        a = softmax_over_branch(Tensor(x)).data
        b = softmax_over_branch(Tensor(x + 7.3)).data
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_sums_to_one(self):
        rng = np.random.default_rng(5)
        out = softmax_over_branch(Tensor(rng.standard_normal((5, 3, 3)))).data
        assert np.all(out > 0) and np.all(out < 1)
        np.testing.assert_allclose(out.sum(axis=0), 1.0, atol=1e-6)

    def test_requires_two_branches(self):
        with pytest.raises(ShapeError):
            softmax_over_branch(Tensor(np.zeros((1, 2, 2))))

    def test_gradient(self):
        x = Tensor(np.random.default_rng(6).standard_normal((3, 2, 2)))
        cast_all([x], np.float64)

        def fn():
            out = softmax_over_branch(x)
            return out * out  # non-uniform upstream gradient

        assert grad_check(fn, [x]) < 1e-4


class TestGradCheckHarness:
    def test_composition_conv_gelu_conv(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.standard_normal((2, 4, 4)))
        w1 = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.4, trainable=True)
        w2 = Tensor(rng.standard_normal((2, 3, 3, 3)) * 0.4, trainable=True)
        s1 = ConvSpec(2, 3, (3, 3), padding=1)
        s2 = ConvSpec(3, 2, (3, 3), padding=1)
        cast_all([x, w1, w2], np.float64)
        err = grad_check(lambda: conv2d(gelu(conv2d(x, w1, None, s1)), w2, None, s2),
                         [x, w1, w2])
        assert err < 1e-4

    def test_frozen_tensor_gets_no_grad_buffer(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.standard_normal((2, 3)))
        w_frozen = Tensor(rng.standard_normal((3, 2)), trainable=False)
        out = linear(x, w_frozen, None)
        out.backward()
        assert w_frozen.grad is None
        assert x.grad is None

    def test_multi_seed_grad_check(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            x = Tensor(rng.standard_normal((3, 4)))
            w = Tensor(rng.standard_normal((4, 3)), trainable=True)
            cast_all([x, w], np.float64)
            assert grad_check(lambda: sigmoid(linear(x, w, None)), [x, w]) < 1e-4


class TestDeterminism:
    def test_forward_repeatable(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((1, 3, 8, 8)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        spec = ConvSpec(3, 4, (3, 3), padding=1)
        a = conv2d(Tensor(x), Tensor(w), None, spec).data
        b = conv2d(Tensor(x), Tensor(w), None, spec).data
        assert a.tobytes() == b.tobytes()
