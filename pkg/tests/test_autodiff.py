import numpy as np
import pytest

from ssdgl import autodiff as ad
from ssdgl.autodiff import GradTape, ShapeError, TapeError, Tensor, backward, grad_check, grad_check_many


def rand(rng, *shape):
    return Tensor(rng.standard_normal(shape))


def conv_oracle(x, k, b, stride, pad):
    """Direct nested-loop cross-correlation."""
    c, h, w = x.shape
    co, ci, kk, _ = k.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kk) // stride + 1
    wo = (w + 2 * pad - kk) // stride + 1
    out = np.zeros((co, ho, wo))
    for o in range(co):
        for i in range(ho):
            for j in range(wo):
                acc = b[o]
                for ch in range(ci):
                    for u in range(kk):
                        for v in range(kk):
                            acc += k[o, ch, u, v] * xp[ch, i * stride + u, j * stride + v]
                out[o, i, j] = acc
    return out


# -- conv2d -------------------------------------------------------------------


def test_conv_identity_kernel():
    x = Tensor(np.random.default_rng(0).standard_normal((3, 5, 4)))
    k = Tensor(np.eye(3).reshape(3, 3, 1, 1))
    y = ad.conv2d(x, k, Tensor(np.zeros(3)))
    np.testing.assert_array_equal(y.data, x.data)


def test_conv_sum_of_ones():
    y = ad.conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)))
    assert y.shape == (1, 1, 1)
    assert y.data[0, 0, 0] == 9


@pytest.mark.parametrize("stride,pad,k,size", [(2, 1, 3, 4), (1, 0, 3, 5), (1, 2, 5, 6), (2, 0, 1, 7), (3, 1, 3, 8)])
def test_conv_matches_loop_oracle(stride, pad, k, size):
    rng = np.random.default_rng(stride * 10 + pad)
    x = rng.standard_normal((2, size, size))
    kern = rng.standard_normal((3, 2, k, k))
    b = rng.standard_normal(3)
    y = ad.conv2d(Tensor(x), Tensor(kern), Tensor(b), stride=stride, padding=pad)
    np.testing.assert_allclose(y.data, conv_oracle(x, kern, b, stride, pad), atol=1e-12)


def test_conv_stride2_output_size():
    y = ad.conv2d(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))), None, stride=2, padding=1)
    assert y.shape == (1, 2, 2)


def test_conv_channel_mismatch_rejected():
    with pytest.raises(ShapeError, match="channels"):
        ad.conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))), None)


def test_conv_kernel_too_large_rejected():
    with pytest.raises(ShapeError):
        ad.conv2d(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))), None)


def test_conv_linear_in_input():
    rng = np.random.default_rng(3)
    k = rand(rng, 4, 3, 3, 3)
    x, y = rng.standard_normal((2, 3, 7, 7))
    a, b = 1.7, -0.3
    conv = lambda v: ad.conv2d(Tensor(v), k, None, padding=1).data
    np.testing.assert_allclose(conv(a * x + b * y), a * conv(x) + b * conv(y), atol=1e-10)


# -- pooling -------------------------------------------------------------------


@pytest.mark.parametrize("mode", ["avg", "max"])
def test_pool_global_constant(mode):
    out = ad.pool_global(Tensor(np.full((3, 4, 5), 2.5)), mode)
    np.testing.assert_array_equal(out.data, [2.5, 2.5, 2.5])


def test_pool_global_values():
    x = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    assert ad.pool_global(x, "avg").data[0] == 2.5
    assert ad.pool_global(x, "max").data[0] == 4.0


def test_pool_global_single_pixel():
    x = Tensor(np.array([[[7.0]], [[-1.0]]]))
    np.testing.assert_array_equal(ad.pool_global(x, "avg").data, ad.pool_global(x, "max").data)


def test_pool_global_empty_rejected():
    with pytest.raises(ShapeError):
        ad.pool_global(Tensor(np.zeros((2, 0, 3))), "avg")


def test_pool_channel_single_channel_identity():
    x = Tensor(np.random.default_rng(1).standard_normal((1, 3, 3)))
    for mode in ("avg", "max"):
        np.testing.assert_array_equal(ad.pool_channel(x, mode).data, x.data)


def test_pool_channel_values():
    x = Tensor(np.array([[[-1.0]], [[3.0]]]))
    assert ad.pool_channel(x, "avg").data.item() == 1.0
    assert ad.pool_channel(x, "max").data.item() == 3.0


def test_pool_channel_constant():
    x = Tensor(np.full((4, 2, 3), -0.5))
    for mode in ("avg", "max"):
        out = ad.pool_channel(x, mode)
        assert out.shape == (1, 2, 3)
        assert np.all(out.data == -0.5)


# -- pointwise -------------------------------------------------------------------


def test_pointwise_fixed_points():
    z = Tensor(np.array([0.0]))
    assert ad.sigmoid(z).data[0] == 0.5
    assert ad.tanh(z).data[0] == 0.0
    assert ad.relu(Tensor(np.array([-2.0]))).data[0] == 0.0


def test_sigmoid_range():
    x = Tensor(np.linspace(-30, 30, 61))
    y = ad.sigmoid(x).data
    assert np.all(y > 0) and np.all(y < 1)
    assert np.all(np.isfinite(ad.sigmoid(Tensor(np.array([-1e4, 1e4]))).data))


def test_concat_shape():
    out = ad.elementwise("concat", Tensor(np.zeros((2, 3, 4))), Tensor(np.ones((1, 3, 4))))
    assert out.shape == (3, 3, 4)


def test_broadcast_mismatch_rejected():
    with pytest.raises(ShapeError):
        ad.add(Tensor(np.zeros((2, 3, 3))), Tensor(np.zeros((3, 3, 3))))


def test_broadcast_channel_axis_ok():
    out = ad.mul(Tensor(np.ones((4, 2, 2))), Tensor(np.arange(4.0).reshape(4, 1, 1)))
    assert out.data[3, 1, 1] == 3.0


# -- linear ------------------------------------------------------------------------


def test_linear_cases():
    x = Tensor(np.array([1.0, 1.0]))
    np.testing.assert_array_equal(ad.linear(x, Tensor(np.eye(2)), Tensor(np.zeros(2))).data, [1, 1])
    np.testing.assert_array_equal(
        ad.linear(x, Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])), Tensor(np.zeros(2))).data, [3, 7]
    )
    np.testing.assert_array_equal(ad.linear(x, Tensor(np.zeros((2, 2))), Tensor(np.array([5.0, -1.0]))).data, [5, -1])


def test_linear_mismatch_rejected():
    with pytest.raises(ShapeError):
        ad.linear(Tensor(np.zeros(3)), Tensor(np.zeros((2, 2))), Tensor(np.zeros(2)))


# -- group norm ------------------------------------------------------------------------


def test_group_norm_constant_input_zero():
    c = 8
    out = ad.group_norm(Tensor(np.full((c, 3, 3), 4.0)), 4, Tensor(np.ones(c)), Tensor(np.zeros(c)))
    np.testing.assert_array_equal(out.data, 0.0)


def test_group_norm_statistics():
    rng = np.random.default_rng(5)
    c = 12
    x = Tensor(3.0 + 2.0 * rng.standard_normal((c, 6, 5)))
    out = ad.group_norm(x, 4, Tensor(np.ones(c)), Tensor(np.zeros(c))).data.reshape(4, -1)
    assert np.abs(out.mean(axis=1)).max() <= 1e-6
    assert np.abs(out.var(axis=1) - 1).max() <= 1e-4


def test_group_norm_per_channel_matches_instance_norm():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((4, 5, 5))
    out = ad.group_norm(Tensor(x), 4, Tensor(np.ones(4)), Tensor(np.zeros(4))).data
    mu = x.mean(axis=(1, 2), keepdims=True)
    var = x.var(axis=(1, 2), keepdims=True)
    np.testing.assert_allclose(out, (x - mu) / np.sqrt(var + 1e-5), atol=1e-12)


def test_group_norm_indivisible_rejected():
    with pytest.raises(ValueError, match="divisible"):
        ad.group_norm(Tensor(np.zeros((6, 2, 2))), 4, Tensor(np.ones(6)), Tensor(np.zeros(6)))


# -- tape & backward ----------------------------------------------------------------------


def test_backward_sum_is_ones():
    x = Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
    with GradTape() as tape:
        loss = ad.sum_all(x)
    g = backward(loss, tape)[x]
    np.testing.assert_array_equal(g.data, np.ones((3, 4)))


def test_backward_square_is_2x():
    x = Tensor(np.random.default_rng(1).standard_normal(5), requires_grad=True)
    with GradTape() as tape:
        loss = ad.sum_all(ad.mul(x, x))
    np.testing.assert_allclose(backward(loss, tape)[x].data, 2 * x.data)


def test_backward_twice_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with GradTape() as tape:
        loss = ad.sum_all(x)
    backward(loss, tape)
    with pytest.raises(TapeError):
        backward(loss, tape)
    with pytest.raises(TapeError):
        with tape:
            pass


def test_backward_non_scalar_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with GradTape() as tape:
        y = ad.scale(x, 2.0)
    with pytest.raises(ShapeError):
        backward(y, tape)


def test_backward_gradient_shapes_match_params():
    rng = np.random.default_rng(2)
    k = Tensor(rng.standard_normal((2, 3, 3, 3)), requires_grad=True)
    b = Tensor(np.zeros(2), requires_grad=True)
    unused = Tensor(np.ones((7,)), requires_grad=True)
    with GradTape() as tape:
        loss = ad.sum_all(ad.conv2d(rand(rng, 3, 5, 5), k, b, padding=1))
    grads = backward(loss, tape, wrt=[k, b, unused])
    for t in (k, b, unused):
        assert grads[t].shape == t.shape
    assert not grads[unused].data.any()


def test_composite_conv_sigmoid_sum_fd():
    rng = np.random.default_rng(4)
    x = rand(rng, 2, 6, 6)
    b = Tensor(rng.standard_normal(3))
    err = grad_check(lambda k: ad.sum_all(ad.sigmoid(ad.conv2d(x, k, b, padding=1))),
                     rand(rng, 3, 2, 3, 3), step=1e-5)
    assert err <= 1e-4


def test_grad_check_sum_exact():
    x = rand(np.random.default_rng(0), 4, 3)
    assert grad_check(ad.sum_all, x) <= 1e-10


def test_grad_check_sigmoid_sum():
    x = rand(np.random.default_rng(1), 10)
    assert grad_check(lambda t: ad.sum_all(ad.sigmoid(t)), x) <= 1e-6


def test_grad_check_reports_non_finite():
    x = Tensor(np.array([1.0, 2.0]))

    def bad(t):
        return ad.sum_all(ad.scale(t, np.inf))

    with pytest.raises(ad.NonFiniteError):
        grad_check(bad, x)


def test_forward_bitwise_deterministic():
    rng = np.random.default_rng(9)
    x = Tensor(rng.standard_normal((3, 8, 8)).astype(np.float32))
    k = Tensor(rng.standard_normal((4, 3, 3, 3)).astype(np.float32))
    b = Tensor(np.zeros(4, dtype=np.float32))
    g = Tensor(np.ones(4, dtype=np.float32))

    def run():
        y = ad.group_norm(ad.conv2d(x, k, b, padding=1), 2, g, b)
        return ad.pool_global(ad.sigmoid(y), "avg").data.tobytes()

    assert run() == run()
