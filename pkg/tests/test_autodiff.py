import numpy as np
import pytest

from iwsr import autodiff as ad
from iwsr.autodiff import (ComplexPair, ContractError, DimensionError, Tensor,
                           backward, conv3d, fft3, group_norm, ifft3, matmul,
                           nearest_upsample, reduce_mean, reduce_sum, relu,
                           reshape, sigmoid, silu, trilinear_sample)

from gradcheck import check_gradients, rand_tensor

SEEDS = [0, 1, 2, 3, 4]


def test_quadratic_backward():
    w = Tensor(np.array([1.0, 2.0, 3.0]))
    w.requires_grad = True
    loss = reduce_sum(w * w)
    backward(loss)
    np.testing.assert_allclose(w.grad, [2.0, 4.0, 6.0])


def test_unused_parameter_has_zero_grad():
    w = Tensor(np.array([1.0, 2.0]))
    w.requires_grad = True
    unused = Tensor(np.array([5.0]))
    unused.requires_grad = True
    backward(reduce_sum(w * w))
    assert unused.grad is None


def test_non_scalar_loss_rejected():
    w = Tensor(np.zeros(3))
    w.requires_grad = True
    with pytest.raises(ContractError):
        backward(w * w)


def test_backward_visits_each_node_once():
    rng = np.random.default_rng(0)
    x = rand_tensor(rng, (4,))
    y = x * x
    z = y + y  # diamond: y feeds twice into z
    loss = reduce_sum(z * y)
    backward(loss)
    for node in (y, z, loss):
        assert node.backward_visits == 1
    # Gradient through the diamond: d/dx sum(2y*y) = d/dx sum(2 x^4) = 8 x^3
    np.testing.assert_allclose(x.grad, 8 * x.data ** 3, rtol=1e-12)


def test_grad_accumulates_across_backward_calls():
    w = Tensor(np.array([2.0]))
    w.requires_grad = True
    backward(reduce_sum(w * w))
    backward(reduce_sum(w * w))
    np.testing.assert_allclose(w.grad, [8.0])
    w.zero_grad()
    backward(reduce_sum(w * w))
    np.testing.assert_allclose(w.grad, [4.0])


@pytest.mark.parametrize("seed", SEEDS)
def test_elementwise_gradients(seed):
    rng = np.random.default_rng(seed)
    a = rand_tensor(rng, (3, 4))
    b = rand_tensor(rng, (3, 4))
    c = rand_tensor(rng, (4,))  # broadcast operand
    check_gradients(lambda: reduce_sum(silu(a * b + c) + sigmoid(a) * 0.5), [a, b, c])


@pytest.mark.parametrize("seed", SEEDS)
def test_relu_gradient_away_from_kink(seed):
    rng = np.random.default_rng(seed)
    a = rand_tensor(rng, (20,))
    a.data[np.abs(a.data) < 1e-2] += 0.1
    check_gradients(lambda: reduce_sum(relu(a) * a), [a])


@pytest.mark.parametrize("seed", SEEDS)
def test_matmul_and_reduce_gradients(seed):
    rng = np.random.default_rng(seed)
    a = rand_tensor(rng, (5, 3))
    b = rand_tensor(rng, (3, 4))
    check_gradients(lambda: reduce_mean(matmul(a, b) * matmul(a, b)), [a, b])


@pytest.mark.parametrize("seed", SEEDS)
def test_concat_reshape_getitem_gradients(seed):
    rng = np.random.default_rng(seed)
    a = rand_tensor(rng, (2, 3))
    b = rand_tensor(rng, (2, 2))

    def f():
        cat = ad.concat([a, b], axis=1)
        sl = cat[:, 1:4]
        return reduce_sum(reshape(sl, (6,)) * reshape(sl, (6,)))

    check_gradients(f, [a, b])


@pytest.mark.parametrize("seed", SEEDS)
def test_group_norm_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rand_tensor(rng, (2, 4, 3, 3, 2))
    gamma = rand_tensor(rng, (4,))
    beta = rand_tensor(rng, (4,))
    check_gradients(lambda: reduce_sum(
        group_norm(x, 2, gamma, beta) * group_norm(x, 2, gamma, beta)),
        [x, gamma, beta], rtol=5e-6)


def test_group_norm_statistics():
    rng = np.random.default_rng(7)
    x = Tensor(rng.standard_normal((2, 8, 4, 4, 4)))
    g = ad.ones_init((8,), dtype=np.float64)
    b = ad.zeros_init((8,), dtype=np.float64)
    y = group_norm(x, 4, g, b).data.reshape(2, 4, -1)
    assert np.abs(y.mean(axis=2)).max() <= 1e-6
    assert np.abs(y.var(axis=2) - 1.0).max() <= 1e-4


# -- conv3d --------------------------------------------------------------------


def test_conv3d_identity_kernel():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((1, 3, 4, 5)))
    k = Tensor(np.ones((1, 1, 1, 1, 1)))
    out = conv3d(x, k, padding="same")
    np.testing.assert_allclose(out.data, x.data)


def test_conv3d_all_ones_interior_count():
    x = Tensor(np.ones((1, 4, 4, 4)))
    k = Tensor(np.ones((1, 1, 3, 3, 3)))
    out = conv3d(x, k, padding="same")
    assert out.data[0, 1, 1, 1] == 27.0
    assert out.data[0, 0, 0, 0] == 8.0  # corner sees a 2x2x2 window


def test_conv3d_same_padding_preserves_shape():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((2, 3, 5, 7)))
    k = Tensor(rng.standard_normal((4, 2, 3, 3, 3)) * 0.1)
    assert conv3d(x, k, padding="same").shape == (4, 3, 5, 7)


def test_conv3d_channel_mismatch_names_axis():
    x = Tensor(np.zeros((2, 4, 4, 4)))
    k = Tensor(np.zeros((1, 3, 3, 3, 3)))
    with pytest.raises(DimensionError, match="channel axis"):
        conv3d(x, k, padding="same")


@pytest.mark.parametrize("seed", SEEDS)
def test_conv3d_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rand_tensor(rng, (2, 4, 4, 4))
    k = rand_tensor(rng, (3, 2, 3, 3, 3), scale=0.3)

    def f():
        y = conv3d(x, k, padding="same")
        return reduce_sum(y * y)

    check_gradients(f, [x, k])


def test_conv3d_strided_gradients():
    rng = np.random.default_rng(11)
    x = rand_tensor(rng, (1, 2, 6, 6, 6))
    k = rand_tensor(rng, (2, 2, 3, 3, 3), scale=0.3)
    out = conv3d(x, k, stride=2, padding=1)
    assert out.shape == (1, 2, 3, 3, 3)
    check_gradients(lambda: reduce_sum(conv3d(x, k, stride=2, padding=1)), [x, k])


# -- FFT -----------------------------------------------------------------------


def test_fft3_dc_bin():
    v = 2.5
    x = Tensor(np.full((4, 4, 4), v))
    pair = fft3(x)
    assert pair.real.data[0, 0, 0] == pytest.approx(v * 8.0)  # v * sqrt(64)
    nz = np.abs(pair.real.data) + np.abs(pair.imag.data)
    nz[0, 0, 0] = 0.0
    assert np.abs(nz).max() <= 1e-12


def test_fft3_roundtrip_float32():
    rng = np.random.default_rng(3)
    x = Tensor(rng.standard_normal((16, 16, 4)).astype(np.float32))
    back = ifft3(fft3(x))
    assert np.abs(back.data - x.data).max() <= 1e-5


def test_fft3_parseval():
    rng = np.random.default_rng(4)
    x = Tensor(rng.standard_normal((5, 6, 7)))
    pair = fft3(x)
    space = float((x.data ** 2).sum())
    freq = float((pair.real.data ** 2 + pair.imag.data ** 2).sum())
    assert abs(space - freq) / space <= 1e-4


def test_fft3_linearity():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((4, 5, 6))
    y = rng.standard_normal((4, 5, 6))
    a, b = 1.7, -0.3
    lhs = fft3(Tensor(a * x + b * y))
    fx, fy = fft3(Tensor(x)), fft3(Tensor(y))
    np.testing.assert_allclose(lhs.real.data, a * fx.real.data + b * fy.real.data, atol=1e-10)
    np.testing.assert_allclose(lhs.imag.data, a * fx.imag.data + b * fy.imag.data, atol=1e-10)


def test_fft3_arbitrary_lengths():
    # Mixed-radix sizes, no power-of-two restriction.
    rng = np.random.default_rng(6)
    x = Tensor(rng.standard_normal((3, 5, 7)))
    back = ifft3(fft3(x))
    np.testing.assert_allclose(back.data, x.data, atol=1e-12)


@pytest.mark.parametrize("seed", SEEDS)
def test_fft_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rand_tensor(rng, (3, 4, 5))
    wr = rand_tensor(rng, (3, 4, 5))
    wi = rand_tensor(rng, (3, 4, 5))

    def f():
        pair = fft3(x)
        mixed = ComplexPair(pair.real * wr, pair.imag * wi)
        y = ifft3(mixed)
        return reduce_sum(y * y)

    check_gradients(f, [x, wr, wi])


# -- trilinear sampling ----------------------------------------------------------


def test_trilinear_sample_at_grid_nodes():
    rng = np.random.default_rng(8)
    grid = Tensor(rng.standard_normal((3, 4, 5, 6)))
    pts = []
    idx = []
    for t, z, x in [(0, 0, 0), (3, 4, 5), (1, 2, 3)]:
        pts.append([t / 3.0, z / 4.0, x / 5.0])
        idx.append((t, z, x))
    out = trilinear_sample(grid, np.array(pts))
    for row, (t, z, x) in zip(out.data, idx):
        np.testing.assert_allclose(row, grid.data[:, t, z, x], atol=1e-12)


def test_trilinear_sample_constant_grid():
    grid = Tensor(np.full((2, 3, 3, 3), 4.2))
    rng = np.random.default_rng(9)
    out = trilinear_sample(grid, rng.uniform(0, 1, size=(50, 3)))
    np.testing.assert_allclose(out.data, 4.2, atol=1e-12)


def test_trilinear_sample_clamps_and_counts():
    ad.reset_clamp_counter()
    grid = Tensor(np.zeros((1, 2, 2, 2)))
    trilinear_sample(grid, np.array([[1.5, 0.5, -0.2]]))
    assert ad.clamp_event_count() == 2


@pytest.mark.parametrize("seed", SEEDS)
def test_trilinear_sample_gradients(seed):
    rng = np.random.default_rng(seed)
    grid = rand_tensor(rng, (2, 3, 4, 5))
    pts = Tensor(rng.uniform(0.1, 0.9, size=(6, 3)))
    pts.requires_grad = True

    def f():
        out = trilinear_sample(grid, pts)
        return reduce_sum(out * out)

    check_gradients(f, [grid, pts], rtol=2e-6)


# -- upsample / pool --------------------------------------------------------------


def test_nearest_upsample_and_pool_roundtrip():
    rng = np.random.default_rng(10)
    x = Tensor(rng.standard_normal((2, 3, 4, 2, 2)))
    up = nearest_upsample(x, (2, 1, 2))
    assert up.shape == (2, 3, 8, 2, 4)
    down = ad.avg_pool(up, (2, 1, 2))
    np.testing.assert_allclose(down.data, x.data, atol=1e-12)


@pytest.mark.parametrize("seed", SEEDS)
def test_upsample_pool_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rand_tensor(rng, (1, 2, 2, 4, 4))
    check_gradients(lambda: reduce_sum(
        nearest_upsample(x, (2, 2, 2)) * 1.5) + reduce_sum(ad.avg_pool(x, (1, 2, 2))), [x])


@pytest.mark.parametrize("seed", SEEDS)
def test_two_layer_network_gradcheck(seed):
    # Whole-network gradient check on a toy two-layer model.
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((7, 3)))
    w1 = rand_tensor(rng, (3, 5))
    b1 = rand_tensor(rng, (5,))
    w2 = rand_tensor(rng, (5, 1))
    b2 = rand_tensor(rng, (1,))

    def f():
        h = silu(matmul(x, w1) + b1)
        y = matmul(h, w2) + b2
        return reduce_mean(y * y)

    check_gradients(f, [w1, b1, w2, b2])
