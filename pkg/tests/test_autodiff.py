import numpy as np
import pytest

from deepma import autodiff as ad
from deepma.autodiff import InvalidShapeError, Tensor

TOL = 1e-4


def rng(seed=0):
    return np.random.default_rng(seed)


def away_from_kink(a, margin=1e-2):
    a = np.asarray(a, dtype=np.float64)
    return np.where(np.abs(a) < margin, np.sign(a + 1e-12) * (margin + np.abs(a)), a)


# --- forward values ---------------------------------------------------------


def test_conv2d_center_of_ones_is_nine():
    out = ad.conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)), 1, 1)
    assert out.shape == (1, 1, 4, 4)
    assert out.data[0, 0, 1, 1] == 9.0
    assert out.data[0, 0, 0, 0] == 4.0


def test_conv2d_stride_two_halves():
    out = ad.conv2d(Tensor(np.zeros((1, 1, 8, 8))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)), 2, 1)
    assert out.shape == (1, 1, 4, 4)


def test_conv2d_matches_direct_loop():
    r = rng(3)
    x = r.standard_normal((2, 3, 5, 5))
    w = r.standard_normal((4, 3, 3, 3))
    b = r.standard_normal(4)
    out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), 2, 1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 4, 3, 3))
    for n in range(2):
        for o in range(4):
            for i in range(3):
                for j in range(3):
                    ref[n, o, i, j] = np.sum(xp[n, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3] * w[o]) + b[o]
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_conv2d_shape_errors_name_dimensions():
    with pytest.raises(InvalidShapeError, match="input channels 2"):
        ad.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))), Tensor(np.zeros(1)))
    with pytest.raises(InvalidShapeError, match="stride"):
        ad.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))), Tensor(np.zeros(1)), 3)
    with pytest.raises(InvalidShapeError, match="exceeds"):
        ad.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))), Tensor(np.zeros(1)))


def test_transposed_conv_shapes():
    x = Tensor(np.ones((1, 1, 4, 4)))
    up = ad.transposed_conv2d(x, Tensor(np.ones((1, 1, 4, 4))), Tensor(np.zeros(1)), 2, 1)
    assert up.shape == (1, 1, 8, 8)
    down = ad.conv2d(up, Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)), 2, 1)
    assert down.shape == x.shape
    same = ad.transposed_conv2d(x, Tensor(np.ones((1, 2, 3, 3))), Tensor(np.zeros(2)), 1, 1)
    assert same.shape == (1, 2, 4, 4)


def test_transposed_conv_is_adjoint_of_conv():
    r = rng(4)
    x = r.standard_normal((2, 3, 8, 8))
    y = r.standard_normal((2, 5, 4, 4))
    w = r.standard_normal((5, 3, 3, 3))
    zero5, zero3 = Tensor(np.zeros(5)), Tensor(np.zeros(3))
    cx = ad.conv2d(Tensor(x), Tensor(w), zero5, 2, 1).data
    # conv kernel [Cout, Cin] doubles as transposed kernel [Cin_t, Cout_t]
    ty = ad.transposed_conv2d(Tensor(y), Tensor(w), zero3, 2, 1, output_padding=1).data
    assert np.isclose(np.sum(cx * y), np.sum(x * ty), rtol=1e-12)


def test_gdn_identity_and_sign_limit():
    x = rng().standard_normal((2, 3, 4, 4))
    out = ad.gdn(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros((3, 3))))
    np.testing.assert_array_equal(out.data, x)
    s = ad.gdn(Tensor(np.full((1, 1, 1, 1), 3.0)), Tensor(np.array([1e-12])), Tensor(np.ones((1, 1))))
    assert s.data.item() == pytest.approx(1.0, abs=1e-9)


def test_igdn_identity_and_square_limit():
    x = rng().standard_normal((2, 3, 4, 4))
    out = ad.igdn(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros((3, 3))))
    np.testing.assert_array_equal(out.data, x)
    s = ad.igdn(Tensor(np.full((1, 1, 1, 1), 2.0)), Tensor(np.array([1e-12])), Tensor(np.ones((1, 1))))
    assert s.data.item() == pytest.approx(4.0, abs=1e-9)


def test_dense_values():
    x = Tensor(np.array([[1.0, 2.0]]))
    np.testing.assert_array_equal(ad.dense(x, Tensor(np.eye(2)), Tensor(np.zeros(2))).data, [[1.0, 2.0]])
    np.testing.assert_array_equal(ad.dense(x, Tensor(np.eye(2)), Tensor(np.ones(2))).data, [[2.0, 3.0]])
    with pytest.raises(InvalidShapeError):
        ad.dense(x, Tensor(np.eye(3)), Tensor(np.zeros(3)))


def test_pointwise_values():
    assert ad.relu(Tensor(np.array([-1.0]))).data[0] == 0.0
    assert ad.sigmoid(Tensor(np.array([0.0]))).data[0] == 0.5
    out = ad.prelu(Tensor(np.array([[-2.0, 3.0]])), Tensor(np.array([0.5, 0.5])))
    np.testing.assert_array_equal(out.data, [[-1.0, 3.0]])
    assert ad.pointwise(Tensor(np.array([-1.0])), "relu").data[0] == 0.0


def test_channel_mean_values():
    x = np.zeros((1, 2, 3, 3))
    x[0, 0] = 7.0
    np.testing.assert_array_equal(ad.channel_mean(Tensor(x)).data, [[7.0, 0.0]])


def test_channel_mean_gradient_is_uniform():
    x = Tensor(rng().standard_normal((2, 3, 4, 5)), requires_grad=True)
    (g,) = ad.grad(ad.mse(ad.channel_mean(x), Tensor(np.zeros((2, 3)))), [x])
    cm = x.data.mean(axis=(2, 3))
    expect = np.broadcast_to((2 * cm / 6 / 20)[:, :, None, None], x.shape)
    np.testing.assert_allclose(g, expect, rtol=1e-12)


def test_mse_values_and_gradient():
    a = Tensor(np.full((3, 5), 2.0), requires_grad=True)
    b = Tensor(np.zeros((3, 5)))
    assert ad.mse(a, a).data == 0.0
    loss = ad.mse(a, b)
    assert loss.data == 4.0
    (g,) = ad.grad(loss, [a])
    np.testing.assert_allclose(g, 2 * 2.0 / 15)


# --- gradient checks ----------------------------------------------------------


def _points(seed, *shapes, kink=False):
    r = rng(seed)
    out = [r.standard_normal(s) for s in shapes]
    return [away_from_kink(a) for a in out] if kink else out


GRAD_CASES = {
    "conv2d_s1": (lambda x, k, b: ad.conv2d(x, k, b, 1, 1), [(2, 3, 5, 5), (4, 3, 3, 3), (4,)]),
    "conv2d_s2": (lambda x, k, b: ad.conv2d(x, k, b, 2, 1), [(2, 3, 6, 6), (4, 3, 3, 3), (4,)]),
    "tconv_s2": (lambda x, k, b: ad.transposed_conv2d(x, k, b, 2, 1), [(2, 3, 3, 3), (3, 2, 4, 4), (2,)]),
    "tconv_s1": (lambda x, k, b: ad.transposed_conv2d(x, k, b, 1, 1), [(2, 3, 4, 4), (3, 2, 3, 3), (2,)]),
    "dense": (ad.dense, [(4, 5), (5, 3), (3,)]),
    "sigmoid": (ad.sigmoid, [(3, 4)]),
    "channel_mean": (ad.channel_mean, [(2, 3, 4, 4)]),
    "scale_channels": (ad.scale_channels, [(2, 3, 4, 4), (2, 3)]),
    "mse": (ad.mse, [(3, 4), (3, 4)]),
    "concat": (lambda a, b: ad.concat([a, b], axis=1), [(2, 3), (2, 4)]),
    "complex_scale": (lambda x: ad.complex_scale(x, np.array([0.3 - 0.4j, 2 + 1j])), [(2, 6)]),
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
@pytest.mark.parametrize("seed", range(3))
def test_gradcheck_smooth_ops(name, seed):
    fn, shapes = GRAD_CASES[name]
    res = ad.gradcheck(fn, _points(seed, *shapes), eps=1e-3)
    assert res.max_rel_err < TOL, res.per_input


@pytest.mark.parametrize("seed", range(3))
def test_gradcheck_relu_prelu_away_from_kinks(seed):
    (x,) = _points(seed, (3, 4), kink=True)
    assert ad.gradcheck(ad.relu, [x]).max_rel_err < TOL
    alpha = rng(seed + 10).uniform(0.1, 0.5, 4)
    assert ad.gradcheck(ad.prelu, [x, alpha]).max_rel_err < TOL


@pytest.mark.parametrize("op", [ad.gdn, ad.igdn])
@pytest.mark.parametrize("seed", range(3))
def test_gradcheck_gdn_family(op, seed):
    r = rng(seed)
    x = r.standard_normal((2, 3, 3, 3))
    beta = r.uniform(0.5, 1.5, 3)
    gamma = r.uniform(0.0, 0.3, (3, 3))
    assert ad.gradcheck(op, [x, beta, gamma]).max_rel_err < TOL


# --- backward -----------------------------------------------------------------


def test_backward_dense_mse_matches_finite_differences():
    r = rng(7)
    x, w, b, y = r.standard_normal((4, 3)), r.standard_normal((3, 2)), r.standard_normal(2), r.standard_normal((4, 2))
    res = ad.gradcheck(lambda w, b: ad.mse(ad.dense(Tensor(x), w, b), Tensor(y)), [w, b])
    assert res.max_rel_err < TOL


def test_backward_is_linear_in_losses():
    r = rng(8)
    w = Tensor(r.standard_normal((3, 2)), requires_grad=True)
    b = Tensor(np.zeros(2), requires_grad=True)
    x1, x2 = Tensor(r.standard_normal((4, 3))), Tensor(r.standard_normal((4, 3)))
    t = Tensor(r.standard_normal((4, 2)))

    def l1():
        return ad.mse(ad.dense(x1, w, b), t)

    def l2():
        return ad.mse(ad.sigmoid(ad.dense(x2, w, b)), t)

    g1 = ad.grad(l1(), [w, b])
    g2 = ad.grad(l2(), [w, b])
    gc = ad.grad(ad.add(ad.scale(l1(), 2.5), ad.scale(l2(), -0.5)), [w, b])
    for a, p, q in zip(gc, g1, g2):
        np.testing.assert_allclose(a, 2.5 * p - 0.5 * q, rtol=1e-12, atol=1e-15)


def test_unreachable_parameter_gets_zero_gradient():
    w = Tensor(np.ones((2, 2)), requires_grad=True)
    unused = Tensor(np.ones(3), requires_grad=True)
    loss = ad.mse(ad.dense(Tensor(np.ones((1, 2))), w, Tensor(np.zeros(2))), Tensor(np.zeros((1, 2))))
    g = ad.grad(loss, [w, unused])
    np.testing.assert_array_equal(g[1], np.zeros(3))


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(ad.sigmoid(x))


def test_shared_subgraph_accumulates():
    x = Tensor(np.array([[0.3, -0.7]]), requires_grad=True)
    s = ad.sigmoid(x)
    loss = ad.mse(ad.add(s, s), Tensor(np.zeros((1, 2))))
    (g,) = ad.grad(loss, [x])
    sd = s.data
    np.testing.assert_allclose(g, 2 * (2 * sd) / 2 * 2 * sd * (1 - sd), rtol=1e-12)


def test_backward_leaves_activations_untouched():
    r = rng(9)
    x = Tensor(r.standard_normal((2, 3, 4, 4)))
    k = Tensor(r.standard_normal((2, 3, 3, 3)), requires_grad=True)
    b = Tensor(np.zeros(2), requires_grad=True)
    out = ad.conv2d(x, k, b, 1, 1)
    before = out.data.copy()
    ad.grad(ad.mse(out, Tensor(np.zeros(out.shape))), [k, b])
    np.testing.assert_array_equal(out.data, before)
    np.testing.assert_array_equal(ad.conv2d(x, k, b, 1, 1).data, before)


def test_forward_is_bit_deterministic():
    r = rng(10)
    x, k, b = r.standard_normal((2, 3, 6, 6)), r.standard_normal((4, 3, 3, 3)), r.standard_normal(4)
    a1 = ad.gdn(ad.conv2d(Tensor(x), Tensor(k), Tensor(b), 2, 1), Tensor(np.ones(4)), Tensor(np.eye(4)))
    a2 = ad.gdn(ad.conv2d(Tensor(x), Tensor(k), Tensor(b), 2, 1), Tensor(np.ones(4)), Tensor(np.eye(4)))
    assert a1.data.tobytes() == a2.data.tobytes()


# --- optimiser ----------------------------------------------------------------


def test_adam_zero_gradient_and_zero_lr_leave_params():
    p = ad.parameter(np.array([1.0, -2.0]), np.float64)
    st = ad.AdamState.zeros_like([p])
    ad.adam_step([p], [np.zeros(2)], st, 0.1)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    ad.adam_step([p], [np.ones(2)], st, 0.0)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_three_steps_constant_gradient():
    # with g = 1 every bias-corrected moment is exactly 1, so each step is lr / (1 + eps)
    p = ad.parameter(np.array([1.0]), np.float64)
    st = ad.AdamState.zeros_like([p])
    for _ in range(3):
        ad.adam_step([p], [np.ones(1)], st, 0.1)
    assert p.data[0] == pytest.approx(1.0 - 3 * 0.1 / (1 + 1e-8), abs=1e-15)
    assert st.t == 3


def test_gradcheck_handles_strided_views_and_leaves_inputs_alone():
    z = np.random.default_rng(0).standard_normal((3, 8))
    keep = z.copy()
    res = ad.gradcheck(lambda x: ad.complex_scale(x, 0.3 - 0.4j), [z[:, :6]])
    assert res.max_rel_err < 1e-8
    assert np.array_equal(z, keep)
    with pytest.raises(ValueError, match="contiguous"):
        ad.numeric_grad(lambda: Tensor(0.0), z[:, :6])
