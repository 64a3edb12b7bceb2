"""Reverse-mode engine: tape mechanics, op semantics, derivative checks."""

import numpy as np
import pytest

import mfcmnet.autograd as ag
from mfcmnet.autograd import Tape, Tensor


def t64(arr, requires_grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=requires_grad)


# ---------------------------------------------------------------- tape


def test_tensor_dtype_promotion():
    assert Tensor(np.zeros(3, dtype=np.float32)).dtype == np.float32
    assert Tensor(np.zeros(3, dtype=np.float64)).dtype == np.float64
    # everything else lands in float64
    assert Tensor(np.zeros(3, dtype=np.int64)).dtype == np.float64
    assert Tensor([1, 2, 3]).dtype == np.float64
    assert Tensor(np.zeros(3), dtype=np.float32).dtype == np.float32


def test_backward_accumulates_into_leaves():
    x = t64([1.0, 2.0])
    y = t64([3.0, 4.0])
    with Tape() as tape:
        z = ag.add(ag.mul(x, y), x)  # z = x*y + x
        loss = ag.sum_all(z)
    tape.backward(loss)
    assert np.allclose(x.grad, [4.0, 5.0])  # y + 1
    assert np.allclose(y.grad, [1.0, 2.0])  # x


def test_grad_accumulates_across_backward_calls():
    x = t64([2.0])
    for _ in range(2):
        with Tape() as tape:
            loss = ag.sum_all(ag.mul(x, x))
        tape.backward(loss)
    assert np.allclose(x.grad, [8.0])  # 2 passes of dx = 2x = 4


def test_no_tape_records_nothing():
    x = t64([1.0])
    y = ag.mul(x, x)
    assert ag.active_tape() is None
    assert y.grad is None and x.grad is None


def test_backward_requires_scalar_loss():
    x = t64([1.0, 2.0])
    with Tape() as tape:
        z = ag.mul(x, x)
    with pytest.raises(ValueError):
        tape.backward(z)


def test_requires_grad_false_gets_no_grad():
    x = t64([1.0, 2.0])
    c = t64([5.0, 5.0], requires_grad=False)
    with Tape() as tape:
        loss = ag.sum_all(ag.mul(x, c))
    tape.backward(loss)
    assert np.allclose(x.grad, [5.0, 5.0])
    assert c.grad is None


def test_nested_tapes_are_independent():
    x = t64([3.0])
    with Tape() as outer:
        a = ag.mul(x, x)
        with Tape() as inner:
            b = ag.mul(x, x)
            inner_loss = ag.sum_all(b)
        inner.backward(inner_loss)
        inner_grad = x.grad.copy()
        x.grad = None
        outer_loss = ag.sum_all(a)
    outer.backward(outer_loss)
    assert np.allclose(inner_grad, [6.0])
    assert np.allclose(x.grad, [6.0])


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_numerical_fault_on_nonfinite_forward():
    x = t64([1e308])
    with pytest.raises(ag.NumericalFault):
        with Tape():
            ag.mul(x, x)  # overflows to inf


def test_constant_helper():
    c = ag.constant([1.0, 2.0])
    assert c.dtype == np.float64
    assert not c.requires_grad
    c32 = ag.constant([1.0], dtype=np.float32)
    assert c32.dtype == np.float32


# ---------------------------------------------------------------- op forward semantics


def test_add_mul_broadcast_forward_and_grad():
    x = t64(np.ones((2, 3)))
    b = t64([10.0, 20.0, 30.0])
    with Tape() as tape:
        s = ag.add(x, b)
        loss = ag.sum_all(s)
    assert np.allclose(s.data, [[11, 21, 31], [11, 21, 31]])
    tape.backward(loss)
    assert x.grad.shape == (2, 3)
    assert np.allclose(b.grad, [2.0, 2.0, 2.0])  # summed over broadcast axis


def test_reshape_concat_slice_gather_forward():
    x = np.arange(12.0).reshape(3, 4)
    r = ag.reshape(Tensor(x), (4, 3))
    assert np.array_equal(r.data, x.reshape(4, 3))
    c = ag.concat([Tensor(x), Tensor(x + 100.0)], axis=1)
    assert c.data.shape == (3, 8)
    s = ag.slice_axis(Tensor(x), axis=0, start=1, stop=3)
    assert np.array_equal(s.data, x[1:3])
    idx = np.array([3, 0])
    g = ag.gather_last(Tensor(x), idx)
    assert np.array_equal(g.data, x[:, idx])


def test_relu6_clamps_both_ends():
    x = Tensor(np.array([-2.0, 0.0, 3.0, 6.0, 9.0]))
    y = ag.relu6(x)
    assert np.array_equal(y.data, [0.0, 0.0, 3.0, 6.0, 6.0])


def test_sigmoid_range_and_symmetry():
    x = Tensor(np.array([-800.0, -1.0, 0.0, 1.0, 800.0]))
    y = ag.sigmoid(x).data
    assert y[0] == 0.0 and y[-1] == 1.0  # saturates without overflow
    assert y[2] == 0.5
    assert y[1] + y[3] == pytest.approx(1.0)


def test_global_avg_pool_matches_numpy():
    x = np.random.default_rng(0).normal(size=(2, 3, 4, 5))
    out = ag.global_avg_pool(Tensor(x))
    assert out.data.shape == (2, 3)
    assert np.allclose(out.data, x.mean(axis=(2, 3)))


def test_broadcast_spatial_matches_numpy():
    x = np.random.default_rng(1).normal(size=(2, 3, 1, 1))
    out = ag.broadcast_spatial(Tensor(x), 4, 5)
    assert out.data.shape == (2, 3, 4, 5)
    assert np.allclose(out.data, np.broadcast_to(x, (2, 3, 4, 5)))


def test_dense_shape_mismatch():
    x = Tensor(np.ones((2, 5)))
    w = Tensor(np.ones((4, 3)))
    b = Tensor(np.zeros(3))
    with pytest.raises(ag.ShapeMismatch):
        ag.dense(x, w, b)


def test_bce_with_logits_matches_formula():
    rng = np.random.default_rng(2)
    z = rng.normal(size=(6, 1)) * 3
    y = rng.integers(0, 2, size=(6, 1)).astype(np.float64)
    loss = ag.bce_with_logits(Tensor(z), Tensor(y, requires_grad=False))
    expect = np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z))))
    assert loss.data.shape == ()
    assert float(loss.data) == pytest.approx(expect, rel=1e-12)


def test_bce_with_logits_extreme_logits_finite():
    z = Tensor(np.array([[500.0], [-500.0]]))
    y = Tensor(np.array([[0.0], [1.0]]), requires_grad=False)
    loss = ag.bce_with_logits(z, y)
    assert np.isfinite(loss.data)
    assert float(loss.data) == pytest.approx(500.0)


# ---------------------------------------------------------------- batchnorm


def test_batchnorm_train_normalizes_batch():
    rng = np.random.default_rng(3)
    x = rng.normal(loc=5.0, scale=3.0, size=(4, 2, 6, 6))
    gamma = Tensor(np.ones(2))
    beta = Tensor(np.zeros(2))
    state = ag.BatchNormState(2, dtype=np.float64)
    out = ag.batchnorm2d(Tensor(x), gamma, beta, state, mode="train")
    got = out.data
    assert np.abs(got.mean(axis=(0, 2, 3))).max() < 1e-10
    # output variance is v / (v + eps), slightly under 1
    bv = x.var(axis=(0, 2, 3))
    assert np.abs(got.var(axis=(0, 2, 3)) - bv / (bv + 1e-5)).max() < 1e-9


def test_batchnorm_running_stats_fold():
    x = np.random.default_rng(4).normal(size=(3, 2, 4, 4))
    state = ag.BatchNormState(2, dtype=np.float64)
    r_mean0 = state.running_mean.copy()
    r_var0 = state.running_var.copy()
    gamma, beta = Tensor(np.ones(2)), Tensor(np.zeros(2))
    ag.batchnorm2d(Tensor(x), gamma, beta, state, mode="train")
    bm = x.mean(axis=(0, 2, 3))
    bv = x.var(axis=(0, 2, 3))  # biased
    assert np.allclose(state.running_mean, 0.9 * r_mean0 + 0.1 * bm)
    assert np.allclose(state.running_var, 0.9 * r_var0 + 0.1 * bv)


def test_batchnorm_update_running_flag():
    x = np.random.default_rng(5).normal(size=(3, 2, 4, 4))
    state = ag.BatchNormState(2, dtype=np.float64)
    before = (state.running_mean.copy(), state.running_var.copy())
    ag.batchnorm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), state,
                   mode="train", update_running=False)
    assert np.array_equal(state.running_mean, before[0])
    assert np.array_equal(state.running_var, before[1])


def test_batchnorm_eval_uses_running_stats():
    state = ag.BatchNormState(1, dtype=np.float64)
    state.running_mean[:] = 2.0
    state.running_var[:] = 4.0
    x = np.full((1, 1, 2, 2), 6.0)
    out = ag.batchnorm2d(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)), state, mode="eval")
    # (6 - 2) / sqrt(4 + eps)
    assert np.allclose(out.data, 4.0 / np.sqrt(4.0 + 1e-5))


# ---------------------------------------------------------------- conv


def test_conv2d_floor_output_sizing():
    spec = ag.ConvSpec(in_channels=1, out_channels=1, kernel_h=3, kernel_w=3, stride=2, padding=1, groups=1)
    x = Tensor(np.zeros((1, 1, 9, 10)))
    w = Tensor(np.zeros((1, 1, 3, 3)))
    out = ag.conv2d(x, w, None, spec)
    assert out.data.shape == (1, 1, (9 + 2 - 3) // 2 + 1, (10 + 2 - 3) // 2 + 1)


def test_conv2d_known_values():
    # 2x2 mean filter over a 3x3 ramp, stride 1, no padding
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    w = np.full((1, 1, 2, 2), 0.25)
    spec = ag.ConvSpec(1, 1, 2, 2, stride=1, padding=0, groups=1)
    out = ag.conv2d(Tensor(x), Tensor(w), None, spec)
    assert np.allclose(out.data[0, 0], [[2.0, 3.0], [5.0, 6.0]])


def test_conv2d_bias_and_channel_checks():
    spec = ag.ConvSpec(2, 3, 1, 1, stride=1, padding=0, groups=1)
    x = Tensor(np.zeros((1, 2, 4, 4)))
    w = Tensor(np.zeros((3, 2, 1, 1)))
    b = Tensor(np.array([1.0, 2.0, 3.0]))
    out = ag.conv2d(x, w, b, spec)
    assert np.allclose(out.data[0, :, 0, 0], [1.0, 2.0, 3.0])
    with pytest.raises(ag.ShapeMismatch):
        ag.conv2d(Tensor(np.zeros((1, 5, 4, 4))), w, b, spec)


def test_depthwise_conv_is_group_per_channel():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 3, 6, 6))
    w = rng.normal(size=(3, 1, 3, 3))
    spec = ag.ConvSpec(3, 3, 3, 3, stride=1, padding=1, groups=3)
    assert spec.is_depthwise
    got = ag.depthwise_conv2d(Tensor(x), Tensor(w), None, spec).data
    ref = ag.conv2d(Tensor(x), Tensor(w), None, spec).data
    assert np.array_equal(got, ref)


# ---------------------------------------------------------------- derivatives


# projecting the output against a fixed random matrix avoids losses whose
# true gradient is exactly zero almost everywhere (e.g. sum of an inverse
# transform), where finite differences would only measure rounding noise
OPS = [
    ("add", lambda p: ag.add(p[0], p[1]), [(3, 4), (3, 4)]),
    ("mul_broadcast", lambda p: ag.mul(p[0], p[1]), [(2, 3, 4), (4,)]),
    ("relu6", lambda p: ag.relu6(p[0]), [(5, 5)]),
    ("sigmoid", lambda p: ag.sigmoid(p[0]), [(5, 5)]),
    ("gap", lambda p: ag.global_avg_pool(p[0]), [(2, 3, 4, 4)]),
    ("dct", lambda p: ag.dct2d_ortho(p[0]), [(2, 2, 5, 7)]),
    ("idct", lambda p: ag.idct2d_ortho(p[0]), [(2, 2, 5, 7)]),
]


@pytest.mark.parametrize("case,name_build_shapes", list(enumerate(OPS)), ids=[o[0] for o in OPS])
def test_grad_check_basic_ops(case, name_build_shapes):
    _, build, shapes = name_build_shapes
    rng = np.random.default_rng(1000 + case)
    params = [Tensor(rng.normal(size=s) + 0.05, requires_grad=True) for s in shapes]
    probe = build(params)
    proj = Tensor(rng.normal(size=probe.data.shape))
    worst = ag.grad_check(lambda: ag.sum_all(ag.mul(build(params), proj)), params)
    assert worst < 1e-6


def test_grad_check_conv_and_dense():
    rng = np.random.default_rng(17)
    x = Tensor(rng.normal(size=(2, 3, 6, 7)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 3, 3, 3)) * 0.5, requires_grad=True)
    b = Tensor(rng.normal(size=4), requires_grad=True)
    spec = ag.ConvSpec(3, 4, 3, 3, stride=2, padding=1, groups=1)
    proj = Tensor(rng.normal(size=(2, 4, 3, 4)))

    def loss():
        return ag.sum_all(ag.mul(ag.conv2d(x, w, b, spec), proj))

    assert ag.grad_check(loss, [x, w, b]) < 1e-6

    xd = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    wd = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
    bd = Tensor(rng.normal(size=2), requires_grad=True)
    assert ag.grad_check(lambda: ag.sum_all(ag.dense(xd, wd, bd)), [xd, wd, bd]) < 1e-6


def test_dct_transforms_invert_each_other():
    rng = np.random.default_rng(18)
    x = rng.normal(size=(2, 3, 8, 8))
    back = ag.idct2d_ortho(ag.dct2d_ortho(Tensor(x))).data
    assert np.abs(back - x).max() < 1e-12
    D = ag.dct_matrix(8)
    assert np.abs(D @ D.T - np.eye(8)).max() < 1e-12


def test_dct_matches_scipy_when_available():
    scipy_fft = pytest.importorskip("scipy.fft")
    x = np.random.default_rng(19).normal(size=(8, 8))
    mine = ag.dct2d_ortho(Tensor(x[None, None])).data[0, 0]
    ref = scipy_fft.dctn(x, type=2, norm="ortho")
    assert np.abs(mine - ref).max() < 1e-12
