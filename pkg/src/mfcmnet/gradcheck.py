"""Central-difference verification of every differentiable op and of the
full micro network, shared by the command-line `gradcheck` command and the
test suite. All checks run in float64 with a fixed seed.
"""

from __future__ import annotations

import numpy as np

from mfcmnet import autograd as ag
from mfcmnet import model as mdl

EPS = 1e-5
THRESHOLD = 1e-4


def _param(rng, shape, scale=1.0, away_from=()):
    """Random float64 parameter; values are nudged off listed kink points
    so central differences stay on one smooth piece."""
    data = rng.uniform(-1.0, 1.0, size=shape) * scale
    for kink in away_from:
        near = np.abs(data - kink) < 0.05
        data = np.where(near, kink + np.sign(data - kink + 1e-12) * 0.05, data)
    return ag.Tensor(data, requires_grad=True)


def _project(out: ag.Tensor, direction: np.ndarray) -> ag.Tensor:
    return ag.sum_all(ag.mul(out, ag.Tensor(direction)))


def op_checks() -> list:
    """(name, callable) pairs; each callable returns max relative error."""
    checks = []

    def check(name):
        def deco(fn):
            checks.append((name, fn))
            return fn
        return deco

    @check("add")
    def _add():
        rng = np.random.default_rng(11)
        a = _param(rng, (3, 4))
        b = _param(rng, (3, 4))
        r = rng.standard_normal((3, 4))
        return ag.grad_check(lambda: _project(ag.add(a, b), r), [a, b], EPS)

    @check("add_broadcast")
    def _add_b():
        rng = np.random.default_rng(12)
        a = _param(rng, (2, 3, 4))
        b = _param(rng, (1, 3, 1))
        r = rng.standard_normal((2, 3, 4))
        return ag.grad_check(lambda: _project(ag.add(a, b), r), [a, b], EPS)

    @check("mul")
    def _mul():
        rng = np.random.default_rng(13)
        a = _param(rng, (3, 4))
        b = _param(rng, (3, 4))
        r = rng.standard_normal((3, 4))
        return ag.grad_check(lambda: _project(ag.mul(a, b), r), [a, b], EPS)

    @check("mul_broadcast")
    def _mul_b():
        rng = np.random.default_rng(14)
        a = _param(rng, (2, 3, 4))
        b = _param(rng, (3, 1))
        r = rng.standard_normal((2, 3, 4))
        return ag.grad_check(lambda: _project(ag.mul(a, b), r), [a, b], EPS)

    @check("dense")
    def _dense():
        rng = np.random.default_rng(15)
        x = _param(rng, (4, 5))
        w = _param(rng, (5, 3))
        b = _param(rng, (3,))
        r = rng.standard_normal((4, 3))
        return ag.grad_check(lambda: _project(ag.dense(x, w, b), r), [x, w, b], EPS)

    @check("conv2d_dense")
    def _conv():
        rng = np.random.default_rng(16)
        spec = ag.ConvSpec(3, 4, 3, 3, stride=1, padding=1)
        x = _param(rng, (2, 3, 6, 6))
        w = _param(rng, (4, 3, 3, 3), scale=0.5)
        b = _param(rng, (4,))
        r = rng.standard_normal((2, 4, 6, 6))
        return ag.grad_check(lambda: _project(ag.conv2d(x, w, b, spec), r), [x, w, b], EPS)

    @check("conv2d_strided")
    def _conv_s():
        rng = np.random.default_rng(17)
        spec = ag.ConvSpec(2, 3, 3, 3, stride=2, padding=1)
        x = _param(rng, (2, 2, 7, 8))
        w = _param(rng, (3, 2, 3, 3), scale=0.5)
        r = rng.standard_normal((2, 3, 4, 4))
        return ag.grad_check(lambda: _project(ag.conv2d(x, w, None, spec), r), [x, w], EPS)

    @check("conv2d_grouped")
    def _conv_g():
        rng = np.random.default_rng(18)
        spec = ag.ConvSpec(4, 6, 3, 3, stride=1, padding=0, groups=2)
        x = _param(rng, (2, 4, 5, 5))
        w = _param(rng, (6, 2, 3, 3), scale=0.5)
        r = rng.standard_normal((2, 6, 3, 3))
        return ag.grad_check(lambda: _project(ag.conv2d(x, w, None, spec), r), [x, w], EPS)

    @check("depthwise_conv2d")
    def _conv_dw():
        rng = np.random.default_rng(19)
        spec = ag.ConvSpec(4, 4, 3, 3, stride=2, padding=1, groups=4)
        x = _param(rng, (2, 4, 8, 8))
        w = _param(rng, (4, 1, 3, 3), scale=0.5)
        r = rng.standard_normal((2, 4, 4, 4))
        return ag.grad_check(lambda: _project(ag.depthwise_conv2d(x, w, None, spec), r), [x, w], EPS)

    @check("relu6")
    def _relu6():
        rng = np.random.default_rng(20)
        x = _param(rng, (4, 5), scale=4.0, away_from=(0.0, 6.0))
        r = rng.standard_normal((4, 5))
        return ag.grad_check(lambda: _project(ag.relu6(x), r), [x], EPS)

    @check("sigmoid")
    def _sigmoid():
        rng = np.random.default_rng(21)
        x = _param(rng, (4, 5), scale=3.0)
        r = rng.standard_normal((4, 5))
        return ag.grad_check(lambda: _project(ag.sigmoid(x), r), [x], EPS)

    @check("batchnorm2d_train")
    def _bn_train():
        rng = np.random.default_rng(22)
        x = _param(rng, (3, 4, 5, 5))
        gamma = _param(rng, (4,))
        beta = _param(rng, (4,))
        state = ag.BatchNormState(4, dtype=np.float64)
        r = rng.standard_normal((3, 4, 5, 5))
        def loss():
            y = ag.batchnorm2d(x, gamma, beta, state, "train", update_running=False)
            return _project(y, r)
        return ag.grad_check(loss, [x, gamma, beta], EPS)

    @check("batchnorm2d_eval")
    def _bn_eval():
        rng = np.random.default_rng(23)
        x = _param(rng, (3, 4, 5, 5))
        gamma = _param(rng, (4,))
        beta = _param(rng, (4,))
        state = ag.BatchNormState(4, dtype=np.float64)
        state.running_mean = rng.uniform(-0.5, 0.5, 4)
        state.running_var = rng.uniform(0.5, 1.5, 4)
        r = rng.standard_normal((3, 4, 5, 5))
        def loss():
            y = ag.batchnorm2d(x, gamma, beta, state, "eval")
            return _project(y, r)
        return ag.grad_check(loss, [x, gamma, beta], EPS)

    @check("global_avg_pool")
    def _gap():
        rng = np.random.default_rng(24)
        x = _param(rng, (2, 3, 4, 5))
        r = rng.standard_normal((2, 3))
        return ag.grad_check(lambda: _project(ag.global_avg_pool(x), r), [x], EPS)

    @check("bce_with_logits")
    def _bce():
        rng = np.random.default_rng(25)
        x = _param(rng, (6, 1), scale=2.0)
        y = ag.Tensor(rng.integers(0, 2, (6, 1)).astype(np.float64))
        return ag.grad_check(lambda: ag.bce_with_logits(x, y), [x], EPS)

    @check("dct2d_ortho")
    def _dct():
        rng = np.random.default_rng(26)
        x = _param(rng, (2, 3, 5, 7))
        r = rng.standard_normal((2, 3, 5, 7))
        return ag.grad_check(lambda: _project(ag.dct2d_ortho(x), r), [x], EPS)

    @check("idct2d_ortho")
    def _idct():
        rng = np.random.default_rng(27)
        x = _param(rng, (2, 3, 5, 7))
        r = rng.standard_normal((2, 3, 5, 7))
        return ag.grad_check(lambda: _project(ag.idct2d_ortho(x), r), [x], EPS)

    @check("reshape")
    def _reshape():
        rng = np.random.default_rng(28)
        x = _param(rng, (3, 4, 5))
        r = rng.standard_normal((3, 20))
        return ag.grad_check(lambda: _project(ag.reshape(x, (3, 20)), r), [x], EPS)

    @check("concat")
    def _concat():
        rng = np.random.default_rng(29)
        a = _param(rng, (2, 3, 2, 4))
        b = _param(rng, (2, 3, 3, 4))
        r = rng.standard_normal((2, 3, 5, 4))
        return ag.grad_check(lambda: _project(ag.concat([a, b], axis=2), r), [a, b], EPS)

    @check("slice_axis")
    def _slice():
        rng = np.random.default_rng(30)
        x = _param(rng, (2, 3, 6, 4))
        r = rng.standard_normal((2, 3, 2, 4))
        return ag.grad_check(lambda: _project(ag.slice_axis(x, 2, 1, 3), r), [x], EPS)

    @check("gather_last")
    def _gather():
        rng = np.random.default_rng(31)
        x = _param(rng, (2, 3, 10))
        idx = np.asarray([0, 2, 2, 7])
        r = rng.standard_normal((2, 3, 4))
        return ag.grad_check(lambda: _project(ag.gather_last(x, idx), r), [x], EPS)

    @check("broadcast_spatial")
    def _bspatial():
        rng = np.random.default_rng(32)
        x = _param(rng, (2, 3, 1, 1))
        r = rng.standard_normal((2, 3, 4, 5))
        return ag.grad_check(lambda: _project(ag.broadcast_spatial(x, 4, 5), r), [x], EPS)

    @check("sum_all")
    def _sum():
        rng = np.random.default_rng(33)
        x = _param(rng, (3, 4))
        return ag.grad_check(lambda: ag.sum_all(x), [x], EPS)

    @check("mfca_statistics")
    def _stats():
        rng = np.random.default_rng(34)
        x = _param(rng, (2, 3, 4, 5))
        r = rng.standard_normal((2, 3, 4))
        return ag.grad_check(lambda: _project(mdl.mfca_statistics(x, 4), r), [x], EPS)

    return checks


def full_network_check(
    seed: int = 7,
    height: int = 12,
    width: int = 12,
    max_elements_per_param: int = 20,
    variant: str = "bottleneck",
) -> float:
    """Max relative gradient error of the whole micro model (float64),
    spot-checking a deterministic sample of elements per parameter."""
    cfg = mdl.micro_config(height, width, mfca=mdl.MfcaConfig(variant=variant))
    net = mdl.MfcmNet(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    # batch of 3 with mixed labels: an even batch with balanced labels and
    # zero-init biases makes the logits exactly antisymmetric under the
    # batch-stat normalization, which zeroes several gradients at init
    x = rng.uniform(0.0, 1.0, size=(3, 3, height, width))
    y = ag.Tensor(np.asarray([[1.0], [0.0], [1.0]]))

    def loss():
        logits = net.forward(x, mode="train", update_running=False)
        return ag.bce_with_logits(logits, y)

    return ag.grad_check(
        loss,
        net.parameters(),
        EPS,
        max_elements_per_param=max_elements_per_param,
        rng=np.random.default_rng(seed + 2),
    )


def run_all(include_network: bool = True) -> list:
    """[(name, max_rel_error), ...] for every op check plus the full model."""
    results = [(name, fn()) for name, fn in op_checks()]
    if include_network:
        results.append(("micro_network", full_network_check()))
    return results
