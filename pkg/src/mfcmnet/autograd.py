"""Dense N-d tensors with reverse-mode autodiff on an explicit tape.

The op set is exactly what the classifier needs: grouped/depthwise conv,
batch norm, ReLU6, sigmoid, dense layers, global average pooling, the
orthonormal 2-D DCT pair, binary cross-entropy, and a handful of shape ops.
Forward ops executed inside a `with Tape() as tape:` block append a record;
`tape.backward(loss)` replays the records in exact reverse order and
accumulates gradients into every `requires_grad` tensor it reaches.

Every forward op validates that its output is finite and raises
NumericalFault otherwise.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from mfcmnet import kernels


class NumericalFault(Exception):
    """A forward op produced NaN or Inf."""


class ShapeMismatch(Exception):
    pass


_STACK = threading.local()


def _tape_stack() -> list:
    if not hasattr(_STACK, "tapes"):
        _STACK.tapes = []
    return _STACK.tapes


class Tensor:
    """Flat row-major buffer + shape; float32 or float64."""

    __slots__ = ("data", "requires_grad", "grad", "_tracked")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._tracked = False  # set when produced by a recorded op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of executed ops; backward() walks it in reverse."""

    def __init__(self):
        self._records: list[tuple[Tensor, object]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _tape_stack().pop()
        assert popped is self

    def _record(self, out: Tensor, backward_fn) -> None:
        out._tracked = True
        self._records.append((out, backward_fn))

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into .grad of every requires_grad leaf."""
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        holders: dict[int, Tensor] = {id(loss): loss}

        def accumulate(t: Tensor, g: np.ndarray) -> None:
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
                holders[key] = t

        for out, backward_fn in reversed(self._records):
            g = grads.get(id(out))
            if g is None:
                continue
            backward_fn(g, accumulate)
        for key, t in holders.items():
            if t.requires_grad:
                g = grads[key].reshape(t.shape)
                t.grad = g if t.grad is None else t.grad + g


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _finite_or_fault(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericalFault(f"{op} produced non-finite values")


def _result(data: np.ndarray, op: str) -> Tensor:
    _finite_or_fault(data, op)
    return Tensor(data)


def _tape_for(*tensors: Tensor) -> Tape | None:
    tape = active_tape()
    if tape is None:
        return None
    if any(t.requires_grad or t._tracked for t in tensors):
        return tape
    return None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = _result(a.data + b.data, "add")
    tape = _tape_for(a, b)
    if tape is not None:
        def backward(g, acc):
            acc(a, _unbroadcast(g, a.shape))
            acc(b, _unbroadcast(g, b.shape))
        tape._record(out, backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = _result(a.data * b.data, "mul")
    tape = _tape_for(a, b)
    if tape is not None:
        a_data, b_data = a.data, b.data
        def backward(g, acc):
            acc(a, _unbroadcast(g * b_data, a.shape))
            acc(b, _unbroadcast(g * a_data, b.shape))
        tape._record(out, backward)
    return out


def reshape(x: Tensor, shape: tuple) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    tape = _tape_for(x)
    if tape is not None:
        in_shape = x.shape
        def backward(g, acc):
            acc(x, g.reshape(in_shape))
        tape._record(out, backward)
    return out


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    out = _result(np.concatenate([t.data for t in tensors], axis=axis), "concat")
    tape = _tape_for(*tensors)
    if tape is not None:
        sizes = [t.shape[axis] for t in tensors]
        def backward(g, acc):
            start = 0
            for t, size in zip(tensors, sizes):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(start, start + size)
                acc(t, g[tuple(sl)])
                start += size
        tape._record(out, backward)
    return out


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, stop)
    out = Tensor(np.ascontiguousarray(x.data[tuple(sl)]))
    tape = _tape_for(x)
    if tape is not None:
        def backward(g, acc):
            full = np.zeros_like(x.data)
            full[tuple(sl)] = g
            acc(x, full)
        tape._record(out, backward)
    return out


def gather_last(x: Tensor, indices: np.ndarray) -> Tensor:
    """Select positions along the last axis; scatter-add on the way back."""
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor(np.ascontiguousarray(x.data[..., idx]))
    tape = _tape_for(x)
    if tape is not None:
        def backward(g, acc):
            full = np.zeros_like(x.data)
            np.add.at(full, (..., idx), g)
            acc(x, full)
        tape._record(out, backward)
    return out


def sum_all(x: Tensor) -> Tensor:
    """Reduce to a scalar by summation."""
    out = _result(np.asarray(x.data.sum(), dtype=x.data.dtype), "sum_all")
    tape = _tape_for(x)
    if tape is not None:
        def backward(g, acc):
            acc(x, np.broadcast_to(g, x.shape).astype(x.data.dtype))
        tape._record(out, backward)
    return out


def broadcast_spatial(x: Tensor, height: int, width: int) -> Tensor:
    """Expand (N, C, 1, 1) to (N, C, height, width); backward sums over the map."""
    if x.data.ndim != 4 or x.shape[2] != 1 or x.shape[3] != 1:
        raise ShapeMismatch(f"expected (N, C, 1, 1), got {x.shape}")
    out = Tensor(np.ascontiguousarray(np.broadcast_to(x.data, (*x.shape[:2], height, width))))
    tape = _tape_for(x)
    if tape is not None:
        def backward(g, acc):
            acc(x, g.sum(axis=(2, 3), keepdims=True))
        tape._record(out, backward)
    return out


# ---------------------------------------------------------------------------
# neural network ops
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ShapeMismatch(
                f"groups {self.groups} must divide channels {self.in_channels}/{self.out_channels}"
            )
        if self.stride < 1 or self.padding < 0:
            raise ShapeMismatch(f"bad stride/padding in {self}")

    @property
    def is_depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, spec: ConvSpec) -> Tensor:
    """Grouped 2-D cross-correlation, output size floor((H + 2p - kh)/stride) + 1."""
    n, c, h, w = _expect_rank(x, 4, "conv2d input")
    if c != spec.in_channels:
        raise ShapeMismatch(f"input has {c} channels, spec expects {spec.in_channels}")
    wshape = (spec.out_channels, spec.in_channels // spec.groups, spec.kernel_h, spec.kernel_w)
    if weight.shape != wshape:
        raise ShapeMismatch(f"weight shape {weight.shape} != {wshape}")
    oh = (h + 2 * spec.padding - spec.kernel_h) // spec.stride + 1
    ow = (w + 2 * spec.padding - spec.kernel_w) // spec.stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeMismatch(f"kernel {spec.kernel_h}x{spec.kernel_w} too large for {h}x{w} input")

    y = kernels.conv2d_forward(x.data, weight.data, spec.stride, spec.padding, spec.groups)
    if bias is not None:
        if bias.shape != (spec.out_channels,):
            raise ShapeMismatch(f"bias shape {bias.shape} != ({spec.out_channels},)")
        y = y + bias.data[None, :, None, None]
    out = _result(y, "conv2d")
    tape = _tape_for(x, weight, bias) if bias is not None else _tape_for(x, weight)
    if tape is not None:
        x_data, w_data = x.data, weight.data
        def backward(g, acc):
            g = np.ascontiguousarray(g)
            acc(x, kernels.conv2d_input_grad(g, w_data, x_data.shape, spec.stride, spec.padding, spec.groups))
            acc(weight, kernels.conv2d_weight_grad(g, x_data, w_data.shape, spec.stride, spec.padding, spec.groups))
            if bias is not None:
                acc(bias, g.sum(axis=(0, 2, 3)))
        tape._record(out, backward)
    return out


def depthwise_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, spec: ConvSpec) -> Tensor:
    """Per-channel convolution: grouped conv2d with groups == channels (same kernel path)."""
    if not spec.is_depthwise:
        raise ShapeMismatch(f"spec is not depthwise: {spec}")
    return conv2d(x, weight, bias, spec)


def relu6(x: Tensor) -> Tensor:
    out = _result(np.minimum(np.maximum(x.data, 0), 6), "relu6")
    tape = _tape_for(x)
    if tape is not None:
        mask = ((x.data > 0) & (x.data < 6)).astype(x.data.dtype)
        def backward(g, acc):
            acc(x, g * mask)
        tape._record(out, backward)
    return out


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    y = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    y = y.astype(z.dtype, copy=False)
    out = _result(y, "sigmoid")
    tape = _tape_for(x)
    if tape is not None:
        def backward(g, acc):
            acc(x, g * y * (1.0 - y))
        tape._record(out, backward)
    return out


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map (N, F) @ (F, G) + (G,)."""
    n, f = _expect_rank(x, 2, "dense input")
    if weight.shape[0] != f:
        raise ShapeMismatch(f"dense input width {f} != weight rows {weight.shape[0]}")
    y = x.data @ weight.data
    if bias is not None:
        y = y + bias.data
    out = _result(y, "dense")
    tape = _tape_for(x, weight, bias) if bias is not None else _tape_for(x, weight)
    if tape is not None:
        x_data, w_data = x.data, weight.data
        def backward(g, acc):
            acc(x, g @ w_data.T)
            acc(weight, x_data.T @ g)
            if bias is not None:
                acc(bias, g.sum(axis=0))
        tape._record(out, backward)
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C) spatial mean; backward spreads g/(H*W)."""
    n, c, h, w = _expect_rank(x, 4, "global_avg_pool input")
    out = _result(x.data.mean(axis=(2, 3)), "global_avg_pool")
    tape = _tape_for(x)
    if tape is not None:
        def backward(g, acc):
            acc(x, np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).astype(g.dtype))
        tape._record(out, backward)
    return out


class BatchNormState:
    """Running statistics buffer shared between train and eval passes."""

    def __init__(self, channels: int, dtype=np.float32):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    mode: str,
    momentum: float = 0.9,
    eps: float = 1e-5,
    update_running: bool = True,
) -> Tensor:
    """Per-channel normalization over (N, H, W).

    Train mode normalizes with biased batch statistics and (optionally)
    folds them into the running buffers as r = momentum * r + (1-m) * batch;
    eval mode normalizes with the running buffers.
    """
    n, c, h, w = _expect_rank(x, 4, "batchnorm2d input")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch(f"affine params must have shape ({c},)")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")

    if mode == "train":
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if update_running:
            state.running_mean = (momentum * state.running_mean + (1 - momentum) * mean).astype(
                state.running_mean.dtype
            )
            state.running_var = (momentum * state.running_var + (1 - momentum) * var).astype(
                state.running_var.dtype
            )
    else:
        mean = state.running_mean.astype(x.data.dtype)
        var = state.running_var.astype(x.data.dtype)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = _result(gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None], "batchnorm2d")
    tape = _tape_for(x, gamma, beta)
    if tape is not None:
        m = n * h * w
        def backward(g, acc):
            acc(gamma, (g * xhat).sum(axis=(0, 2, 3)))
            acc(beta, g.sum(axis=(0, 2, 3)))
            gxhat = g * gamma.data[None, :, None, None]
            if mode == "eval":
                acc(x, gxhat * inv_std[None, :, None, None])
                return
            # batch statistics carry gradient through mean and variance
            sum_gxhat = gxhat.sum(axis=(0, 2, 3))
            sum_gxhat_xhat = (gxhat * xhat).sum(axis=(0, 2, 3))
            gx = (
                gxhat
                - (sum_gxhat / m)[None, :, None, None]
                - xhat * (sum_gxhat_xhat / m)[None, :, None, None]
            ) * inv_std[None, :, None, None]
            acc(x, gx.astype(g.dtype))
        tape._record(out, backward)
    return out


def bce_with_logits(logits: Tensor, labels: Tensor) -> Tensor:
    """Mean binary cross-entropy in the numerically stable logit form.

    loss = mean(max(z, 0) - z*y + log(1 + exp(-|z|)))
    """
    if logits.shape != labels.shape:
        raise ShapeMismatch(f"logits {logits.shape} vs labels {labels.shape}")
    z, y = logits.data, labels.data
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    count = per.size
    out = _result(np.asarray(per.mean(), dtype=z.dtype), "bce_with_logits")
    tape = _tape_for(logits, labels)
    if tape is not None:
        sig = 1.0 / (1.0 + np.exp(-z.astype(np.float64)))
        def backward(g, acc):
            acc(logits, (g * (sig - y) / count).astype(z.dtype))
        tape._record(out, backward)
    return out


# ---------------------------------------------------------------------------
# orthonormal 2-D DCT pair (linear, exactly inverse of each other)
# ---------------------------------------------------------------------------

_DCT_MATRICES: dict[int, np.ndarray] = {}


def dct_matrix(size: int) -> np.ndarray:
    """Orthonormal DCT-II matrix: C[k, n] = s_k * cos(pi * (n + 0.5) * k / size)."""
    cached = _DCT_MATRICES.get(size)
    if cached is None:
        k = np.arange(size)[:, None]
        n = np.arange(size)[None, :]
        cached = np.cos(np.pi * (n + 0.5) * k / size) * np.sqrt(2.0 / size)
        cached[0, :] = np.sqrt(1.0 / size)
        _DCT_MATRICES[size] = cached
    return cached


def _dct_pair(x: Tensor, inverse: bool, op: str) -> Tensor:
    if x.data.ndim < 2:
        raise ShapeMismatch(f"{op} needs at least 2 dims, got {x.shape}")
    h, w = x.shape[-2], x.shape[-1]
    ch = dct_matrix(h).astype(x.data.dtype)
    cw = dct_matrix(w).astype(x.data.dtype)
    if inverse:
        y = np.matmul(ch.T, np.matmul(x.data, cw))
    else:
        y = np.matmul(ch, np.matmul(x.data, cw.T))
    out = _result(y, op)
    tape = _tape_for(x)
    if tape is not None:
        def backward(g, acc):
            if inverse:
                acc(x, np.matmul(ch, np.matmul(g, cw.T)))
            else:
                acc(x, np.matmul(ch.T, np.matmul(g, cw)))
        tape._record(out, backward)
    return out


def dct2d_ortho(x: Tensor) -> Tensor:
    """Separable orthonormal DCT-II over the trailing two axes (an isometry)."""
    return _dct_pair(x, inverse=False, op="dct2d_ortho")


def idct2d_ortho(x: Tensor) -> Tensor:
    """Exact inverse of dct2d_ortho (DCT-III with matching normalization)."""
    return _dct_pair(x, inverse=True, op="idct2d_ortho")


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def grad_check(
    build_loss,
    params: list[Tensor],
    eps: float = 1e-5,
    max_elements_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between tape gradients and central differences.

    build_loss() must rebuild the scalar loss from the current parameter
    values; relative error per element is |a - n| / max(|a|, |n|, 1e-6).
    The 1e-6 denominator floor keeps the metric meaningful for near-zero
    gradient elements, where the float64 central difference itself carries
    ~1e-11 cancellation noise; below the floor the check still demands
    absolute agreement within threshold * 1e-6. Large tensors can be
    spot-checked by limiting elements per parameter (selection is
    deterministic for a seeded rng).
    """
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = build_loss()
    tape.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        a_flat = a.reshape(-1)
        indices = np.arange(flat.size)
        if max_elements_per_param is not None and flat.size > max_elements_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            indices = np.sort(rng.choice(flat.size, size=max_elements_per_param, replace=False))
        for i in indices:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = build_loss().item()
            flat[i] = orig - eps
            f_minus = build_loss().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            rel = abs(float(a_flat[i]) - numeric) / max(abs(float(a_flat[i])), abs(numeric), 1e-6)
            worst = max(worst, rel)
    return worst


def _expect_rank(x: Tensor, rank: int, what: str) -> tuple:
    if x.data.ndim != rank:
        raise ShapeMismatch(f"{what} must have rank {rank}, got shape {x.shape}")
    return x.shape
