"""Throughput benchmarks: convolution kernels across backends, and the
fast transform routes against their naive oracles."""

from __future__ import annotations

import time

import numpy as np

from mfcmnet import dsp, kernels
from mfcmnet.autograd import dct_matrix


def _time_median(fn, repeats: int) -> float:
    fn()  # warmup
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench_conv2d(
    n: int = 8,
    c_in: int = 16,
    h: int = 32,
    w: int = 32,
    c_out: int = 32,
    kernel: int = 3,
    stride: int = 1,
    padding: int = 1,
    groups: int = 1,
    repeats: int = 5,
) -> list[dict]:
    """Forward + both backward kernels on every available backend."""
    rng = np.random.default_rng(0)
    x = rng.standard_normal((n, c_in, h, w)).astype(np.float32)
    wt = rng.standard_normal((c_out, c_in // groups, kernel, kernel)).astype(np.float32)
    oh = (h + 2 * padding - kernel) // stride + 1
    ow = (w + 2 * padding - kernel) // stride + 1
    gy = rng.standard_normal((n, c_out, oh, ow)).astype(np.float32)
    # multiply-add pairs for forward; each backward pass costs about the same
    flops = 2.0 * n * c_out * oh * ow * (c_in // groups) * kernel * kernel

    rows = []
    base_seconds = None
    for backend in kernels.available_backends():
        mod = kernels.get_backend(backend)

        def run():
            mod.conv2d_forward(x, wt, stride, padding, groups)
            mod.conv2d_input_grad(gy, wt, x.shape, stride, padding, groups)
            mod.conv2d_weight_grad(gy, x, wt.shape, stride, padding, groups)

        seconds = _time_median(run, repeats)
        if base_seconds is None:
            base_seconds = seconds
        rows.append(
            {
                "op": "conv2d" if groups == 1 else ("depthwise" if groups == c_in == c_out else "grouped_conv2d"),
                "backend": backend,
                "shape": f"{n}x{c_in}x{h}x{w}->{c_out},k{kernel},s{stride},g{groups}",
                "seconds": seconds,
                "gflops_per_sec": 3.0 * flops / seconds / 1e9,
                "speedup_vs_reference": base_seconds / seconds,
            }
        )
    return rows


def bench_depthwise(n: int = 8, c: int = 32, h: int = 32, w: int = 32, repeats: int = 5) -> list[dict]:
    return bench_conv2d(n=n, c_in=c, h=h, w=w, c_out=c, groups=c, repeats=repeats)


def bench_fft(length: int = 1024, batch: int = 64, repeats: int = 5) -> list[dict]:
    """Fast transform against the quadratic oracle route."""
    rng = np.random.default_rng(0)
    x = rng.standard_normal((batch, length))
    rows = []
    fft_seconds = _time_median(lambda: dsp.fft(x), repeats)
    rows.append(
        {
            "op": "fft",
            "backend": "radix2",
            "shape": f"{batch}x{length}",
            "seconds": fft_seconds,
            "gflops_per_sec": 5.0 * batch * length * np.log2(length) / fft_seconds / 1e9,
            "speedup_vs_reference": 1.0,
        }
    )
    naive_seconds = _time_median(lambda: dsp.dft_naive(x), max(1, repeats // 2))
    rows.append(
        {
            "op": "fft",
            "backend": "dft_naive",
            "shape": f"{batch}x{length}",
            "seconds": naive_seconds,
            "gflops_per_sec": 8.0 * batch * length * length / naive_seconds / 1e9,
            "speedup_vs_reference": fft_seconds and naive_seconds / fft_seconds,
        }
    )
    return rows


def bench_dct(size: int = 32, batch: int = 256, repeats: int = 5) -> list[dict]:
    rng = np.random.default_rng(0)
    x = rng.standard_normal((batch, size, size))
    ch = dct_matrix(size)

    def run():
        np.matmul(ch, np.matmul(x, ch.T))

    seconds = _time_median(run, repeats)
    return [
        {
            "op": "dct2d",
            "backend": "matmul",
            "shape": f"{batch}x{size}x{size}",
            "seconds": seconds,
            "gflops_per_sec": 4.0 * batch * size * size * size / seconds / 1e9,
            "speedup_vs_reference": 1.0,
        }
    ]


BENCH_OPS = {
    "conv2d": bench_conv2d,
    "depthwise": bench_depthwise,
    "fft": bench_fft,
    "dct": bench_dct,
}


def run_bench(op: str = "conv2d", repeats: int = 5, **kw) -> list[dict]:
    if op not in BENCH_OPS:
        raise ValueError(f"unknown bench op {op!r}; choose from {sorted(BENCH_OPS)}")
    return BENCH_OPS[op](repeats=repeats, **kw)
