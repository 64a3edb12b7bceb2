"""Mel-spectrogram / MFCC front end.

Turns an AudioClip into the representations the classifier consumes:
overlapping frames -> windowing -> radix-2 FFT -> power spectrum -> mel
filterbank -> decibel scaling -> bilinear resize to the fixed model input.
A direct O(N^2) DFT is kept alongside the FFT as its correctness oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from mfcmnet.wavio import AudioClip

DB_EPS = 1e-10
LOG_EPS = 1e-10


class DspError(Exception):
    """Base class for front-end failures."""


class SignalTooShort(DspError):
    pass


class NonPowerOfTwoLength(DspError):
    pass


class InvalidFrequencyRange(DspError):
    pass


class DegenerateInput(DspError):
    pass


@dataclass(frozen=True)
class FramingConfig:
    frame_len: int = 1024
    hop: int = 512
    window_kind: str = "hann"  # "hann" or "rectangular"

    def __post_init__(self):
        if not (0 < self.hop <= self.frame_len):
            raise ValueError(f"need 0 < hop <= frame_len, got hop={self.hop}, frame_len={self.frame_len}")
        if self.window_kind not in ("hann", "rectangular"):
            raise ValueError(f"unknown window kind {self.window_kind!r}")


@dataclass(frozen=True)
class DspConfig:
    """Every tunable of the clip -> model-input pipeline."""

    sample_rate: int = 16000
    frame_len: int = 1024
    hop: int = 512
    window: str = "hann"
    n_mels: int = 64
    fmin: float = 0.0
    fmax: float | None = None  # None -> sample_rate / 2
    top_db: float = 80.0
    mfcc_coeffs: int = 20

    def framing(self) -> FramingConfig:
        return FramingConfig(self.frame_len, self.hop, self.window)

    def effective_fmax(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else self.fmax

    def cache_key(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


@dataclass
class MelFilterBank:
    n_mels: int
    n_fft: int
    sample_rate: int
    fmin: float
    fmax: float
    weights: np.ndarray  # (n_mels, n_fft // 2 + 1), non-negative
    center_freqs: np.ndarray  # strictly increasing, Hz


@dataclass
class MelSpectrogram:
    values: np.ndarray  # (frames, mel bands)
    scale: str  # "power" or "decibel"
    sample_rate: int
    framing: FramingConfig
    top_db: float | None = None

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]


@dataclass
class MfccMatrix:
    coeffs: np.ndarray  # (frames, n_coeffs)


def frame_signal(samples: np.ndarray, cfg: FramingConfig) -> np.ndarray:
    """Slice a signal into overlapping frames, one per row.

    Frame i covers samples [i*hop, i*hop + frame_len); a trailing partial
    frame is discarded, giving floor((n - frame_len) / hop) + 1 frames.
    """
    n = len(samples)
    if n < cfg.frame_len:
        raise SignalTooShort(f"{n} samples < frame_len {cfg.frame_len}")
    count = (n - cfg.frame_len) // cfg.hop + 1
    starts = np.arange(count) * cfg.hop
    idx = starts[:, None] + np.arange(cfg.frame_len)[None, :]
    return np.asarray(samples, dtype=np.float64)[idx]


def window_coefficients(window_kind: str, length: int, dtype=np.float64) -> np.ndarray:
    """Window taper: rectangular is all-ones, hann is 0.5*(1 - cos(2*pi*n/(L-1)))."""
    if window_kind == "rectangular":
        return np.ones(length, dtype=dtype)
    if window_kind == "hann":
        if length == 1:
            return np.ones(1, dtype=dtype)
        n = np.arange(length, dtype=np.float64)
        return (0.5 * (1.0 - np.cos(2.0 * np.pi * n / (length - 1)))).astype(dtype)
    raise ValueError(f"unknown window kind {window_kind!r}")


def apply_window(frames: np.ndarray, window_kind: str) -> np.ndarray:
    """Multiply each frame (last axis) by the window taper."""
    w = window_coefficients(window_kind, frames.shape[-1], dtype=frames.dtype)
    return frames * w


def dft_naive(x: np.ndarray) -> np.ndarray:
    """Direct-evaluation DFT over the last axis: X[k] = sum_n x[n] e^(-2j pi k n / N).

    Always computed in complex128 regardless of input dtype so it can serve
    as a precision oracle for the FFT; cost is O(N^2) per transform.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    k = np.arange(n)
    basis = np.exp(-2j * np.pi / n * np.outer(k, k))  # (k, n)
    return np.asarray(x, dtype=np.complex128) @ basis.T


_FFT_TABLES: dict[int, tuple[np.ndarray, list[np.ndarray]]] = {}


def _fft_tables(n: int) -> tuple[np.ndarray, list[np.ndarray]]:
    cached = _FFT_TABLES.get(n)
    if cached is not None:
        return cached
    bits = n.bit_length() - 1
    rev = np.zeros(n, dtype=np.intp)
    for i in range(n):
        r = 0
        v = i
        for _ in range(bits):
            r = (r << 1) | (v & 1)
            v >>= 1
        rev[i] = r
    twiddles = []
    m = 2
    while m <= n:
        half = m // 2
        twiddles.append(np.exp(-2j * np.pi * np.arange(half) / m))
        m *= 2
    _FFT_TABLES[n] = (rev, twiddles)
    return rev, twiddles


def fft(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT over the last axis.

    float32/complex64 input stays in complex64; everything else is promoted
    to complex128. Twiddle factors are generated in double precision and
    cast, which keeps the single-precision path well inside 1e-6 relative
    error of the exact transform.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    if n == 0 or (n & (n - 1)) != 0:
        raise NonPowerOfTwoLength(f"length {n} is not a power of two")
    ctype = np.complex64 if x.dtype in (np.float32, np.complex64) else np.complex128
    rev, twiddles = _fft_tables(n)
    out = np.ascontiguousarray(x[..., rev]).astype(ctype)
    if n == 1:
        return out
    m = 2
    for tw in twiddles:
        half = m // 2
        shaped = out.reshape(*out.shape[:-1], n // m, m)
        # the even half must be materialized before the in-place writes:
        # both butterfly outputs read it, and the first write aliases it
        upper = shaped[..., :half].copy()
        lower = shaped[..., half:] * tw.astype(ctype)
        shaped[..., :half] = upper + lower
        shaped[..., half:] = upper - lower
        m *= 2
    return out


def hz_to_mel(f):
    """HTK mel scale: mel(f) = 2595 * log10(1 + f / 700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def build_mel_filterbank(
    n_mels: int, n_fft: int, sample_rate: int, fmin: float = 0.0, fmax: float | None = None
) -> MelFilterBank:
    """Triangular filters with centers uniformly spaced on the mel scale.

    Each row spans [f_{m-1}, f_{m+1}] with peak 1 at its center frequency,
    sampled at the FFT bin frequencies k * sample_rate / n_fft.
    """
    if fmax is None:
        fmax = sample_rate / 2
    if not (0 <= fmin < fmax <= sample_rate / 2):
        raise InvalidFrequencyRange(f"need 0 <= fmin < fmax <= sr/2, got [{fmin}, {fmax}] at sr {sample_rate}")
    if n_mels < 2:
        raise InvalidFrequencyRange(f"n_mels must be >= 2, got {n_mels}")

    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)  # (n_mels + 2,) band edges and centers
    bin_freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)

    lower = hz_pts[:-2][:, None]
    center = hz_pts[1:-1][:, None]
    upper = hz_pts[2:][:, None]
    rising = (bin_freqs[None, :] - lower) / (center - lower)
    falling = (upper - bin_freqs[None, :]) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))

    return MelFilterBank(
        n_mels=n_mels,
        n_fft=n_fft,
        sample_rate=sample_rate,
        fmin=fmin,
        fmax=float(fmax),
        weights=weights,
        center_freqs=hz_pts[1:-1],
    )


def mel_spectrogram(clip: AudioClip, framing: FramingConfig, bank: MelFilterBank) -> MelSpectrogram:
    """Power-scale mel spectrogram: window -> FFT -> |X|^2 -> filterbank product."""
    if bank.n_fft != framing.frame_len:
        raise ValueError(f"filterbank n_fft {bank.n_fft} != frame_len {framing.frame_len}")
    frames = frame_signal(clip.samples, framing)
    spectra = fft(apply_window(frames, framing.window_kind))
    half = spectra[:, : framing.frame_len // 2 + 1]
    power = (half.real**2 + half.imag**2).astype(np.float64)
    values = power @ bank.weights.T
    np.maximum(values, 0.0, out=values)  # guard tiny negative rounding residue
    return MelSpectrogram(values=values, scale="power", sample_rate=clip.sample_rate, framing=framing)


def to_db(ms: MelSpectrogram, top_db: float = 80.0) -> MelSpectrogram:
    """Map power values to decibels relative to the matrix maximum.

    v -> 10*log10(max(v, eps) / v_max) clipped to >= -top_db, so the loudest
    entry maps to 0 and everything lies in [-top_db, 0].
    """
    if ms.scale != "power":
        raise ValueError(f"expected power scale, got {ms.scale!r}")
    floored = np.maximum(ms.values, DB_EPS)
    ref = float(np.max(floored))
    db = 10.0 * np.log10(floored / ref)
    np.maximum(db, -top_db, out=db)
    return MelSpectrogram(
        values=db, scale="decibel", sample_rate=ms.sample_rate, framing=ms.framing, top_db=top_db
    )


def mfcc(ms: MelSpectrogram, n_coeffs: int, log_base: str = "natural") -> MfccMatrix:
    """Cepstral coefficients: c(t, r) = sum_s log[X(t, s)] * cos(pi*r*(s + 0.5)/S).

    Takes the power-scale mel spectrogram and applies the log itself (floored
    at eps); the cosine sum is the plain DCT-II kernel with no orthonormal
    scaling. The log is natural by default, base 10 on request.
    """
    if ms.scale != "power":
        raise ValueError(f"expected power scale, got {ms.scale!r}")
    n_bands = ms.n_mels
    if not (1 <= n_coeffs <= n_bands):
        raise ValueError(f"need 1 <= n_coeffs <= {n_bands}, got {n_coeffs}")
    log_values = np.log(np.maximum(ms.values, LOG_EPS))
    if log_base == "10":
        log_values = log_values / np.log(10.0)
    elif log_base != "natural":
        raise ValueError(f"unknown log base {log_base!r}")
    s = np.arange(n_bands, dtype=np.float64)
    r = np.arange(n_coeffs, dtype=np.float64)
    basis = np.cos(np.pi * np.outer(r, s + 0.5) / n_bands)  # (R, S)
    return MfccMatrix(coeffs=log_values @ basis.T)


def bilinear_resize(matrix: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resize of a 2-D matrix (corners map exactly)."""
    in_h, in_w = matrix.shape
    if in_h < 2 or in_w < 2:
        raise DegenerateInput(f"resize needs at least 2x2 input, got {in_h}x{in_w}")
    ys = np.linspace(0.0, in_h - 1.0, out_h)
    xs = np.linspace(0.0, in_w - 1.0, out_w)
    y0 = np.clip(np.floor(ys).astype(np.intp), 0, in_h - 2)
    x0 = np.clip(np.floor(xs).astype(np.intp), 0, in_w - 2)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    a = matrix[np.ix_(y0, x0)]
    b = matrix[np.ix_(y0, x0 + 1)]
    c = matrix[np.ix_(y0 + 1, x0)]
    d = matrix[np.ix_(y0 + 1, x0 + 1)]
    return (
        a * (1 - wy) * (1 - wx) + b * (1 - wy) * wx + c * wy * (1 - wx) + d * wy * wx
    )


def to_model_input(ms: MelSpectrogram, height: int, width: int) -> np.ndarray:
    """Build the (3, height, width) float32 network input from a dB spectrogram.

    The matrix is transposed so rows run along the mel-frequency axis (row 0 =
    lowest band), bilinearly resized, min-max normalized into [0, 1] (all
    zeros when the matrix is constant) and replicated across 3 channels.
    """
    if ms.scale != "decibel":
        raise ValueError(f"expected decibel scale, got {ms.scale!r}")
    if ms.n_frames < 2 or ms.n_mels < 2:
        raise DegenerateInput(f"need >= 2 frames and >= 2 bands, got {ms.n_frames}x{ms.n_mels}")
    image = bilinear_resize(ms.values.T, height, width)  # (freq, time)
    lo, hi = float(image.min()), float(image.max())
    if hi > lo:
        image = (image - lo) / (hi - lo)
    else:
        image = np.zeros_like(image)
    return np.repeat(image[None, :, :], 3, axis=0).astype(np.float32)


def clip_to_model_input(clip: AudioClip, cfg: DspConfig, height: int, width: int) -> np.ndarray:
    """Full front end: resample -> mel power -> dB -> (3, height, width) input."""
    from mfcmnet.wavio import resample_linear

    clip = resample_linear(clip, cfg.sample_rate)
    bank = build_mel_filterbank(cfg.n_mels, cfg.frame_len, cfg.sample_rate, cfg.fmin, cfg.effective_fmax())
    db = to_db(mel_spectrogram(clip, cfg.framing(), bank), cfg.top_db)
    return to_model_input(db, height, width)


def write_spectrogram_csv(path: str, ms: MelSpectrogram) -> None:
    """One CSV row per frame."""
    np.savetxt(path, ms.values, delimiter=",", fmt="%.9g")


def write_mfcc_csv(path: str, m: MfccMatrix) -> None:
    np.savetxt(path, m.coeffs, delimiter=",", fmt="%.9g")


def write_spectrogram_pgm(path: str, ms: MelSpectrogram) -> None:
    """8-bit binary PGM of a dB spectrogram for visual inspection.

    [-top_db, 0] maps linearly to [0, 255]; rows are mel bands with the
    lowest band at the bottom, columns are frames.
    """
    if ms.scale != "decibel" or ms.top_db is None:
        raise ValueError("PGM export needs a decibel-scale spectrogram")
    img = (ms.values.T + ms.top_db) / ms.top_db * 255.0
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)[::-1, :]
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())
