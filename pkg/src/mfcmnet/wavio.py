"""RIFF/WAVE parsing, encoding and resampling.

Decodes little-endian RIFF/WAVE byte images into normalized mono sample
buffers. Supported encodings: 16-bit PCM, 32-bit PCM and 32-bit IEEE float,
mono or stereo. Unknown chunks (LIST, fact, cue, ...) are skipped so that
real-world files with metadata parse cleanly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

AMPLITUDE_EPS = 1e-6


class WavError(Exception):
    """Base class for WAV parsing failures."""


class MalformedHeader(WavError):
    """RIFF/WAVE magic or chunk structure is invalid."""


class UnsupportedEncoding(WavError):
    """Compression code / sample layout outside PCM-16, PCM-32, float-32 mono/stereo."""


class TruncatedData(WavError):
    """Data chunk is shorter than its declared length."""


@dataclass
class WavFormatInfo:
    num_channels: int
    bits_per_sample: int
    sample_format: str  # "pcm" or "float"
    sample_rate: int
    num_frames: int


@dataclass
class AudioClip:
    """Mono audio: float64 amplitudes in [-1, 1] plus the sampling rate."""

    samples: np.ndarray
    sample_rate: int
    source_path: str | None = field(default=None)

    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def validate(self) -> None:
        if self.samples.size == 0:
            raise ValueError("empty sample buffer")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("non-finite amplitude")
        peak = float(np.max(np.abs(self.samples)))
        if peak > 1.0 + AMPLITUDE_EPS:
            raise ValueError(f"amplitude out of range: |x| max {peak}")


def _iter_chunks(data: bytes, start: int):
    """Yield (chunk_id, payload_offset, declared_size) for each RIFF sub-chunk.

    Chunk payloads are word-aligned: an odd-sized chunk is followed by one
    pad byte that is not counted in its declared size.
    """
    pos = start
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        yield cid, pos + 8, size
        pos += 8 + size + (size & 1)


def parse_wav(data: bytes, source_path: str | None = None) -> tuple[WavFormatInfo, AudioClip]:
    """Decode a complete WAV file image into (format info, mono clip).

    Integer PCM is scaled by 1 / 2^(bits-1); multi-channel input is mixed
    down by the arithmetic mean of the channels; float samples are clamped
    to [-1, 1].

    Raises MalformedHeader, UnsupportedEncoding or TruncatedData.
    """
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedHeader("not a RIFF/WAVE file")

    fmt = None
    data_chunk = None
    for cid, off, size in _iter_chunks(data, 12):
        if cid == b"fmt ":
            if size < 16 or off + 16 > len(data):
                raise MalformedHeader("fmt chunk too short")
            audio_format, channels, rate, _byte_rate, _block_align, bits = struct.unpack_from(
                "<HHIIHH", data, off
            )
            fmt = (audio_format, channels, rate, bits)
        elif cid == b"data":
            data_chunk = (off, size)
            break  # fmt precedes data in every conforming file
    if fmt is None:
        raise MalformedHeader("missing fmt chunk")
    if data_chunk is None:
        raise MalformedHeader("missing data chunk")

    audio_format, channels, rate, bits = fmt
    if audio_format == 1 and bits == 16:
        dtype, sample_format = np.dtype("<i2"), "pcm"
    elif audio_format == 1 and bits == 32:
        dtype, sample_format = np.dtype("<i4"), "pcm"
    elif audio_format == 3 and bits == 32:
        dtype, sample_format = np.dtype("<f4"), "float"
    else:
        raise UnsupportedEncoding(f"format code {audio_format} with {bits} bits unsupported")
    if channels not in (1, 2):
        raise UnsupportedEncoding(f"{channels} channels unsupported")
    if rate <= 0:
        raise MalformedHeader("non-positive sample rate")

    off, size = data_chunk
    if off + size > len(data):
        raise TruncatedData(f"data chunk declares {size} bytes, {len(data) - off} present")
    frame_bytes = channels * dtype.itemsize
    num_frames = size // frame_bytes
    if num_frames == 0:
        raise TruncatedData("data chunk holds no complete frame")

    raw = np.frombuffer(data, dtype=dtype, count=num_frames * channels, offset=off)
    if sample_format == "pcm":
        samples = raw.astype(np.float64) / float(2 ** (bits - 1))
    else:
        samples = np.clip(raw.astype(np.float64), -1.0, 1.0)
    if channels > 1:
        samples = samples.reshape(num_frames, channels).mean(axis=1)

    info = WavFormatInfo(channels, bits, sample_format, rate, num_frames)
    clip = AudioClip(samples=samples, sample_rate=rate, source_path=source_path)
    clip.validate()
    return info, clip


def encode_wav_pcm16(clip: AudioClip) -> bytes:
    """Encode a mono clip as canonical 44-byte-header 16-bit PCM.

    Quantization: round(x * 2^15) clamped to the int16 range, so a
    parse round-trip reproduces amplitudes within 1/32768.
    """
    q = np.round(clip.samples * 32768.0)
    q = np.clip(q, -32768, 32767).astype("<i2")
    payload = q.tobytes()
    rate = clip.sample_rate
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, rate, rate * 2, 2, 16)
    header += b"data" + struct.pack("<I", len(payload))
    return header + payload


def write_wav_pcm16(path: str, clip: AudioClip) -> None:
    with open(path, "wb") as f:
        f.write(encode_wav_pcm16(clip))


def read_wav(path: str) -> AudioClip:
    with open(path, "rb") as f:
        data = f.read()
    _, clip = parse_wav(data, source_path=path)
    return clip


def resample_linear(clip: AudioClip, target_rate: int) -> AudioClip:
    """Resample by linear interpolation onto the target uniform grid.

    Output length is ceil(n * target / source); identical rates return the
    clip unchanged. Interpolation is convex, so the output range stays
    within [min(input), max(input)].
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    n = len(clip.samples)
    out_len = -(-n * target_rate // clip.sample_rate)  # ceil for positive ints
    positions = np.arange(out_len, dtype=np.float64) * (clip.sample_rate / target_rate)
    out = np.interp(positions, np.arange(n, dtype=np.float64), clip.samples)
    return AudioClip(samples=out, sample_rate=target_rate, source_path=clip.source_path)
