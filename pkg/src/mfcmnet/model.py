"""Binary audio classifier: inverted-residual backbone with banded
frequency-channel attention.

The network is a small MobileNetV2-style stack. A stem conv (3x3, stride 2)
feeds a sequence of inverted residual blocks; after a designated stage the
feature map is split into three contiguous frequency bands, each band is
summarized by low-order 2-D DCT coefficients of every channel, and a shared
bottleneck turns those statistics into per-channel sigmoid weights that
rescale the band. Global average pooling and a dense head produce one logit
(positive class = fake).

Checkpoint layout (little-endian):

    magic    4 bytes  b"MFCK"
    version  u8       0x01
    cfg_len  u32
    cfg      JSON-encoded model config, sorted keys
    tensors  repeated: u16 name length, name utf-8, MFCT tensor record

Tensor order is the construction order reported by named_tensors(): stem,
stages in sequence (expand, depthwise, project; conv weight then bn gamma,
beta, running_mean, running_var), attention bottleneck, head.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from mfcmnet import autograd as ag
from mfcmnet import tensorio

CHECKPOINT_MAGIC = b"MFCK"
CHECKPOINT_VERSION = 1


class ConfigError(Exception):
    """Model or run configuration violates its contract."""


class BandTooThin(Exception):
    """Frequency axis too short to split into the requested bands."""


class CheckpointMismatch(Exception):
    """Checkpoint file malformed or incompatible with the requested run."""


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InvertedResidualSpec:
    in_channels: int
    expansion_factor: int
    out_channels: int
    stride: int

    @property
    def hidden_channels(self) -> int:
        return self.in_channels * self.expansion_factor

    @property
    def has_skip(self) -> bool:
        return self.stride == 1 and self.in_channels == self.out_channels

    def validate(self) -> None:
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError(f"channel counts must be positive: {self}")
        if self.expansion_factor < 1:
            raise ConfigError(f"expansion_factor must be >= 1: {self}")
        if self.stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2: {self}")

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "expansion_factor": self.expansion_factor,
            "out_channels": self.out_channels,
            "stride": self.stride,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InvertedResidualSpec":
        return cls(**_checked_keys(d, cls.__name__, {"in_channels", "expansion_factor", "out_channels", "stride"}))


@dataclass(frozen=True)
class MfcaConfig:
    num_bands: int = 3
    dct_coeffs_per_band: int = 4
    reduction_ratio: int = 4
    variant: str = "bottleneck"

    def validate(self) -> None:
        if self.num_bands != 3:
            raise ConfigError(f"num_bands is fixed at 3 (low/mid/high), got {self.num_bands}")
        if self.dct_coeffs_per_band < 1:
            raise ConfigError("dct_coeffs_per_band must be >= 1")
        if self.reduction_ratio < 1:
            raise ConfigError("reduction_ratio must be >= 1")
        if self.variant not in ("bottleneck", "inverse_transform"):
            raise ConfigError(f"unknown attention variant {self.variant!r}")

    def to_dict(self) -> dict:
        return {
            "num_bands": self.num_bands,
            "dct_coeffs_per_band": self.dct_coeffs_per_band,
            "reduction_ratio": self.reduction_ratio,
            "variant": self.variant,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MfcaConfig":
        return cls(**_checked_keys(d, cls.__name__, {"num_bands", "dct_coeffs_per_band", "reduction_ratio", "variant"}))


@dataclass(frozen=True)
class MfcmNetConfig:
    stem_channels: int
    stages: tuple
    mfca: MfcaConfig = field(default_factory=MfcaConfig)
    mfca_after_stage: int = 2  # 1-based stage index
    head_hidden: int = 0  # 0 disables the hidden head layer
    input_shape: tuple = (3, 224, 224)

    def validate(self) -> None:
        if len(self.input_shape) != 3 or self.input_shape[0] != 3:
            raise ConfigError(f"input_shape must be (3, H, W), got {self.input_shape}")
        if self.input_shape[1] < 4 or self.input_shape[2] < 4:
            raise ConfigError(f"input too small for the stem: {self.input_shape}")
        if self.stem_channels < 1:
            raise ConfigError("stem_channels must be >= 1")
        if not self.stages:
            raise ConfigError("at least one stage is required")
        prev = self.stem_channels
        for i, spec in enumerate(self.stages):
            spec.validate()
            if spec.in_channels != prev:
                raise ConfigError(
                    f"stage {i + 1} expects {spec.in_channels} input channels, got {prev} from the previous layer"
                )
            prev = spec.out_channels
        if not any(s.stride == 2 for s in self.stages):
            raise ConfigError("at least one stage must downsample (stride 2)")
        if not 1 <= self.mfca_after_stage <= len(self.stages):
            raise ConfigError(
                f"mfca_after_stage must be in 1..{len(self.stages)}, got {self.mfca_after_stage}"
            )
        if self.head_hidden < 0:
            raise ConfigError("head_hidden must be >= 0")
        self.mfca.validate()
        h, w = self.feature_shape(self.mfca_after_stage)[1:]
        if h < self.mfca.num_bands:
            raise BandTooThin(
                f"feature height {h} at the attention stage cannot split into {self.mfca.num_bands} bands"
            )
        if h < 1 or w < 1:
            raise ConfigError("feature map collapses to zero size; input too small for the stride plan")

    def feature_shape(self, upto_stage: int) -> tuple:
        """(C, H, W) after the stem and the first `upto_stage` stages."""
        _, h, w = self.input_shape
        h = conv_output_size(h, 3, 2, 1)
        w = conv_output_size(w, 3, 2, 1)
        c = self.stem_channels
        for spec in self.stages[:upto_stage]:
            h = conv_output_size(h, 3, spec.stride, 1)
            w = conv_output_size(w, 3, spec.stride, 1)
            c = spec.out_channels
        return c, h, w

    def to_dict(self) -> dict:
        return {
            "stem_channels": self.stem_channels,
            "stages": [s.to_dict() for s in self.stages],
            "mfca": self.mfca.to_dict(),
            "mfca_after_stage": self.mfca_after_stage,
            "head_hidden": self.head_hidden,
            "input_shape": list(self.input_shape),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MfcmNetConfig":
        d = _checked_keys(
            d, cls.__name__,
            {"stem_channels", "stages", "mfca", "mfca_after_stage", "head_hidden", "input_shape"},
        )
        stages = tuple(InvertedResidualSpec.from_dict(s) for s in d.pop("stages"))
        mfca = MfcaConfig.from_dict(d.pop("mfca")) if "mfca" in d else MfcaConfig()
        shape = tuple(d.pop("input_shape")) if "input_shape" in d else (3, 224, 224)
        return cls(stages=stages, mfca=mfca, input_shape=shape, **d)


def _checked_keys(d: dict, what: str, allowed: set) -> dict:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    return dict(d)


def micro_config(height: int = 96, width: int = 96, mfca: MfcaConfig | None = None) -> MfcmNetConfig:
    """Small reference model: stem 8, stages 8->16/s2, 16->16/s1, 16->32/s2,
    attention after stage 2, direct 32->1 head."""
    return MfcmNetConfig(
        stem_channels=8,
        stages=(
            InvertedResidualSpec(8, 2, 16, 2),
            InvertedResidualSpec(16, 2, 16, 1),
            InvertedResidualSpec(16, 2, 32, 2),
        ),
        mfca=mfca if mfca is not None else MfcaConfig(),
        mfca_after_stage=2,
        head_hidden=0,
        input_shape=(3, height, width),
    )


def default_config() -> MfcmNetConfig:
    return micro_config(224, 224)


# ---------------------------------------------------------------------------
# band split and DCT statistics
# ---------------------------------------------------------------------------


def band_rows(height: int, num_bands: int = 3) -> list[int]:
    """Partition `height` rows into contiguous bands; with height = n*q + r,
    the first r bands get q + 1 rows."""
    if height < num_bands:
        raise BandTooThin(f"cannot split {height} rows into {num_bands} bands")
    q, r = divmod(height, num_bands)
    return [q + 1 if b < r else q for b in range(num_bands)]


def split_bands(features, num_bands: int = 3):
    """Split (N, C, H, W) along the frequency axis into contiguous bands.

    Accepts a raw array or an autograd tensor; returns the matching kind.
    """
    if isinstance(features, ag.Tensor):
        heights = band_rows(features.shape[2], num_bands)
        out, start = [], 0
        for h in heights:
            out.append(ag.slice_axis(features, 2, start, start + h))
            start += h
        return out
    arr = np.asarray(features)
    heights = band_rows(arr.shape[2], num_bands)
    out, start = [], 0
    for h in heights:
        out.append(arr[:, :, start : start + h, :])
        start += h
    return out


def zigzag_indices(height: int, width: int) -> np.ndarray:
    """Flat row-major indices of an height x width grid in zigzag order.

    Anti-diagonals d = i + j are walked from the DC corner; even diagonals
    run top-right to bottom-left reversed (i descending), odd ones i
    ascending, matching the classic 8x8 coefficient scan.
    """
    order = []
    for d in range(height + width - 1):
        lo = max(0, d - width + 1)
        hi = min(d, height - 1)
        rows = range(hi, lo - 1, -1) if d % 2 == 0 else range(lo, hi + 1)
        for i in rows:
            order.append(i * width + (d - i))
    return np.asarray(order, dtype=np.intp)


def mfca_statistics(band: ag.Tensor, k: int) -> ag.Tensor:
    """Per-channel low-frequency summary of a band: orthonormal 2-D DCT of
    each h x W map, first k coefficients in zigzag order. k is clipped to
    the map area. Output (N, C, k_eff)."""
    n, c, h, w = band.shape
    k_eff = min(k, h * w)
    spectrum = ag.dct2d_ortho(band)
    flat = ag.reshape(spectrum, (n, c, h * w))
    return ag.gather_last(flat, zigzag_indices(h, w)[:k_eff])


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def _he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2dLayer:
    def __init__(self, spec: ag.ConvSpec, rng: np.random.Generator, dtype, with_bias: bool = False):
        self.spec = spec
        fan_in = (spec.in_channels // spec.groups) * spec.kernel_h * spec.kernel_w
        shape = (spec.out_channels, spec.in_channels // spec.groups, spec.kernel_h, spec.kernel_w)
        self.weight = ag.Tensor(_he_uniform(rng, shape, fan_in, dtype), requires_grad=True)
        self.bias = ag.Tensor(np.zeros(spec.out_channels, dtype=dtype), requires_grad=True) if with_bias else None

    def __call__(self, x: ag.Tensor) -> ag.Tensor:
        return ag.conv2d(x, self.weight, self.bias, self.spec)

    def slots(self, prefix: str) -> list:
        out = [(f"{prefix}.weight", "param", self.weight, None)]
        if self.bias is not None:
            out.append((f"{prefix}.bias", "param", self.bias, None))
        return out


class BatchNorm2dLayer:
    def __init__(self, channels: int, dtype):
        self.gamma = ag.Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = ag.Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.state = ag.BatchNormState(channels, dtype=dtype)

    def __call__(self, x: ag.Tensor, mode: str, update_running: bool) -> ag.Tensor:
        return ag.batchnorm2d(x, self.gamma, self.beta, self.state, mode, update_running=update_running)

    def slots(self, prefix: str) -> list:
        return [
            (f"{prefix}.gamma", "param", self.gamma, None),
            (f"{prefix}.beta", "param", self.beta, None),
            (f"{prefix}.running_mean", "buffer", self.state, "running_mean"),
            (f"{prefix}.running_var", "buffer", self.state, "running_var"),
        ]


class DenseLayer:
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, dtype):
        self.weight = ag.Tensor(_he_uniform(rng, (in_features, out_features), in_features, dtype), requires_grad=True)
        self.bias = ag.Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)

    def __call__(self, x: ag.Tensor) -> ag.Tensor:
        return ag.dense(x, self.weight, self.bias)

    def slots(self, prefix: str) -> list:
        return [
            (f"{prefix}.weight", "param", self.weight, None),
            (f"{prefix}.bias", "param", self.bias, None),
        ]


class ConvBnAct:
    """conv -> batch norm -> optional ReLU6."""

    def __init__(self, spec: ag.ConvSpec, rng, dtype, act: bool = True):
        self.conv = Conv2dLayer(spec, rng, dtype)
        self.bn = BatchNorm2dLayer(spec.out_channels, dtype)
        self.act = act

    def __call__(self, x: ag.Tensor, mode: str, update_running: bool) -> ag.Tensor:
        y = self.bn(self.conv(x), mode, update_running)
        return ag.relu6(y) if self.act else y

    def slots(self, prefix: str) -> list:
        return self.conv.slots(f"{prefix}.conv") + self.bn.slots(f"{prefix}.bn")


class InvertedResidual:
    """expand 1x1 -> depthwise 3x3 (stride) -> linear 1x1 projection,
    with a skip connection when stride is 1 and channels match."""

    def __init__(self, spec: InvertedResidualSpec, rng, dtype):
        self.spec = spec
        hidden = spec.hidden_channels
        self.expand = None
        if spec.expansion_factor > 1:
            self.expand = ConvBnAct(ag.ConvSpec(spec.in_channels, hidden, 1, 1), rng, dtype)
        self.depthwise = ConvBnAct(
            ag.ConvSpec(hidden, hidden, 3, 3, stride=spec.stride, padding=1, groups=hidden), rng, dtype
        )
        self.project = ConvBnAct(ag.ConvSpec(hidden, spec.out_channels, 1, 1), rng, dtype, act=False)

    def __call__(self, x: ag.Tensor, mode: str, update_running: bool) -> ag.Tensor:
        y = x
        if self.expand is not None:
            y = self.expand(y, mode, update_running)
        y = self.depthwise(y, mode, update_running)
        y = self.project(y, mode, update_running)
        if self.spec.has_skip:
            y = ag.add(x, y)
        return y

    def slots(self, prefix: str) -> list:
        out = []
        if self.expand is not None:
            out += self.expand.slots(f"{prefix}.expand")
        out += self.depthwise.slots(f"{prefix}.depthwise")
        out += self.project.slots(f"{prefix}.project")
        return out


class MfcaModule:
    """Banded frequency-channel attention.

    bottleneck variant: per band, channel statistics (k_used zigzag DCT
    coefficients) feed a shared dense(C*k -> C/r) -> ReLU6 -> dense(-> C)
    -> sigmoid excitation whose per-channel weights are broadcast over the
    band. k_used is fixed at construction to min(K, smallest band area) so
    every band fits the shared bottleneck.

    inverse_transform variant: per band, the DCT spectrum is truncated to
    its k lowest zigzag coefficients, inverse transformed, added back to
    the band, and squashed with a sigmoid; parameter-free.
    """

    def __init__(self, channels: int, feature_hw: tuple, cfg: MfcaConfig, rng, dtype):
        cfg.validate()
        self.cfg = cfg
        self.channels = channels
        h_f, w_t = feature_hw
        self.band_heights = band_rows(h_f, cfg.num_bands)
        self.width = w_t
        min_area = min(self.band_heights) * w_t
        self.k_used = min(cfg.dct_coeffs_per_band, min_area)
        self.fc1 = self.fc2 = None
        if cfg.variant == "bottleneck":
            hidden = max(channels // cfg.reduction_ratio, 1)
            self.fc1 = DenseLayer(channels * self.k_used, hidden, rng, dtype)
            self.fc2 = DenseLayer(hidden, channels, rng, dtype)

    def _band_weights(self, band: ag.Tensor) -> ag.Tensor:
        """(N, C) sigmoid channel weights for one band (bottleneck variant)."""
        n, c = band.shape[0], band.shape[1]
        stats = mfca_statistics(band, self.k_used)
        flat = ag.reshape(stats, (n, c * self.k_used))
        z = ag.relu6(self.fc1(flat))
        return ag.sigmoid(self.fc2(z))

    def attention(self, features: ag.Tensor) -> ag.Tensor:
        """Full attention tensor, same shape as features, values in (0, 1)."""
        if features.shape[2] != sum(self.band_heights) or features.shape[3] != self.width:
            raise ag.ShapeMismatch(
                f"attention built for {sum(self.band_heights)}x{self.width} maps, got {features.shape}"
            )
        bands = split_bands(features, self.cfg.num_bands)
        maps = []
        for band, h_b in zip(bands, self.band_heights):
            if self.cfg.variant == "bottleneck":
                w = self._band_weights(band)
                w4 = ag.reshape(w, (band.shape[0], band.shape[1], 1, 1))
                maps.append(ag.broadcast_spatial(w4, h_b, self.width))
            else:
                maps.append(self._inverse_transform_map(band))
        return ag.concat(maps, axis=2)

    def _inverse_transform_map(self, band: ag.Tensor) -> ag.Tensor:
        n, c, h, w = band.shape
        k_eff = min(self.cfg.dct_coeffs_per_band, h * w)
        mask = np.zeros(h * w)
        mask[zigzag_indices(h, w)[:k_eff]] = 1.0
        mask = ag.Tensor(mask.reshape(h, w).astype(band.dtype))
        spectrum = ag.mul(ag.dct2d_ortho(band), mask)
        recon = ag.idct2d_ortho(spectrum)
        return ag.sigmoid(ag.add(band, recon))

    def channel_weights(self, features: np.ndarray) -> list[np.ndarray]:
        """Per-band (N, C) weights, computed off-tape; bottleneck variant only."""
        if self.cfg.variant != "bottleneck":
            raise ValueError("channel weights exist only in the bottleneck variant")
        bands = split_bands(ag.Tensor(np.asarray(features)), self.cfg.num_bands)
        return [self._band_weights(b).data.copy() for b in bands]

    def slots(self, prefix: str) -> list:
        if self.cfg.variant != "bottleneck":
            return []
        return self.fc1.slots(f"{prefix}.fc1") + self.fc2.slots(f"{prefix}.fc2")


def mfca_apply(features: ag.Tensor, attention: ag.Tensor) -> ag.Tensor:
    """Elementwise fusion of features with their attention tensor."""
    if features.shape != attention.shape:
        raise ag.ShapeMismatch(f"features {features.shape} vs attention {attention.shape}")
    return ag.mul(features, attention)


# ---------------------------------------------------------------------------
# the network
# ---------------------------------------------------------------------------


class MfcmNet:
    def __init__(self, cfg: MfcmNetConfig, seed: int = 1337, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.stem = ConvBnAct(ag.ConvSpec(3, cfg.stem_channels, 3, 3, stride=2, padding=1), rng, self.dtype)
        self.stages = [InvertedResidual(s, rng, self.dtype) for s in cfg.stages]
        c_att, h_att, w_att = cfg.feature_shape(cfg.mfca_after_stage)
        self.mfca = MfcaModule(c_att, (h_att, w_att), cfg.mfca, rng, self.dtype)
        c_last = cfg.stages[-1].out_channels
        self.head_hidden = DenseLayer(c_last, cfg.head_hidden, rng, self.dtype) if cfg.head_hidden else None
        self.head_out = DenseLayer(cfg.head_hidden or c_last, 1, rng, self.dtype)

    def forward(self, x, mode: str = "train", attention_mode: str = "mfca", update_running: bool | None = None) -> ag.Tensor:
        """(N, 3, H, W) -> logits (N, 1).

        attention_mode: "mfca" runs the attention module, "ones" forces an
        all-ones attention tensor through the same fusion path, "skip"
        bypasses fusion entirely (backbone-only network).
        """
        if attention_mode not in ("mfca", "ones", "skip"):
            raise ValueError(f"unknown attention_mode {attention_mode!r}")
        if update_running is None:
            update_running = mode == "train"
        if not isinstance(x, ag.Tensor):
            x = ag.Tensor(np.asarray(x))
        if x.data.ndim != 4 or tuple(x.shape[1:]) != tuple(self.cfg.input_shape):
            raise ag.ShapeMismatch(f"input {x.shape} does not match configured shape {self.cfg.input_shape}")
        if x.dtype != self.dtype:
            x = ag.Tensor(x.data.astype(self.dtype))

        h = self.stem(x, mode, update_running)
        for i, stage in enumerate(self.stages, start=1):
            h = stage(h, mode, update_running)
            if i == self.cfg.mfca_after_stage and attention_mode != "skip":
                if attention_mode == "ones":
                    att = ag.Tensor(np.ones_like(h.data))
                else:
                    att = self.mfca.attention(h)
                h = mfca_apply(h, att)
        pooled = ag.global_avg_pool(h)
        if self.head_hidden is not None:
            pooled = ag.relu6(self.head_hidden(pooled))
        return self.head_out(pooled)

    def __call__(self, x, **kw) -> ag.Tensor:
        return self.forward(x, **kw)

    # -- parameter plumbing --------------------------------------------

    def _slots(self) -> list:
        out = self.stem.slots("stem")
        for i, stage in enumerate(self.stages, start=1):
            out += stage.slots(f"stage{i}")
        out += self.mfca.slots("mfca")
        if self.head_hidden is not None:
            out += self.head_hidden.slots("head.hidden")
        out += self.head_out.slots("head.out")
        return out

    def named_parameters(self) -> list:
        return [(name, obj) for name, kind, obj, _ in self._slots() if kind == "param"]

    def parameters(self) -> list:
        return [t for _, t in self.named_parameters()]

    def named_tensors(self) -> list:
        """(name, array) pairs for every parameter and running buffer,
        in the fixed checkpoint order."""
        out = []
        for name, kind, obj, attr in self._slots():
            out.append((name, obj.data if kind == "param" else getattr(obj, attr)))
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters())

    def load_tensors(self, pairs: list) -> None:
        slots = self._slots()
        if len(pairs) != len(slots):
            raise CheckpointMismatch(f"checkpoint has {len(pairs)} tensors, model needs {len(slots)}")
        for (name, arr), (want, kind, obj, attr) in zip(pairs, slots):
            if name != want:
                raise CheckpointMismatch(f"tensor order mismatch: got {name!r}, expected {want!r}")
            arr = np.asarray(arr, dtype=self.dtype)
            if kind == "param":
                if arr.shape != obj.data.shape:
                    raise CheckpointMismatch(f"{name}: shape {arr.shape} != {obj.data.shape}")
                obj.data = arr.copy()
            else:
                if arr.shape != getattr(obj, attr).shape:
                    raise CheckpointMismatch(f"{name}: shape {arr.shape} != {getattr(obj, attr).shape}")
                setattr(obj, attr, arr.copy())


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def config_json_bytes(cfg: MfcmNetConfig) -> bytes:
    return json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":")).encode()


def save_checkpoint(model: MfcmNet, path) -> None:
    cfg_json = config_json_bytes(model.cfg)
    parts = [CHECKPOINT_MAGIC, struct.pack("<B", CHECKPOINT_VERSION), struct.pack("<I", len(cfg_json)), cfg_json]
    for name, arr in model.named_tensors():
        encoded = name.encode()
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(tensorio.encode_tensor(np.asarray(arr)))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path) -> MfcmNet:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointMismatch("not a checkpoint file (bad magic)")
    offset = 4
    (version,) = struct.unpack_from("<B", data, offset)
    offset += 1
    if version != CHECKPOINT_VERSION:
        raise CheckpointMismatch(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    try:
        cfg = MfcmNetConfig.from_dict(json.loads(data[offset : offset + cfg_len].decode()))
        cfg.validate()
    except (ValueError, ConfigError, BandTooThin) as exc:
        raise CheckpointMismatch(f"bad embedded config: {exc}") from exc
    offset += cfg_len

    pairs = []
    while offset < len(data):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset : offset + name_len].decode()
        offset += name_len
        try:
            arr, offset = tensorio.decode_tensor(data, offset)
        except tensorio.TensorFormatError as exc:
            raise CheckpointMismatch(f"bad tensor record {name!r}: {exc}") from exc
        pairs.append((name, arr))
    if not pairs:
        raise CheckpointMismatch("checkpoint holds no tensors")
    model = MfcmNet(cfg, seed=0, dtype=pairs[0][1].dtype)
    model.load_tensors(pairs)
    return model
