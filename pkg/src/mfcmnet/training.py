"""Training loop, optimizer, feature pipeline, and evaluation harness.

Features are computed on the fly from wav files (mel spectrogram, dB,
resize, 3-channel replication) with an in-memory cache and an optional
on-disk tensor cache; cached and uncached runs produce bit-identical
results. Training is fully deterministic given (seed, manifest, config).
"""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from mfcmnet import autograd as ag
from mfcmnet import dsp, tensorio, wavio
from mfcmnet.data import Manifest, ManifestEntry
from mfcmnet.metrics import Metrics, confusion, metrics_from_confusion
from mfcmnet.model import (
    CheckpointMismatch,
    ConfigError,
    MfcmNet,
    MfcmNetConfig,
    load_checkpoint,
    save_checkpoint,
)

EPOCH_LOG_HEADER = [
    "epoch",
    "train_loss",
    "val_accuracy",
    "val_precision",
    "val_recall",
    "val_f1_standard",
    "val_f1_paper",
]

SCORE_HEADER = ["path", "score", "prediction", "label"]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 10
    learning_rate: float = 1e-3
    seed: int = 1337
    img_height: int = 224
    img_width: int = 224
    checkpoint: str = "model.mfck"

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.img_height < 4 or self.img_width < 4:
            raise ConfigError("input image dims must be >= 4")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "img_height": self.img_height,
            "img_width": self.img_width,
            "checkpoint": self.checkpoint,
        }


class FeaturePipeline:
    """wav path -> (3, H, W) float32 model input, with caching.

    The disk cache stores each feature tensor in the binary tensor format,
    keyed by a hash of (absolute path, DSP config, target size); float32
    round-trips exactly, so cached results are bit-identical to fresh ones.
    """

    def __init__(self, dsp_cfg: dsp.DspConfig, height: int, width: int, cache_dir=None):
        self.dsp_cfg = dsp_cfg
        self.height = height
        self.width = width
        self.cache_dir = os.fspath(cache_dir) if cache_dir is not None else None
        if self.cache_dir is not None:
            os.makedirs(self.cache_dir, exist_ok=True)
        self._memory: dict[str, np.ndarray] = {}

    def _cache_path(self, path: str) -> str:
        key = f"{os.path.abspath(path)}|{self.dsp_cfg.cache_key()}|{self.height}x{self.width}"
        return os.path.join(self.cache_dir, hashlib.sha256(key.encode()).hexdigest() + ".mfct")

    def features(self, path) -> np.ndarray:
        path = os.fspath(path)
        cached = self._memory.get(path)
        if cached is not None:
            return cached
        if self.cache_dir is not None:
            disk = self._cache_path(path)
            if os.path.isfile(disk):
                arr = tensorio.read_tensor(disk).astype(np.float32, copy=False)
                self._memory[path] = arr
                return arr
        clip = wavio.read_wav(path)
        arr = dsp.clip_to_model_input(clip, self.dsp_cfg, self.height, self.width)
        if self.cache_dir is not None:
            tensorio.write_tensor(self._cache_path(path), arr)
        self._memory[path] = arr
        return arr

    def batch(self, entries: list[ManifestEntry]) -> tuple[np.ndarray, np.ndarray]:
        x = np.stack([self.features(e.path) for e in entries])
        y = np.asarray([[float(e.label_index)] for e in entries], dtype=np.float32)
        return x, y


class Adam:
    def __init__(self, params: list[ag.Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            update = (self.lr * (m / b1t)) / (np.sqrt(v / b2t) + self.eps)
            p.data = p.data - update.astype(p.data.dtype, copy=False)


@dataclass
class TrainResult:
    checkpoint_path: str
    log_path: str | None
    history: list = field(default_factory=list)
    best_val_accuracy: float | None = None
    best_epoch: int | None = None


def _batches(indices: np.ndarray, size: int):
    for start in range(0, len(indices), size):
        yield indices[start : start + size]


def _scores_for(model: MfcmNet, entries: list[ManifestEntry], pipeline: FeaturePipeline,
                batch_size: int) -> list[float]:
    scores = []
    for batch_idx in _batches(np.arange(len(entries)), batch_size):
        chunk = [entries[i] for i in batch_idx]
        x, _ = pipeline.batch(chunk)
        logits = model.forward(x, mode="eval").data.reshape(-1).astype(np.float64)
        scores.extend(1.0 / (1.0 + np.exp(-logits)))
    return scores


def _metrics_for(model: MfcmNet, entries: list[ManifestEntry], pipeline: FeaturePipeline,
                 batch_size: int) -> Metrics:
    scores = _scores_for(model, entries, pipeline, batch_size)
    preds = [1 if s >= 0.5 else 0 for s in scores]
    labels = [e.label_index for e in entries]
    return metrics_from_confusion(confusion(preds, labels))


def train(
    manifest: Manifest,
    model_cfg: MfcmNetConfig,
    train_cfg: TrainConfig,
    dsp_cfg: dsp.DspConfig | None = None,
    log_path=None,
    cache_dir=None,
    progress=None,
) -> TrainResult:
    """Run the full training loop and retain the best-validation-accuracy
    checkpoint (ties resolved toward the later epoch).

    If the manifest has no validation entries the final-epoch model is
    retained and validation columns stay empty. `progress`, when given,
    is called with one line of text per epoch.
    """
    train_cfg.validate()
    model_cfg.validate()
    if dsp_cfg is None:
        dsp_cfg = dsp.DspConfig()
    if tuple(model_cfg.input_shape[1:]) != (train_cfg.img_height, train_cfg.img_width):
        raise ConfigError(
            f"model input {model_cfg.input_shape} disagrees with train config "
            f"{train_cfg.img_height}x{train_cfg.img_width}"
        )
    train_entries = manifest.split_entries("training")
    if not train_entries:
        raise ConfigError("manifest has no training entries")
    val_entries = manifest.split_entries("validation")

    pipeline = FeaturePipeline(dsp_cfg, train_cfg.img_height, train_cfg.img_width, cache_dir=cache_dir)
    model = MfcmNet(model_cfg, seed=train_cfg.seed, dtype=np.float32)
    optimizer = Adam(model.parameters(), lr=train_cfg.learning_rate)
    rng = np.random.default_rng(train_cfg.seed)

    result = TrainResult(checkpoint_path=train_cfg.checkpoint, log_path=log_path)
    best_acc = -1.0
    ckpt_dir = os.path.dirname(train_cfg.checkpoint)
    if ckpt_dir:
        os.makedirs(ckpt_dir, exist_ok=True)

    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(len(train_entries))
        total_loss = 0.0
        for batch_no, batch_idx in enumerate(_batches(order, train_cfg.batch_size)):
            chunk = [train_entries[i] for i in batch_idx]
            x, y = pipeline.batch(chunk)
            try:
                model.zero_grad()
                with ag.Tape() as tape:
                    logits = model.forward(x, mode="train")
                    loss = ag.bce_with_logits(logits, ag.Tensor(y))
                tape.backward(loss)
                optimizer.step()
            except ag.NumericalFault as exc:
                raise ag.NumericalFault(
                    f"epoch {epoch}, batch {batch_no} ({chunk[0].path} ...): {exc}"
                ) from exc
            total_loss += loss.item() * len(chunk)
        train_loss = total_loss / len(train_entries)

        val_metrics = _metrics_for(model, val_entries, pipeline, train_cfg.batch_size) if val_entries else None
        row = {"epoch": epoch, "train_loss": train_loss}
        for name in ("accuracy", "precision", "recall", "f1_standard", "f1_paper"):
            row[f"val_{name}"] = None if val_metrics is None else getattr(val_metrics, name)
        result.history.append(row)
        if progress is not None:
            acc = row["val_accuracy"]
            progress(
                f"epoch {epoch}/{train_cfg.epochs} loss {train_loss:.6f}"
                + (f" val_acc {acc:.4f}" if acc is not None else "")
            )

        if val_metrics is not None and val_metrics.accuracy is not None and val_metrics.accuracy >= best_acc:
            best_acc = val_metrics.accuracy
            result.best_val_accuracy = val_metrics.accuracy
            result.best_epoch = epoch
            save_checkpoint(model, train_cfg.checkpoint)

    if result.best_epoch is None:
        save_checkpoint(model, train_cfg.checkpoint)
        result.best_epoch = train_cfg.epochs
    if log_path is not None:
        write_epoch_log(result.history, log_path)
    return result


@dataclass(frozen=True)
class ScoreRow:
    path: str
    score: float
    prediction: str
    label: str


def evaluate(
    checkpoint,
    manifest: Manifest,
    split: str,
    dsp_cfg: dsp.DspConfig | None = None,
    batch_size: int = 32,
    expected_input_hw: tuple | None = None,
    cache_dir=None,
) -> tuple[Metrics, list[ScoreRow]]:
    """Score one manifest split with a trained model (path or instance)."""
    model = load_checkpoint(checkpoint) if not isinstance(checkpoint, MfcmNet) else checkpoint
    if dsp_cfg is None:
        dsp_cfg = dsp.DspConfig()
    h, w = model.cfg.input_shape[1:]
    if expected_input_hw is not None and tuple(expected_input_hw) != (h, w):
        raise CheckpointMismatch(
            f"checkpoint expects {h}x{w} inputs, run asks for "
            f"{expected_input_hw[0]}x{expected_input_hw[1]}"
        )
    entries = manifest.split_entries(split)
    pipeline = FeaturePipeline(dsp_cfg, h, w, cache_dir=cache_dir)
    scores = _scores_for(model, entries, pipeline, batch_size)
    preds = [1 if s >= 0.5 else 0 for s in scores]
    labels = [e.label_index for e in entries]
    rows = [
        ScoreRow(e.path, float(s), "fake" if p == 1 else "real", e.label)
        for e, s, p in zip(entries, scores, preds)
    ]
    return metrics_from_confusion(confusion(preds, labels)), rows


def infer_file(checkpoint, wav_path, dsp_cfg: dsp.DspConfig | None = None) -> dict:
    """Score a single wav file: {"score": sigmoid logit, "prediction": real|fake}."""
    model = load_checkpoint(checkpoint) if not isinstance(checkpoint, MfcmNet) else checkpoint
    if dsp_cfg is None:
        dsp_cfg = dsp.DspConfig()
    h, w = model.cfg.input_shape[1:]
    clip = wavio.read_wav(wav_path)
    x = dsp.clip_to_model_input(clip, dsp_cfg, h, w)[None]
    logit = float(model.forward(x, mode="eval").data.reshape(-1)[0])
    score = float(1.0 / (1.0 + np.exp(-logit)))
    return {"score": score, "prediction": "fake" if score >= 0.5 else "real"}


def _fmt(value) -> str:
    if value is None:
        return ""
    return f"{value:.9g}"


def write_epoch_log(history: list, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EPOCH_LOG_HEADER)
        for row in history:
            writer.writerow([row["epoch"]] + [_fmt(row[k]) for k in EPOCH_LOG_HEADER[1:]])


def write_score_csv(rows: list, fh) -> None:
    writer = csv.writer(fh)
    writer.writerow(SCORE_HEADER)
    for r in rows:
        writer.writerow([r.path, f"{r.score:.9g}", r.prediction, r.label])
