"""Dataset manifests for the training/validation/testing x real/fake
directory layout, a CSV manifest alternative, and a small synthetic corpus
generator used by the overfit experiment.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from mfcmnet import wavio

SPLITS = ("training", "validation", "testing")
LABELS = ("real", "fake")


class ManifestError(Exception):
    pass


class MissingSplit(ManifestError):
    pass


class EmptyClass(ManifestError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    split: str
    label: str

    @property
    def label_index(self) -> int:
        return 1 if self.label == "fake" else 0


class Manifest:
    def __init__(self, entries: list[ManifestEntry]):
        seen = set()
        for e in entries:
            if e.split not in SPLITS:
                raise ManifestError(f"unknown split {e.split!r} for {e.path}")
            if e.label not in LABELS:
                raise ManifestError(f"unknown label {e.label!r} for {e.path}")
            if e.path in seen:
                raise ManifestError(f"duplicate path {e.path}")
            seen.add(e.path)
            if not os.path.isfile(e.path):
                raise ManifestError(f"manifest entry does not exist: {e.path}")
        self.entries = list(entries)

    def split_entries(self, split: str) -> list[ManifestEntry]:
        if split not in SPLITS:
            raise ManifestError(f"unknown split {split!r}")
        return [e for e in self.entries if e.split == split]

    def counts(self) -> dict:
        out = {s: {lab: 0 for lab in LABELS} for s in SPLITS}
        for e in self.entries:
            out[e.split][e.label] += 1
        return out

    def __len__(self) -> int:
        return len(self.entries)


def load_manifest(root) -> Manifest:
    """Walk root/{training,validation,testing}/{real,fake}/*.wav in
    lexicographic order."""
    root = os.fspath(root)
    entries = []
    for split in SPLITS:
        split_dir = os.path.join(root, split)
        if not os.path.isdir(split_dir):
            raise MissingSplit(f"missing split directory: {split_dir}")
        for label in LABELS:
            class_dir = os.path.join(split_dir, label)
            if not os.path.isdir(class_dir):
                raise EmptyClass(f"missing class directory: {class_dir}")
            names = sorted(n for n in os.listdir(class_dir) if n.lower().endswith(".wav"))
            if not names:
                raise EmptyClass(f"no .wav files under {class_dir}")
            entries.extend(ManifestEntry(os.path.join(class_dir, n), split, label) for n in names)
    return Manifest(entries)


def load_manifest_csv(path) -> Manifest:
    """CSV manifest with header `path,split,label`; relative paths are
    resolved against the CSV's own directory."""
    path = os.fspath(path)
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["path", "split", "label"]:
            raise ManifestError(f"expected header path,split,label; got {header}")
        for row in reader:
            if not row:
                continue
            if len(row) != 3:
                raise ManifestError(f"malformed manifest row: {row}")
            p, split, label = (c.strip() for c in row)
            if not os.path.isabs(p):
                p = os.path.join(base, p)
            entries.append(ManifestEntry(p, split, label))
    if not entries:
        raise ManifestError(f"manifest {path} is empty")
    return Manifest(entries)


def make_synthetic_corpus(
    root,
    train_per_class: int = 16,
    val_per_class: int = 2,
    test_per_class: int = 2,
    sample_rate: int = 16000,
    duration: float = 0.5,
    seed: int = 1337,
) -> Manifest:
    """Write a small labeled corpus: pure sine tones as "real" speech
    stand-ins, amplitude-modulated white noise as "fake"."""
    root = os.fspath(root)
    rng = np.random.default_rng(seed)
    n = int(round(sample_rate * duration))
    t = np.arange(n) / sample_rate
    sizes = {"training": train_per_class, "validation": val_per_class, "testing": test_per_class}
    for split in SPLITS:
        for label in LABELS:
            class_dir = os.path.join(root, split, label)
            os.makedirs(class_dir, exist_ok=True)
            for i in range(sizes[split]):
                if label == "real":
                    freq = float(rng.uniform(200.0, 2000.0))
                    phase = float(rng.uniform(0, 2 * np.pi))
                    x = 0.8 * np.sin(2 * np.pi * freq * t + phase)
                else:
                    mod_freq = float(rng.uniform(2.0, 8.0))
                    noise = rng.standard_normal(n)
                    noise /= max(np.max(np.abs(noise)), 1e-9)
                    envelope = 0.5 + 0.5 * np.sin(2 * np.pi * mod_freq * t)
                    x = 0.8 * noise * envelope
                clip = wavio.AudioClip(x.astype(np.float64), sample_rate)
                wavio.write_wav_pcm16(os.path.join(class_dir, f"{label}_{i:03d}.wav"), clip)
    return load_manifest(root)
