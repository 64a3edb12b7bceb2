"""Manifest discovery, CSV manifests, synthetic corpus generation."""

import os

import numpy as np
import pytest

from mfcmnet import data, wavio
from mfcmnet.data import EmptyClass, Manifest, ManifestEntry, ManifestError, MissingSplit

from conftest import write_tone_wav


def build_tree(root, layout):
    """layout: {split: {label: [names]}}"""
    for split, classes in layout.items():
        for label, names in classes.items():
            d = root / split / label
            d.mkdir(parents=True, exist_ok=True)
            for name in names:
                write_tone_wav(d / name)


FULL = {
    "training": {"real": ["b.wav", "a.wav"], "fake": ["x.wav"]},
    "validation": {"real": ["v.wav"], "fake": ["w.wav"]},
    "testing": {"real": ["t.wav"], "fake": ["u.wav"]},
}


def test_load_manifest_walks_lexicographically(tmp_path):
    build_tree(tmp_path, FULL)
    m = data.load_manifest(tmp_path)
    assert len(m) == 7
    first_two = [os.path.basename(e.path) for e in m.entries[:2]]
    assert first_two == ["a.wav", "b.wav"]  # sorted within the class dir
    assert m.counts()["training"] == {"real": 2, "fake": 1}
    assert all(e.split in data.SPLITS and e.label in data.LABELS for e in m.entries)


def test_load_manifest_ignores_non_wav(tmp_path):
    build_tree(tmp_path, FULL)
    (tmp_path / "training" / "real" / "notes.txt").write_text("x")
    (tmp_path / "training" / "real" / "c.WAV").write_bytes(
        (tmp_path / "training" / "real" / "a.wav").read_bytes()
    )
    m = data.load_manifest(tmp_path)
    names = [os.path.basename(e.path) for e in m.split_entries("training")]
    assert "notes.txt" not in names
    assert "c.WAV" in names  # extension match is case-insensitive


def test_load_manifest_missing_split(tmp_path):
    layout = {k: v for k, v in FULL.items() if k != "validation"}
    build_tree(tmp_path, layout)
    with pytest.raises(MissingSplit):
        data.load_manifest(tmp_path)


def test_load_manifest_empty_class(tmp_path):
    build_tree(tmp_path, FULL)
    for f in (tmp_path / "testing" / "fake").iterdir():
        f.unlink()
    with pytest.raises(EmptyClass):
        data.load_manifest(tmp_path)


def test_manifest_entry_label_index():
    assert ManifestEntry("x", "training", "fake").label_index == 1
    assert ManifestEntry("x", "training", "real").label_index == 0


def test_manifest_validation(tmp_path):
    p = write_tone_wav(tmp_path / "a.wav")
    with pytest.raises(ManifestError):
        Manifest([ManifestEntry(p, "train", "real")])  # unknown split
    with pytest.raises(ManifestError):
        Manifest([ManifestEntry(p, "training", "genuine")])  # unknown label
    with pytest.raises(ManifestError):
        Manifest([ManifestEntry(p, "training", "real")] * 2)  # duplicate
    with pytest.raises(ManifestError):
        Manifest([ManifestEntry(str(tmp_path / "ghost.wav"), "training", "real")])
    m = Manifest([ManifestEntry(p, "training", "real")])
    with pytest.raises(ManifestError):
        m.split_entries("train")


def test_load_manifest_csv(tmp_path):
    a = write_tone_wav(tmp_path / "a.wav")
    sub = tmp_path / "sub"
    sub.mkdir()
    write_tone_wav(sub / "b.wav")
    csv_path = tmp_path / "manifest.csv"
    csv_path.write_text(
        "path,split,label\n"
        f"{a},training,real\n"
        "sub/b.wav,testing,fake\n"  # relative to the CSV directory
    )
    m = data.load_manifest_csv(csv_path)
    assert len(m) == 2
    assert m.entries[1].path == str(sub / "b.wav")
    assert m.entries[1].label_index == 1


def test_load_manifest_csv_rejects_bad_shapes(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("file,split,label\n")
    with pytest.raises(ManifestError):
        data.load_manifest_csv(p)
    p.write_text("path,split,label\n")
    with pytest.raises(ManifestError):
        data.load_manifest_csv(p)  # no rows
    p.write_text("path,split,label\nx.wav,training\n")
    with pytest.raises(ManifestError):
        data.load_manifest_csv(p)


def test_synthetic_corpus_layout(corpus):
    root, manifest = corpus
    counts = manifest.counts()
    assert counts["training"] == {"real": 16, "fake": 16}
    assert counts["validation"] == {"real": 2, "fake": 2}
    assert counts["testing"] == {"real": 2, "fake": 2}
    assert len(manifest) == 40
    # every file is a parseable 0.5 s mono clip
    clip = wavio.read_wav(manifest.entries[0].path)
    assert clip.sample_rate == 16000
    assert len(clip.samples) == 8000
    assert np.abs(clip.samples).max() <= 1.0


def test_synthetic_corpus_deterministic(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    ma = data.make_synthetic_corpus(a, train_per_class=2, val_per_class=1, test_per_class=1)
    mb = data.make_synthetic_corpus(b, train_per_class=2, val_per_class=1, test_per_class=1)
    for ea, eb in zip(ma.entries, mb.entries):
        assert os.path.basename(ea.path) == os.path.basename(eb.path)
        with open(ea.path, "rb") as fa, open(eb.path, "rb") as fb:
            assert fa.read() == fb.read()


def test_synthetic_classes_are_separable_in_waveform():
    # sines have low zero-crossing rates, modulated noise crosses constantly
    import tempfile

    with tempfile.TemporaryDirectory() as td:
        m = data.make_synthetic_corpus(td, train_per_class=4, val_per_class=1, test_per_class=1)
        rates = {"real": [], "fake": []}
        for e in m.split_entries("training"):
            x = wavio.read_wav(e.path).samples
            rates[e.label].append(float(np.mean(np.abs(np.diff(np.signbit(x))))))
        assert max(rates["real"]) < min(rates["fake"])
