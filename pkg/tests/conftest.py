"""Shared fixtures: a small synthetic corpus and a throwaway trained model.

Both are session-scoped because corpus generation writes 44 wav files and
training even a tiny model costs a few seconds; every consumer treats them
as read-only.
"""

import os

import numpy as np
import pytest

from mfcmnet import data, dsp
from mfcmnet.model import micro_config
from mfcmnet.training import TrainConfig, train


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    manifest = data.make_synthetic_corpus(root)
    return root, manifest


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory, corpus):
    """A 2-epoch 24x24 training run; fixtures downstream reuse its checkpoint."""
    _, manifest = corpus
    out = tmp_path_factory.mktemp("tiny_run")
    ckpt = os.path.join(out, "model.mfck")
    cfg = micro_config(24, 24)
    tc = TrainConfig(batch_size=8, epochs=2, learning_rate=1e-3, seed=11,
                     img_height=24, img_width=24, checkpoint=ckpt)
    result = train(manifest, cfg, tc, dsp.DspConfig())
    return result, manifest


def write_tone_wav(path, freq=440.0, sample_rate=16000, duration=0.25, amp=0.5):
    from mfcmnet import wavio

    t = np.arange(int(sample_rate * duration)) / sample_rate
    clip = wavio.AudioClip(amp * np.sin(2 * np.pi * freq * t), sample_rate)
    wavio.write_wav_pcm16(os.fspath(path), clip)
    return os.fspath(path)
