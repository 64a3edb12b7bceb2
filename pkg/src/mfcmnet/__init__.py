"""Audio deepfake detection engine.

Pipeline: RIFF/WAVE decoding -> mel-spectrogram / MFCC front end -> a small
MobileNetV2-style backbone with a multi-frequency channel attention block ->
binary real/fake classifier, plus a training and evaluation harness.
"""

__version__ = "0.1.0"

from mfcmnet.wavio import AudioClip, parse_wav, resample_linear  # noqa: F401
