"""WAV loading: decode, downmix to mono, resample to the encoder rate."""

from __future__ import annotations

import math

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .encoder import SAMPLE_RATE


class AudioDecodeError(RuntimeError):
    pass


def load_waveform(path, target_rate=SAMPLE_RATE):
    """Returns a mono float64 waveform in [-1, 1] at target_rate."""
    try:
        rate, data = wavfile.read(path)
    except Exception as e:
        raise AudioDecodeError(f"{path}: {e}") from e
    if data.size == 0:
        raise AudioDecodeError(f"{path}: empty audio stream")
    data = np.asarray(data)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if np.issubdtype(data.dtype, np.integer):
        scale = float(np.iinfo(data.dtype).max)
        data = data.astype(np.float64) / scale
    else:
        data = data.astype(np.float64)
    if rate != target_rate:
        g = math.gcd(int(rate), int(target_rate))
        data = resample_poly(data, target_rate // g, rate // g)
    if not np.all(np.isfinite(data)):
        raise AudioDecodeError(f"{path}: non-finite samples after decode")
    return data
