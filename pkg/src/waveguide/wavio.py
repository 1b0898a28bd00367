"""Mono IEEE-float WAV files."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile

__all__ = ["write_wav", "read_wav"]


def write_wav(path, samples: np.ndarray, sample_rate: int) -> int:
    """Write 32-bit float mono; returns how many samples were clipped to [-1, 1]."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("only mono signals are supported")
    if not np.all(np.isfinite(x)):
        raise ValueError("signal contains non-finite samples")
    clipped = int(np.count_nonzero(np.abs(x) > 1.0))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, int(sample_rate), np.clip(x, -1.0, 1.0).astype("<f4"))
    return clipped


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read any PCM or float WAV as float64 in [-1, 1]; channels are averaged."""
    fs, data = wavfile.read(Path(path))
    if data.dtype.kind == "i":
        x = data.astype(np.float64) / float(2 ** (8 * data.dtype.itemsize - 1))
    elif data.dtype.kind == "u":
        x = (data.astype(np.float64) - 128.0) / 128.0
    else:
        x = data.astype(np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    return x, int(fs)
