"""Signal metrics reported by ``waveguide analyze``.

Each metric yields one ``metric=value unit`` line. A metric that cannot be
measured reports ``metric=unvoiced`` or ``metric=error:<reason>`` instead of
raising, so one bad metric never hides the others.
"""

from __future__ import annotations

import re

import numpy as np
from scipy import signal as sps

from .calibration import UnvoicedError, estimate_f0, partial_decays
from .sdn import RT60Error, sdn_rt60

__all__ = ["METRICS", "analyze_signal", "parse_report"]

METRICS = ("f0", "partial_decay", "rt60", "spectrum")
N_PARTIALS = 8
N_PEAKS = 5


def _slug(message: str) -> str:
    return re.sub(r"[^A-Za-z0-9.+-]+", "_", str(message)).strip("_").lower() or "failed"


def _f0(x, fs):
    return f"{estimate_f0(x, fs):.4f} hz"


def _partial_decay(x, fs):
    rows = partial_decays(x, fs, estimate_f0(x, fs), N_PARTIALS)
    if rows.size == 0:
        raise ValueError("no partials below nyquist")
    return ",".join(f"{a:.4f}" for a in rows[:, 1]) + " 1/s"


def _rt60(x, fs):
    return f"{sdn_rt60(x, fs):.4f} s"


def _spectrum(x, fs):
    """Frequencies of the strongest spectral peaks, strongest first."""
    if not np.any(x):
        raise ValueError("signal is silent")
    nfft = 1 << max(12, (len(x) - 1).bit_length())
    mag = np.abs(np.fft.rfft(x * np.hanning(len(x)), nfft))
    peaks, _ = sps.find_peaks(mag)
    if peaks.size == 0:
        raise ValueError("no spectral peaks")
    top = peaks[np.argsort(mag[peaks])[::-1][:N_PEAKS]]
    return ",".join(f"{k * fs / nfft:.2f}" for k in top) + " hz"


_FUNCS = {"f0": _f0, "partial_decay": _partial_decay, "rt60": _rt60, "spectrum": _spectrum}


def analyze_signal(x: np.ndarray, fs: int, metrics=METRICS) -> list[str]:
    lines = []
    for name in metrics:
        if name not in _FUNCS:
            raise ValueError(f"unknown metric {name!r}; choose from {', '.join(METRICS)}")
        try:
            lines.append(f"{name}={_FUNCS[name](x, fs)}")
        except UnvoicedError:
            lines.append(f"{name}=unvoiced")
        except (ValueError, RT60Error, FloatingPointError) as exc:
            lines.append(f"{name}=error:{_slug(exc)}")
    return lines


def parse_report(text: str) -> dict:
    """Inverse of the report format: ``{metric: (value, unit)}``."""
    out = {}
    for line in text.splitlines():
        if "=" not in line:
            continue
        key, _, rest = line.partition("=")
        value, _, unit = rest.partition(" ")
        out[key.strip()] = (value, unit.strip())
    return out
