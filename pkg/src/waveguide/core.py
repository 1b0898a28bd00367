"""Delay lines, fractional-delay interpolators and small IIR/FIR loop filters.

Everything here runs in float64. Delay lines use write-then-read ordering:
``read(0)`` is the sample written on the current tick.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

__all__ = [
    "DelayLine",
    "FractionalDelay",
    "LoopFilter",
    "lagrange_coefficients",
    "lagrange_window",
    "allpass_coefficient",
    "filter_phase_delay",
    "delay_line_tick",
]

_WINDOW_TOL = 1e-12


class DelayLine:
    """Circular buffer with an exact semantic capacity.

    Internally the buffer is rounded up to a power of two so indexing is a
    mask; only the last ``capacity`` samples are ever readable.
    """

    def __init__(self, capacity: int):
        if int(capacity) != capacity or capacity < 1:
            raise ValueError(f"capacity must be an integer >= 1, got {capacity!r}")
        self.capacity = int(capacity)
        size = 1 << max(0, (self.capacity - 1).bit_length())
        self._mask = size - 1
        self._buf = [0.0] * size
        self.write_index = 0

    @property
    def buffer(self) -> np.ndarray:
        """Readable contents, newest first (``buffer[d]`` is ``read(d)``)."""
        return np.array([self.read(d) for d in range(self.capacity)], dtype=np.float64)

    def write(self, x: float) -> None:
        self.write_index = (self.write_index + 1) & self._mask
        self._buf[self.write_index] = float(x)

    def read(self, delay: int) -> float:
        if delay < 0 or delay >= self.capacity:
            raise IndexError(f"delay {delay} outside [0, {self.capacity - 1}]")
        return self._buf[(self.write_index - delay) & self._mask]

    def tick(self, x: float, read_delay: float = 0, interp: FractionalDelay | None = None) -> float:
        self.write(x)
        if interp is None:
            d = int(read_delay)
            if d != read_delay:
                raise ValueError("fractional read_delay needs an interpolator")
            return self.read(d)
        return interp.read(self)

    def reset(self) -> None:
        self._buf = [0.0] * len(self._buf)
        self.write_index = 0


def lagrange_window(order: int) -> tuple[float, float]:
    """Centered validity interval for the fractional part of a Lagrange read."""
    return (order - 1) / 2.0, (order + 1) / 2.0


def lagrange_coefficients(order: int, delay: float) -> np.ndarray:
    """FIR taps ``h_k = prod_{m != k} (delay - m) / (k - m)`` for k = 0..order.

    ``delay`` is measured from tap 0 and must lie in the centered window
    ``[(order-1)/2, (order+1)/2]``.
    """
    if int(order) != order or not 1 <= order <= 5:
        raise ValueError(f"Lagrange order must be an integer in 1..5, got {order!r}")
    lo, hi = lagrange_window(order)
    if not (lo - _WINDOW_TOL <= delay <= hi + _WINDOW_TOL):
        raise ValueError(
            f"delay {delay!r} outside the valid interval [{lo}, {hi}] for order {order}"
        )
    taps = np.ones(order + 1)
    for k in range(order + 1):
        for m in range(order + 1):
            if m != k:
                taps[k] *= (delay - m) / (k - m)
    return taps


def allpass_coefficient(fractional_delay: float) -> float:
    """First-order Thiran coefficient ``a = (1 - d) / (1 + d)`` for d in (0, 1]."""
    d = fractional_delay
    if not (0.0 < d <= 1.0):
        raise ValueError(
            f"allpass fractional delay must be in (0, 1], got {d!r}; "
            "absorb the integer part into the delay line"
        )
    return (1.0 - d) / (1.0 + d)


@dataclass
class FractionalDelay:
    """Interpolated read of a delay line at a real-valued delay.

    ``delay`` is the total delay in samples. It splits into an integer
    ``base`` (taken from the delay line) and a fractional remainder that the
    interpolator realizes: a centered Lagrange FIR of the given order, or a
    first-order allpass.
    """

    kind: str = "lagrange"
    order: int = 1
    delay: float = 0.0
    base: int = field(init=False)
    fraction: float = field(init=False)
    coefficients: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError(f"delay must be nonnegative, got {self.delay!r}")
        if self.kind == "lagrange":
            lo, _ = lagrange_window(self.order)
            self.base = math.floor(self.delay - lo)
            if self.base < 0:
                raise ValueError(
                    f"delay {self.delay} too short for order-{self.order} Lagrange "
                    f"(minimum {lo})"
                )
            self.fraction = self.delay - self.base
            self.coefficients = lagrange_coefficients(self.order, self.fraction)
        elif self.kind == "allpass":
            if self.order != 1:
                raise ValueError("allpass interpolation is first order only")
            if self.delay <= 0:
                raise ValueError("allpass interpolation needs a positive delay")
            self.base = math.ceil(self.delay) - 1
            self.fraction = self.delay - self.base
            self.coefficients = np.array([allpass_coefficient(self.fraction)])
        else:
            raise ValueError(f"unknown interpolator kind {self.kind!r}")
        self._taps = [float(c) for c in self.coefficients]
        self._y1 = 0.0

    @classmethod
    def lagrange(cls, delay: float, order: int = 3) -> FractionalDelay:
        return cls("lagrange", order, delay)

    @classmethod
    def allpass(cls, delay: float) -> FractionalDelay:
        return cls("allpass", 1, delay)

    @property
    def span(self) -> int:
        """Largest integer delay the read touches."""
        return self.base + (self.order if self.kind == "lagrange" else 1)

    def read(self, line: DelayLine) -> float:
        if self.span > line.capacity - 1:
            raise ValueError(
                f"read delay {self.delay} needs capacity {self.span + 1}, "
                f"line has {line.capacity}"
            )
        if self.kind == "lagrange":
            b = self.base
            acc = 0.0
            for k, h in enumerate(self._taps):
                acc += h * line.read(b + k)
            return acc
        a = self._taps[0]
        y = a * line.read(self.base) + line.read(self.base + 1) - a * self._y1
        self._y1 = y
        return y

    def reset(self) -> None:
        self._y1 = 0.0

    def transfer_function(self) -> tuple[np.ndarray, np.ndarray]:
        """(b, a) polynomials in z^-1, including the integer base delay."""
        if self.kind == "lagrange":
            b = np.concatenate([np.zeros(self.base), self.coefficients])
            return b, np.array([1.0])
        a = self.coefficients[0]
        return np.concatenate([np.zeros(self.base), [a, 1.0]]), np.array([1.0, a])


def delay_line_tick(line: DelayLine, x: float, read_delay: float, interp: FractionalDelay | None = None) -> float:
    """Write ``x``, then return the (interpolated) sample ``read_delay`` ticks back."""
    if interp is not None and not math.isclose(interp.delay, read_delay, abs_tol=1e-12):
        raise ValueError("interpolator delay does not match read_delay")
    if interp is None and read_delay > line.capacity - 1:
        raise ValueError(f"read_delay {read_delay} exceeds capacity {line.capacity}")
    return line.tick(x, read_delay, interp)


def _stable(a: np.ndarray) -> bool:
    """All roots of ``a`` (a[0] == 1) strictly inside the unit circle."""
    a = np.trim_zeros(np.asarray(a, dtype=np.float64), "b")
    n = len(a) - 1
    if n == 0:
        return True
    if n == 1:
        return abs(a[1]) < 1.0
    if n == 2:
        return abs(a[2]) < 1.0 and abs(a[1]) < 1.0 + a[2]
    # step-down recursion: every reflection coefficient must have |k| < 1
    poly = a / a[0]
    while len(poly) > 1:
        k = poly[-1]
        if abs(k) >= 1.0:
            return False
        poly = (poly[:-1] - k * poly[::-1][:-1]) / (1.0 - k * k)
    return True


class LoopFilter:
    """Rational filter ``B(z)/A(z)`` in z^-1 with running state.

    Used for loss filters inside feedback loops and for termination
    reflections. Construction rejects unstable denominators.
    """

    def __init__(self, feedforward, feedback=(1.0,)):
        b = np.atleast_1d(np.asarray(feedforward, dtype=np.float64))
        a = np.atleast_1d(np.asarray(feedback, dtype=np.float64))
        if b.size == 0 or a.size == 0 or a[0] == 0:
            raise ValueError("filter needs nonempty coefficients and a[0] != 0")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(a))):
            raise ValueError("filter coefficients must be finite")
        self.feedforward = b / a[0]
        self.feedback = a / a[0]
        if not _stable(self.feedback):
            raise ValueError(f"unstable filter: poles of {self.feedback.tolist()} not inside unit circle")
        n = max(len(self.feedforward), len(self.feedback))
        self._b = np.pad(self.feedforward, (0, n - len(self.feedforward))).tolist()
        self._a = np.pad(self.feedback, (0, n - len(self.feedback))).tolist()
        self.state = [0.0] * (n - 1)

    @classmethod
    def identity(cls) -> LoopFilter:
        return cls([1.0])

    @classmethod
    def averager(cls) -> LoopFilter:
        """Two-point average ``(1 + z^-1) / 2``."""
        return cls([0.5, 0.5])

    @classmethod
    def one_pole(cls, pole: float) -> LoopFilter:
        """Unity-DC-gain lowpass ``(1 - p) / (1 - p z^-1)``."""
        return cls([1.0 - pole], [1.0, -pole])

    @classmethod
    def unit_delay(cls) -> LoopFilter:
        return cls([0.0, 1.0])

    def __repr__(self):
        return f"LoopFilter({self.feedforward.tolist()}, {self.feedback.tolist()})"

    @property
    def order(self) -> int:
        return max(len(self.feedforward), len(self.feedback)) - 1

    def copy(self) -> LoopFilter:
        return LoopFilter(self.feedforward, self.feedback)

    def scaled(self, gain: float) -> LoopFilter:
        return LoopFilter(gain * self.feedforward, self.feedback)

    def cascade(self, other: LoopFilter) -> LoopFilter:
        return LoopFilter(
            np.convolve(self.feedforward, other.feedforward),
            np.convolve(self.feedback, other.feedback),
        )

    def response(self, omega) -> np.ndarray:
        """Complex frequency response at normalized radian frequency ``omega``."""
        _, h = signal.freqz(self.feedforward, self.feedback, worN=np.atleast_1d(omega))
        return h if np.ndim(omega) else h[0]

    def magnitude(self, frequency_hz, sample_rate_hz: float):
        return np.abs(self.response(2 * np.pi * np.asarray(frequency_hz) / sample_rate_hz))

    def phase_delay(self, frequency_hz: float, sample_rate_hz: float) -> float:
        return filter_phase_delay(self, frequency_hz, sample_rate_hz)

    def tick(self, x: float) -> float:
        # transposed direct form II
        b, a, s = self._b, self._a, self.state
        y = b[0] * x + (s[0] if s else 0.0)
        n = len(s)
        for i in range(n - 1):
            s[i] = b[i + 1] * x - a[i + 1] * y + s[i + 1]
        if n:
            s[n - 1] = b[n] * x - a[n] * y
        return y

    def process(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if not self.state:
            return self._b[0] * x
        y, zf = signal.lfilter(self._b, self._a, x, zi=np.array(self.state))
        self.state = zf.tolist()
        return y

    def reset(self) -> None:
        self.state = [0.0] * len(self.state)


def filter_phase_delay(filt: LoopFilter, frequency_hz: float, sample_rate_hz: float) -> float:
    """Phase delay ``-arg H(e^{jw}) / w`` in samples.

    The phase is unwrapped along a grid from near DC up to the evaluation
    frequency so the result is continuous in frequency.
    """
    nyquist = sample_rate_hz / 2.0
    if not (0.0 < frequency_hz < nyquist):
        raise ValueError(
            f"frequency {frequency_hz} Hz must lie in (0, {nyquist}) for fs={sample_rate_hz}"
        )
    w = 2 * np.pi * frequency_hz / sample_rate_hz
    grid = np.linspace(w * 1e-3, w, 257)
    _, h = signal.freqz(filt.feedforward, filt.feedback, worN=grid)
    phase = np.unwrap(np.angle(h))
    # anchor the unwrapped branch at DC
    phase -= 2 * np.pi * np.round(phase[0] / (2 * np.pi))
    return float(-phase[-1] / w)
