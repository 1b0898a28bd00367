"""Waveguide strings: ideal and terminated strings, the filtered delay loop
(extended Karplus-Strong), commuted synthesis and the bowed string.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .core import DelayLine, FractionalDelay, LoopFilter, filter_phase_delay, lagrange_window
from .scattering import StringMedium

__all__ = [
    "Excitation",
    "TravelingWaveLine",
    "TerminationFilter",
    "ideal_string_tick",
    "terminated_string_render",
    "FdlParams",
    "fdl_tune",
    "fdl_transfer_function",
    "fdl_filter",
    "fdl_render",
    "FilteredDelayLoop",
    "commuted_render",
    "FrictionCurve",
    "FrictionTable",
    "BowParams",
    "BowedString",
    "bowed_string_tick",
]


@dataclass
class Excitation:
    """Input signal fed into a string.

    ``noise_burst`` draws uniform samples in [-1, 1] from Python's
    ``random.Random(seed)`` (Mersenne Twister; ``random()`` is stable across
    Python versions), so seeded renders are portable.
    """

    kind: str = "noise_burst"
    length: int | None = None
    seed: int = 0
    payload: np.ndarray | None = None
    amplitude: float = 1.0

    KINDS = ("noise_burst", "pluck_ramp", "impulse", "samples")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown excitation kind {self.kind!r}; expected one of {self.KINDS}")
        if self.kind == "samples" and self.payload is None:
            raise ValueError("samples excitation needs a payload")
        if self.length is not None and self.length < 1:
            raise ValueError("excitation length must be >= 1")

    def samples(self, loop_length: int | None = None) -> np.ndarray:
        if self.kind == "impulse":
            return np.array([self.amplitude])
        if self.kind == "samples":
            return self.amplitude * np.asarray(self.payload, dtype=np.float64)
        n = self.length or loop_length
        if n is None:
            raise ValueError(f"{self.kind} excitation needs a length or a loop length")
        if self.kind == "noise_burst":
            if loop_length is not None and n > loop_length:
                raise ValueError(f"noise burst length {n} exceeds the loop length {loop_length}")
            rng = random.Random(self.seed)
            return self.amplitude * np.array([2.0 * rng.random() - 1.0 for _ in range(n)])
        # pluck_ramp: triangle rising to the midpoint and back
        ramp = 1.0 - np.abs(np.linspace(-1.0, 1.0, n + 2)[1:-1])
        return self.amplitude * ramp


class TravelingWaveLine:
    """A pair of opposite rails holding right-going (v+) and left-going (v-)
    components over ``length`` spatial samples.

    Physical velocity at position m is ``v+[m] + v-[m]``. Reflections at the
    two ends are applied by :meth:`advance`; a rigid end inverts.
    """

    def __init__(self, length: int, medium: StringMedium | None = None, sample_rate: float = 44100.0):
        if int(length) != length or length < 2:
            raise ValueError(f"line length must be an integer >= 2, got {length!r}")
        self.length = int(length)
        self.medium = medium
        self.sample_rate = float(sample_rate)
        self.right_going = DelayLine(self.length)
        self.left_going = DelayLine(self.length)

    @property
    def temporal_step(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def spatial_step(self) -> float | None:
        if self.medium is None:
            return None
        return self.medium.wave_speed * self.temporal_step

    def _check(self, m: int) -> int:
        if int(m) != m or not 0 <= m < self.length:
            raise IndexError(f"position {m} outside [0, {self.length - 1}]")
        return int(m)

    def components(self, m: int) -> tuple[float, float]:
        m = self._check(m)
        return self.right_going.read(m), self.left_going.read(self.length - 1 - m)

    def velocity(self, m: int) -> float:
        vp, vm = self.components(m)
        return vp + vm

    def inject(self, m: int, amplitude: float) -> None:
        """Superpose ``amplitude`` at position m, half into each direction."""
        m = self._check(m)
        half = 0.5 * amplitude
        _add(self.right_going, m, half)
        _add(self.left_going, self.length - 1 - m, half)

    def set_state(self, right: np.ndarray, left: np.ndarray) -> None:
        """Load rails by position (index 0 is the left end for both)."""
        for m in range(self.length):
            _put(self.right_going, m, float(right[m]))
            _put(self.left_going, self.length - 1 - m, float(left[m]))

    def state(self) -> tuple[np.ndarray, np.ndarray]:
        right = np.array([self.right_going.read(m) for m in range(self.length)])
        left = np.array([self.left_going.read(self.length - 1 - m) for m in range(self.length)])
        return right, left

    def energy(self) -> float:
        right, left = self.state()
        return float(np.sum(right**2) + np.sum(left**2))

    def ends(self) -> tuple[float, float]:
        """Waves arriving at the (left, right) terminations."""
        return self.left_going.read(self.length - 1), self.right_going.read(self.length - 1)

    def advance(self, into_left_end: float, into_right_end: float) -> None:
        """Shift both rails one sample, feeding the reflected waves in."""
        self.right_going.write(into_left_end)
        self.left_going.write(into_right_end)


def _add(line: DelayLine, delay: int, x: float) -> None:
    idx = (line.write_index - delay) & line._mask
    line._buf[idx] += x


def _put(line: DelayLine, delay: int, x: float) -> None:
    line._buf[(line.write_index - delay) & line._mask] = x


@dataclass
class TerminationFilter:
    """Reflection at a string end: polarity times a loop filter."""

    filter: LoopFilter = field(default_factory=LoopFilter.identity)
    polarity: str = "inverting"

    def __post_init__(self):
        if self.polarity not in ("inverting", "non_inverting"):
            raise ValueError(f"polarity must be 'inverting' or 'non_inverting', got {self.polarity!r}")
        self._sign = -1.0 if self.polarity == "inverting" else 1.0

    @classmethod
    def rigid(cls) -> TerminationFilter:
        return cls(LoopFilter.identity(), "inverting")

    def reflect(self, x: float) -> float:
        return self._sign * self.filter.tick(x)

    def as_filter(self) -> LoopFilter:
        return self.filter.scaled(self._sign)

    def reset(self) -> None:
        self.filter.reset()


def ideal_string_tick(line: TravelingWaveLine, inject: tuple[int, float] | None = None, pickup: int = 0) -> float:
    """One tick of a lossless string with rigid (inverting) ends.

    Injection happens first, then the pickup reads the physical velocity,
    then both rails advance.
    """
    if inject is not None:
        line.inject(*inject)
    out = line.velocity(pickup)
    at_left, at_right = line.ends()
    line.advance(-at_left, -at_right)
    return out


def terminated_string_render(
    line: TravelingWaveLine,
    bridge: TerminationFilter,
    nut: TerminationFilter,
    excitation: Excitation | np.ndarray,
    pickup: int,
    n_samples: int,
    excite_position: int = 0,
) -> np.ndarray:
    """Render a string whose ends reflect through filters.

    The nut sits at position 0 and the bridge at ``length - 1``. The
    excitation is injected sample by sample at ``excite_position``.
    """
    line._check(pickup)
    line._check(excite_position)
    e = excitation.samples(2 * line.length) if isinstance(excitation, Excitation) else np.asarray(excitation, float)
    e = e.tolist()
    n_exc = len(e)
    out = np.empty(n_samples)
    for n in range(n_samples):
        if n < n_exc and e[n] != 0.0:
            line.inject(excite_position, e[n])
        out[n] = line.velocity(pickup)
        at_left, at_right = line.ends()
        line.advance(nut.reflect(at_left), bridge.reflect(at_right))
    return out


@dataclass
class FdlParams:
    """Filtered delay loop: delay -> loss filter -> gain -> fractional delay -> back to input.

    With ``compensate=False`` the loop length is rounded to ``round(fs/f0)``
    with no interpolator and no correction for the filter's phase delay.
    """

    sample_rate: float = 44100.0
    f0: float = 220.0
    loss_filter: LoopFilter = field(default_factory=LoopFilter.averager)
    loop_gain: float = 0.995
    interp: str = "allpass"
    interp_order: int = 3
    excitation: Excitation = field(default_factory=Excitation)
    duration: float = 1.0
    compensate: bool = True

    def __post_init__(self):
        if not 0 < self.f0 < self.sample_rate / 2:
            raise ValueError(f"f0 must be positive and below fs/2, got {self.f0}")
        if not 0 <= self.loop_gain <= 1:
            raise ValueError(f"loop_gain must lie in [0, 1], got {self.loop_gain}")
        if self.interp not in ("lagrange", "allpass"):
            raise ValueError(f"interp must be 'lagrange' or 'allpass', got {self.interp!r}")
        if self.duration <= 0:
            raise ValueError("duration must be positive")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    def tuning(self) -> tuple[int, float]:
        if not self.compensate:
            return int(round(self.sample_rate / self.f0)), 0.0
        return fdl_tune(self.sample_rate, self.f0, self.loss_filter, self.interp, self.interp_order)

    def interpolator(self) -> FractionalDelay | None:
        n, frac = self.tuning()
        if not self.compensate:
            return None
        if self.interp == "allpass":
            return FractionalDelay.allpass(n + frac)
        return FractionalDelay.lagrange(n + frac, self.interp_order)

    def loop_length(self) -> int:
        return self.tuning()[0]


def fdl_tune(fs: float, f0: float, loss_filter: LoopFilter, interp: str = "allpass", order: int = 3) -> tuple[int, float]:
    """Split the required loop delay ``fs/f0 - phase_delay(loss_filter, f0)``
    into an integer delay-line length and an interpolator fraction.

    The fraction lies in (0, 1] for allpass interpolation and in the
    centered window ``[(order-1)/2, (order+1)/2)`` for Lagrange.
    """
    if not 0 < f0 < fs / 2:
        raise ValueError(f"f0 must be positive and below fs/2, got {f0}")
    total = fs / f0 - filter_phase_delay(loss_filter, f0, fs)
    if total < 2:
        raise ValueError(f"loop delay {total:.4f} samples is not realizable (need >= 2)")
    if interp == "allpass":
        n = math.ceil(total) - 1
    elif interp == "lagrange":
        lo, _ = lagrange_window(order)
        n = math.floor(total - lo)
    else:
        raise ValueError(f"unknown interpolator kind {interp!r}")
    if n < 1:
        raise ValueError(f"loop delay {total:.4f} samples too short for {interp} interpolation")
    return n, total - n


def fdl_transfer_function(params: FdlParams) -> tuple[np.ndarray, np.ndarray]:
    """(b, a) of ``1 / (1 - g z^-N F(z) I(z))`` from loop input to output."""
    n, _ = params.tuning()
    interp = params.interpolator()
    if interp is None:
        ib, ia = np.concatenate([np.zeros(n), [1.0]]), np.array([1.0])
    else:
        ib, ia = interp.transfer_function()
    fb, fa = params.loss_filter.feedforward, params.loss_filter.feedback
    den_ff = np.convolve(fa, ia)
    loop = params.loop_gain * np.convolve(fb, ib)
    a = np.zeros(max(len(den_ff), len(loop)))
    a[: len(den_ff)] += den_ff
    a[: len(loop)] -= loop
    return den_ff, a


def _loop_parts(params: FdlParams) -> tuple[int, np.ndarray, np.ndarray]:
    """Integer delay N and the (b, a) of ``g F(z) I_frac(z)`` without z^-N."""
    n, _ = params.tuning()
    interp = params.interpolator()
    if interp is None:
        ib, ia = np.array([1.0]), np.array([1.0])
    else:
        ib, ia = interp.transfer_function()
        ib = ib[n:]
    b = params.loop_gain * np.convolve(params.loss_filter.feedforward, ib)
    a = np.convolve(params.loss_filter.feedback, ia)
    return n, b, a


def fdl_filter(params: FdlParams, x: np.ndarray, n_samples: int | None = None) -> np.ndarray:
    """Drive the loop with an arbitrary input; output is the loop-input sum.

    Runs block-recursively: within a block shorter than the integer loop
    delay every feedback sample is already known.
    """
    n = params.n_samples if n_samples is None else n_samples
    x = np.asarray(x, dtype=np.float64)
    y = np.zeros(n)
    m = min(n, len(x))
    y[:m] = x[:m]
    delay, b, a = _loop_parts(params)
    v = np.empty(n)
    zi = np.zeros(max(len(a), len(b)) - 1)
    for start in range(0, n, delay):
        stop = min(start + delay, n)
        if start >= delay:
            y[start:stop] += v[start - delay : stop - delay]
        if zi.size:
            v[start:stop], zi = signal.lfilter(b, a, y[start:stop], zi=zi)
        else:
            v[start:stop] = b[0] * y[start:stop]
    return y


def fdl_render(params: FdlParams) -> np.ndarray:
    return fdl_filter(params, params.excitation.samples(params.loop_length()))


class FilteredDelayLoop:
    """Sample-by-sample filtered delay loop, wired from core parts.

    Slow; kept as the reference the vectorized :func:`fdl_filter` is
    checked against.
    """

    def __init__(self, params: FdlParams):
        self.params = params
        self.filter = params.loss_filter.copy()
        self.interp = params.interpolator()
        n, _ = params.tuning()
        span = self.interp.span if self.interp is not None else n
        self.line = DelayLine(span + 1)
        self._n = n
        self._out = 0.0

    def tick(self, x: float) -> float:
        # the line holds g*F(y); interpolation reads it back with the full loop delay
        y = x + self._feedback
        self.line.write(self.params.loop_gain * self.filter.tick(y))
        return y

    @property
    def _feedback(self) -> float:
        # contents were written on earlier ticks only, so look one sample further
        if self.interp is None:
            return self.line.read(self._n - 1) if self._n >= 1 else 0.0
        return self._read_shifted()

    def _read_shifted(self) -> float:
        it = self.interp
        if it.kind == "lagrange":
            return sum(h * self.line.read(it.base - 1 + k) for k, h in enumerate(it._taps))
        a = it._taps[0]
        y = a * self.line.read(it.base - 1) + self.line.read(it.base) - a * it._y1
        it._y1 = y
        return y

    def run(self, x: np.ndarray, n_samples: int) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.empty(n_samples)
        for i in range(n_samples):
            out[i] = self.tick(x[i] if i < len(x) else 0.0)
        return out


def commuted_render(excitation: np.ndarray, string: FdlParams, body_ir: np.ndarray, order: str = "e_string_body") -> np.ndarray:
    """Plucked string through a body, in either order of the convolution cascade.

    ``e_string_body`` drives the string with the excitation and convolves
    the result with the body response. ``ebody_string`` precomputes the
    pluck response ``e * b`` and drives the string with that.
    """
    e = np.asarray(excitation, dtype=np.float64)
    b = np.asarray(body_ir, dtype=np.float64)
    if e.size == 0 or b.size == 0:
        raise ValueError("excitation and body impulse response must be nonempty")
    n = string.n_samples
    if order == "e_string_body":
        y = fdl_filter(string, e, n)
        return np.convolve(y, b)[:n]
    if order == "ebody_string":
        return fdl_filter(string, np.convolve(e, b), n)
    raise ValueError(f"order must be 'e_string_body' or 'ebody_string', got {order!r}")


@dataclass
class FrictionCurve:
    """Bow reflection function rho(v) for differential velocity v.

    Inside the capture region |v| <= w, with w = bow_force / friction_slope,
    rho = 1 and the string sticks to the bow. Outside it the friction term
    rho * v = sign(v) * w * (mu + (1 - mu) * exp(-(|v| - w) / w)) decays
    from w toward mu * w.
    """

    bow_force: float
    friction_slope: float = 1.0
    dynamic_ratio: float = 0.3

    def __call__(self, v: float) -> float:
        w = self.bow_force / self.friction_slope
        if w <= 0.0:
            return 0.0
        av = abs(v)
        if av <= w:
            return 1.0
        mu = self.dynamic_ratio
        return (w / av) * (mu + (1.0 - mu) * math.exp(-(av - w) / w))


class FrictionTable:
    """User-supplied rho(|v|) samples, linearly interpolated and held at the ends."""

    def __init__(self, velocities, rho):
        self.v = np.asarray(velocities, dtype=np.float64)
        self.rho = np.asarray(rho, dtype=np.float64)
        if self.v.ndim != 1 or self.v.shape != self.rho.shape or np.any(np.diff(self.v) <= 0):
            raise ValueError("friction table needs matching, strictly increasing velocity samples")

    def __call__(self, v: float) -> float:
        return float(np.interp(abs(v), self.v, self.rho))


@dataclass
class BowParams:
    bow_velocity: float = 0.2
    bow_force: float = 0.1
    bow_position: float = 0.13
    friction_slope: float = 1.0

    def __post_init__(self):
        if not 0 < self.bow_position < 1:
            raise ValueError(f"bow_position must lie in (0, 1), got {self.bow_position}")
        if self.friction_slope <= 0:
            raise ValueError("friction_slope must be positive")
        if self.bow_force < 0:
            raise ValueError("bow_force must be nonnegative")


class BowedString:
    """String split at the bow into a nut-side and a bridge-side segment.

    The bow is a nonlinear two-port: both outgoing waves equal the wave
    transmitted straight through plus a common correction ``rho(vd) * vd``,
    where ``vd`` is bow velocity minus the incoming string velocity.
    """

    def __init__(self, length: int, bow: BowParams, nut: TerminationFilter | None = None,
                 bridge: TerminationFilter | None = None, friction=None, pickup: int | None = None):
        self.length = int(length)
        m_left = int(round(bow.bow_position * self.length))
        m_left = min(max(m_left, 2), self.length - 2)
        self.left = TravelingWaveLine(m_left)
        self.right = TravelingWaveLine(self.length - m_left)
        self.bow = bow
        self.nut = nut or TerminationFilter.rigid()
        self.bridge = bridge or TerminationFilter.rigid()
        self.friction = friction or FrictionCurve(bow.bow_force, bow.friction_slope)
        self.pickup = self.length - 1 if pickup is None else int(pickup)
        self.junction_velocity = 0.0

    def velocity(self, m: int) -> float:
        if m < self.left.length:
            return self.left.velocity(m)
        return self.right.velocity(m - self.left.length)

    def set_state(self, right: np.ndarray, left: np.ndarray) -> None:
        k = self.left.length
        self.left.set_state(right[:k], left[:k])
        self.right.set_state(right[k:], left[k:])

    def tick(self, bow_velocity: float | None = None) -> float:
        vb = self.bow.bow_velocity if bow_velocity is None else bow_velocity
        out = self.velocity(self.pickup)
        in_left = self.left.right_going.read(self.left.length - 1)
        in_right = self.right.left_going.read(self.right.length - 1)
        vd = vb - (in_left + in_right)
        corr = self.friction(vd) * vd
        self.junction_velocity = in_left + in_right + corr
        nut_in, _ = self.left.ends()
        _, bridge_in = self.right.ends()
        self.left.advance(self.nut.reflect(nut_in), in_right + corr)
        self.right.advance(in_left + corr, self.bridge.reflect(bridge_in))
        return out

    def render(self, n_samples: int, bow_velocity: np.ndarray | None = None) -> np.ndarray:
        out = np.empty(n_samples)
        for n in range(n_samples):
            out[n] = self.tick(None if bow_velocity is None else float(bow_velocity[n]))
        return out


def bowed_string_tick(state: BowedString, bow: BowParams | None = None) -> float:
    if bow is not None:
        state.bow = bow
        state.friction = FrictionCurve(bow.bow_force, bow.friction_slope)
    return state.tick()
