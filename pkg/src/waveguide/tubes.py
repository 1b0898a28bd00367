"""Acoustic tube models: the Kelly-Lochbaum ladder and a single-reed clarinet.

Both work in pressure waves. Each tract section carries one sample of
one-way delay, so a tract of M sections is M*c/fs long.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import LoopFilter
from .scattering import area_reflection_coefficient
from .strings import TravelingWaveLine

__all__ = [
    "KellyLochbaumTract",
    "kl_build",
    "kl_tick",
    "kl_render",
    "ReedTable",
    "reed_table_build",
    "reed_table_load",
    "bell_filter",
    "ClarinetState",
    "clarinet_build",
    "clarinet_render",
]


def _end_reflection(name: str, value: float) -> float:
    value = float(value)
    if not -1.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [-1, 1], got {value}")
    return value


@dataclass
class KellyLochbaumTract:
    """Chain of cylindrical sections joined by lossless junctions.

    ``forward[m]`` is the right-going pressure wave arriving at the right
    end of section m; ``backward[m]`` is the left-going wave arriving at its
    left end. The glottis is at the left of section 0, the lips at the right
    of the last section.
    """

    areas: np.ndarray
    junction_reflections: np.ndarray
    glottal_reflection: float
    lip_reflection: float
    forward: np.ndarray = field(repr=False, default=None)
    backward: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.forward is None:
            self.reset()

    @property
    def sections(self) -> int:
        return len(self.areas)

    def reset(self) -> None:
        self.forward = np.zeros(len(self.areas))
        self.backward = np.zeros(len(self.areas))

    def transmission_product(self) -> float:
        """Gain of the direct glottis-to-lips path (no reflections taken)."""
        return float(np.prod(1.0 + self.junction_reflections) * (1.0 + self.lip_reflection))

    def junction_power(self, m: int, forward=None, backward=None) -> tuple[float, float]:
        """Incoming and outgoing power at junction m for waves (p+ from the
        left, p- from the right); power is proportional to area times p^2."""
        p_in = self.forward[m] if forward is None else forward
        p_back = self.backward[m + 1] if backward is None else backward
        r = self.junction_reflections[m]
        k = r * (p_in - p_back)
        a1, a2 = self.areas[m], self.areas[m + 1]
        incoming = a1 * p_in**2 + a2 * p_back**2
        outgoing = a1 * (p_back + k) ** 2 + a2 * (p_in + k) ** 2
        return float(incoming), float(outgoing)


def kl_build(areas, glottal_reflection: float = 0.0, lip_reflection: float = 0.0) -> KellyLochbaumTract:
    areas = np.asarray(areas, dtype=np.float64)
    if areas.ndim != 1 or areas.size < 1:
        raise ValueError("areas must be a nonempty 1-D array")
    if not np.all(np.isfinite(areas)) or np.any(areas <= 0):
        raise ValueError(f"all section areas must be positive, got {areas.tolist()}")
    refl = np.array([area_reflection_coefficient(areas[m], areas[m + 1]) for m in range(len(areas) - 1)])
    return KellyLochbaumTract(
        areas.copy(),
        refl,
        _end_reflection("glottal_reflection", glottal_reflection),
        _end_reflection("lip_reflection", lip_reflection),
    )


def kl_tick(tract: KellyLochbaumTract, glottal_input: float) -> float:
    """Advance the tract one sample and return the pressure radiated at the lips.

    Junctions use the one-multiply form ``k = r (p+ - p-)``: the wave passed
    right is ``p+ + k`` and the wave passed left is ``p- + k``.
    """
    fwd, bwd = tract.forward, tract.backward
    out = (1.0 + tract.lip_reflection) * fwd[-1]
    new_fwd = np.empty_like(fwd)
    new_bwd = np.empty_like(bwd)
    if len(fwd) > 1:
        k = tract.junction_reflections * (fwd[:-1] - bwd[1:])
        new_fwd[1:] = fwd[:-1] + k
        new_bwd[:-1] = bwd[1:] + k
    new_fwd[0] = tract.glottal_reflection * bwd[0] + glottal_input
    new_bwd[-1] = tract.lip_reflection * fwd[-1]
    tract.forward, tract.backward = new_fwd, new_bwd
    return float(out)


def kl_render(tract: KellyLochbaumTract, glottal_input: np.ndarray, n_samples: int | None = None) -> np.ndarray:
    x = np.asarray(glottal_input, dtype=np.float64)
    n = len(x) if n_samples is None else int(n_samples)
    out = np.empty(n)
    for i in range(n):
        out[i] = kl_tick(tract, x[i] if i < len(x) else 0.0)
    return out


# ---------------------------------------------------------------- reed


@dataclass
class ReedTable:
    """Reed reflection coefficient sampled on a uniform pressure grid.

    The argument is the half-pressure difference across the reed. At and
    above the closure point the reed is shut and reflects totally (1.0);
    below it the reed opens and the coefficient falls. Lookup interpolates
    linearly, holds the first value below the grid and returns 1.0 above it.
    """

    h_min: float
    h_max: float
    values: np.ndarray
    embouchure: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or len(self.values) < 2 or not self.h_max > self.h_min:
            raise ValueError("reed table needs at least two samples over a nondegenerate range")
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise ValueError("reed reflection values must lie in [0, 1]")
        if np.any(np.diff(self.values) < 0):
            raise ValueError("reed reflection must not decrease toward closure")
        if self.values[-1] != 1.0:
            raise ValueError("reed table must reach total reflection (1.0) at its closed end")
        self._step = (self.h_max - self.h_min) / (len(self.values) - 1)
        self._list = self.values.tolist()

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.h_min, self.h_max, len(self.values))

    def __call__(self, h: float) -> float:
        if h >= self.h_max:
            return 1.0
        if h <= self.h_min:
            return self._list[0]
        pos = (h - self.h_min) / self._step
        i = int(pos)
        frac = pos - i
        v = self._list
        return v[i] + frac * (v[i + 1] - v[i])


def reed_table_build(embouchure: float = 0.0, grid_size: int = 256, slope: float = 0.3,
                     closure: float = 1.0, h_min: float = -3.0, h_max: float = 3.0) -> ReedTable:
    """Sample ``clamp(1 - slope * max(0, h_c - h), 0, 1)`` with ``h_c = closure - embouchure``.

    Defaults give ``0.7 + 0.3 h`` below closure, the common single-reed
    table. A larger embouchure value closes the reed at lower pressure.
    """
    if int(grid_size) != grid_size or grid_size < 16:
        raise ValueError(f"grid_size must be an integer >= 16, got {grid_size!r}")
    if slope <= 0:
        raise ValueError("slope must be positive")
    h_c = closure - embouchure
    if not h_min < h_c < h_max:
        raise ValueError(f"closure point {h_c} must lie inside the table range ({h_min}, {h_max})")
    h = np.linspace(h_min, h_max, int(grid_size))
    values = np.clip(1.0 - slope * np.maximum(0.0, h_c - h), 0.0, 1.0)
    return ReedTable(h_min, h_max, values, embouchure)


def reed_table_load(path) -> ReedTable:
    """Read a two-column ``h rho`` text file (uniformly spaced h, one pair per line)."""
    data = np.loadtxt(Path(path), ndmin=2, comments="#")
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns, got {data.shape[1]}")
    h, rho = data[:, 0], data[:, 1]
    steps = np.diff(h)
    if len(h) < 2 or np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-6, atol=0):
        raise ValueError(f"{path}: pressure column must be strictly increasing and uniformly spaced")
    return ReedTable(float(h[0]), float(h[-1]), rho)


# ---------------------------------------------------------------- clarinet


def bell_filter(gain: float = 0.95, pole: float = 0.5) -> LoopFilter:
    """Inverting one-pole lowpass ``-gain (1 - pole) / (1 - pole z^-1)``."""
    if not 0 < gain <= 1:
        raise ValueError("bell gain must lie in (0, 1]")
    if not 0 <= pole < 1:
        raise ValueError("bell pole must lie in [0, 1)")
    return LoopFilter.one_pole(pole).scaled(-gain)


@dataclass
class ClarinetState:
    """Cylindrical bore with the reed at position 0 and the bell at the far end.

    Half-pressures are used at the reed: with incoming bore wave ``p-`` and
    mouth pressure ``p_m``, ``h = p_m/2 - p-`` and the wave sent into the
    bore is ``p_m/2 - rho(h) h``. A shut reed (rho = 1) reflects ``p-``
    unchanged.
    """

    bore: TravelingWaveLine
    reed: ReedTable
    bell_reflection: LoopFilter
    mouth_pressure: float = 0.0

    def __post_init__(self):
        mag = self.bell_reflection.magnitude(np.linspace(0, 0.5, 513), 1.0)
        if np.max(mag) > 1.0 + 1e-12:
            raise ValueError("bell reflection must not amplify (|H| <= 1)")

    def reset(self) -> None:
        self.bore = TravelingWaveLine(self.bore.length)
        self.bell_reflection.reset()
        self.mouth_pressure = 0.0

    def tick(self, mouth_pressure: float) -> float:
        self.mouth_pressure = mouth_pressure
        at_reed, at_bell = self.bore.ends()
        half = 0.5 * mouth_pressure
        h_delta = half - at_reed
        into_bore = half - self.reed(h_delta) * h_delta
        reflected = self.bell_reflection.tick(at_bell)
        self.bore.advance(into_bore, reflected)
        return at_bell + reflected


def clarinet_build(bore_length: int, reed: ReedTable | None = None, bell_gain: float = 0.95,
                   bell_pole: float = 0.5) -> ClarinetState:
    return ClarinetState(TravelingWaveLine(bore_length), reed or reed_table_build(), bell_filter(bell_gain, bell_pole))


def clarinet_render(state: ClarinetState, mouth_pressure_envelope, n_samples: int) -> np.ndarray:
    env = np.asarray(mouth_pressure_envelope, dtype=np.float64)
    if len(env) < n_samples:
        raise ValueError(f"mouth pressure envelope has {len(env)} samples, need {n_samples}")
    env = env.tolist()
    out = np.empty(n_samples)
    for n in range(n_samples):
        out[n] = state.tick(env[n])
    return out
