"""Wave impedances, reflection coefficients and lossless junction scattering.

Sign conventions: for a series junction (common velocity) the force
reflection coefficient is ``r = (R2 - R1) / (R1 + R2)``; force/pressure waves
scatter as ``(r f, (1 + r) f)`` and velocity waves as ``(-r v, (1 - r) v)``.
A parallel junction (common force) is the same arithmetic with the wave
kind swapped.
"""

from __future__ import annotations

import enum
import math

import numpy as np

__all__ = [
    "Limit",
    "RIGID",
    "FREE",
    "WaveKind",
    "DegenerateJunctionError",
    "StringMedium",
    "string_impedance",
    "tube_impedance",
    "reflection_coefficient",
    "area_reflection_coefficient",
    "scatter_two_port",
    "scatter",
    "wave_convert",
    "junction_power",
    "scatter_nport_equal",
    "pairwise_sum",
]


class Limit(enum.Enum):
    """Symbolic impedance limits, kept out of IEEE inf/0 arithmetic."""

    RIGID = "rigid"  # R -> infinity
    FREE = "free"  # R -> 0


RIGID = Limit.RIGID
FREE = Limit.FREE


class WaveKind(enum.Enum):
    FORCE = "force_or_pressure"
    VELOCITY = "velocity"


class DegenerateJunctionError(ValueError):
    pass


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not (value > 0 and math.isfinite(value)):
        raise ValueError(f"{name} must be strictly positive and finite, got {value!r}")
    return value


class StringMedium:
    """Ideal string: tension K (N) and linear density mu (kg/m)."""

    def __init__(self, tension: float, linear_density: float):
        self.tension = _positive("tension", tension)
        self.linear_density = _positive("linear_density", linear_density)

    @property
    def impedance(self) -> float:
        return math.sqrt(self.tension * self.linear_density)

    @property
    def wave_speed(self) -> float:
        return math.sqrt(self.tension / self.linear_density)

    def __repr__(self):
        return f"StringMedium(tension={self.tension}, linear_density={self.linear_density})"


def string_impedance(tension: float, linear_density: float) -> tuple[float, float]:
    """Return ``(sqrt(K mu), sqrt(K / mu))``."""
    m = StringMedium(tension, linear_density)
    return m.impedance, m.wave_speed


def tube_impedance(area: float, air_density: float = 1.2, sound_speed: float = 343.0) -> float:
    """Acoustic impedance ``rho c / A`` of a cylindrical tube section."""
    area = _positive("area", area)
    rho = _positive("air_density", air_density)
    c = _positive("sound_speed", sound_speed)
    return rho * c / area


def reflection_coefficient(r1_impedance: float | Limit, r2_impedance: float | Limit) -> float:
    """Force reflection coefficient seen from side 1: ``(R2 - R1) / (R1 + R2)``."""
    r1, r2 = r1_impedance, r2_impedance
    if isinstance(r1, Limit) and isinstance(r2, Limit):
        if r1 is r2:
            raise DegenerateJunctionError(f"both sides of the junction are {r1.value}")
        return 1.0 if r2 is RIGID else -1.0
    if r2 is RIGID or r1 is FREE:
        if r1 is not FREE:
            _positive("r1_impedance", r1)
        if r2 is not RIGID:
            _positive("r2_impedance", r2)
        return 1.0
    if r2 is FREE or r1 is RIGID:
        if r1 is not RIGID:
            _positive("r1_impedance", r1)
        if r2 is not FREE:
            _positive("r2_impedance", r2)
        return -1.0
    a = _positive("r1_impedance", r1)
    b = _positive("r2_impedance", r2)
    return (b - a) / (a + b)


def area_reflection_coefficient(area_m: float, area_next: float) -> float:
    """Pressure reflection between tube sections: ``(A_m - A_next) / (A_m + A_next)``."""
    a = _positive("area_m", area_m)
    b = _positive("area_next", area_next)
    return (a - b) / (a + b)


def scatter_two_port(r, incident, kind: WaveKind = WaveKind.FORCE):
    """Scatter a wave incident from side 1 (nothing incoming from side 2).

    Returns ``(reflected, transmitted)``. ``r`` may be exactly +-1 (the rigid
    and free limits); anything outside [-1, 1] is rejected. Works
    elementwise on arrays.
    """
    if np.any(np.abs(r) > 1.0):
        raise ValueError(f"reflection coefficient must lie in [-1, 1], got {r!r}")
    if kind is WaveKind.FORCE:
        return r * incident, (1.0 + r) * incident
    if kind is WaveKind.VELOCITY:
        return -r * incident, (1.0 - r) * incident
    raise TypeError(f"kind must be a WaveKind, got {kind!r}")


def scatter(r1_impedance, r2_impedance, incident, kind: WaveKind = WaveKind.FORCE):
    """Two-port scattering straight from impedances, limits included."""
    return scatter_two_port(reflection_coefficient(r1_impedance, r2_impedance), incident, kind)


def wave_convert(impedance, v_plus, v_minus):
    """Velocity waves to force waves: ``f+ = R v+``, ``f- = -R v-``."""
    return impedance * v_plus, -impedance * v_minus


def junction_power(r, f_plus, v_plus):
    """Incident and outgoing traveling power at a series junction.

    Incident is ``f+ v+``; outgoing is ``f2+ v2+ - f1- v1-`` with the
    scattered waves taken from the force and velocity scattering rules.
    """
    f1m, f2p = scatter_two_port(r, f_plus, WaveKind.FORCE)
    v1m, v2p = scatter_two_port(r, v_plus, WaveKind.VELOCITY)
    return f_plus * v_plus, f2p * v2p - f1m * v1m


def pairwise_sum(values) -> float:
    """Tree-ordered sum: ``(x0 + x1) + (x2 + x3)`` for four ports.

    The order is fixed so that symmetric port permutations give bit-identical
    results, which the mesh relies on.
    """
    vals = list(values)
    while len(vals) > 1:
        nxt = [vals[i] + vals[i + 1] for i in range(0, len(vals) - 1, 2)]
        if len(vals) % 2:
            nxt.append(vals[-1])
        vals = nxt
    return vals[0]


def scatter_nport_equal(incoming) -> tuple[float, np.ndarray]:
    """Equal-impedance N-port junction.

    ``v_J = (2/N) sum(incoming)``, ``outgoing[i] = v_J - incoming[i]``.
    """
    incoming = np.asarray(incoming, dtype=np.float64)
    n = incoming.shape[0]
    if n < 2:
        raise ValueError(f"an N-port junction needs N >= 2 ports, got {n}")
    v_j = (2.0 / n) * pairwise_sum(incoming)
    return v_j, v_j - incoming
