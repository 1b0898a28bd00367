"""Rectilinear 2D waveguide mesh of equal-impedance 4-port junctions.

Ports are indexed N=0, S=1, E=2, W=3; ``incoming[p, y, x]`` is the wave
arriving at junction (x, y) through port p. Row y=0 is the north edge.
Each step scatters every junction, then propagates all outgoing waves one
sample to the facing port of the neighbor (or back through the edge
reflection at the border).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .scattering import scatter_nport_equal

__all__ = [
    "N",
    "S",
    "E",
    "W",
    "MeshGrid",
    "MeasurementInvalidError",
    "mesh_build",
    "mesh_step",
    "mesh_excite",
    "mesh_read",
    "mesh_field",
    "mesh_energy",
    "DispersionResult",
    "mesh_measure_dispersion",
    "mesh_dump",
    "mesh_load_dump",
    "mesh_render",
]

N, S, E, W = 0, 1, 2, 3
EDGES = ("north", "south", "east", "west")


class MeasurementInvalidError(ValueError):
    pass


@dataclass
class MeshGrid:
    width: int
    height: int
    incoming: np.ndarray
    boundary_reflection: dict

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def copy(self) -> MeshGrid:
        return MeshGrid(self.width, self.height, self.incoming.copy(), dict(self.boundary_reflection))


def mesh_build(width: int, height: int, boundary_reflection: float | dict = -1.0) -> MeshGrid:
    """Zero-state mesh; ``boundary_reflection`` is one value or a per-edge dict."""
    for name, v in (("width", width), ("height", height)):
        if int(v) != v or v < 2:
            raise ValueError(f"{name} must be an integer >= 2, got {v!r}")
    if isinstance(boundary_reflection, dict):
        unknown = set(boundary_reflection) - set(EDGES)
        if unknown:
            raise ValueError(f"unknown edge names {sorted(unknown)}; expected {EDGES}")
        refl = {e: float(boundary_reflection.get(e, -1.0)) for e in EDGES}
    else:
        refl = {e: float(boundary_reflection) for e in EDGES}
    for e, r in refl.items():
        if not -1.0 <= r <= 1.0:
            raise ValueError(f"{e} boundary reflection must lie in [-1, 1], got {r}")
    return MeshGrid(int(width), int(height), np.zeros((4, int(height), int(width))), refl)


def _junction(incoming: np.ndarray, generic: bool) -> tuple[np.ndarray, np.ndarray]:
    if generic:
        return scatter_nport_equal(incoming)
    # halving of a tree-ordered sum, then one subtraction per port
    v = ((incoming[N] + incoming[S]) + (incoming[E] + incoming[W])) * 0.5
    return v, v - incoming


def mesh_step(grid: MeshGrid, generic: bool = False) -> None:
    """Scatter every junction, then propagate. ``generic`` routes the scatter
    through :func:`scatter_nport_equal`; both paths give identical bits."""
    _, out = _junction(grid.incoming, generic)
    new = np.empty_like(grid.incoming)
    r = grid.boundary_reflection
    # a wave leaving through S arrives at the southern neighbor's N port
    new[N, 1:, :] = out[S, :-1, :]
    new[N, 0, :] = r["north"] * out[N, 0, :]
    new[S, :-1, :] = out[N, 1:, :]
    new[S, -1, :] = r["south"] * out[S, -1, :]
    new[W, :, 1:] = out[E, :, :-1]
    new[W, :, 0] = r["west"] * out[W, :, 0]
    new[E, :, :-1] = out[W, :, 1:]
    new[E, :, -1] = r["east"] * out[E, :, -1]
    grid.incoming = new


def _check(grid: MeshGrid, x: int, y: int) -> None:
    if not (0 <= x < grid.width and 0 <= y < grid.height):
        raise IndexError(f"junction ({x}, {y}) outside {grid.width}x{grid.height} mesh")


def mesh_excite(grid: MeshGrid, x: int, y: int, amplitude: float) -> None:
    _check(grid, x, y)
    grid.incoming[:, y, x] += 0.25 * amplitude


def mesh_read(grid: MeshGrid, x: int, y: int) -> float:
    _check(grid, x, y)
    p = grid.incoming[:, y, x]
    return float(((p[N] + p[S]) + (p[E] + p[W])) * 0.5)


def mesh_field(grid: MeshGrid) -> np.ndarray:
    """Junction values v_J for the whole grid, shape (height, width)."""
    p = grid.incoming
    return ((p[N] + p[S]) + (p[E] + p[W])) * 0.5


def mesh_energy(grid: MeshGrid) -> float:
    return float(np.sum(grid.incoming * grid.incoming))


@dataclass
class DispersionResult:
    speed: float
    nominal_speed: float
    arrival_tick: int
    expected_tick: float
    spread: float
    response: np.ndarray


def _earliest_echo(grid_size: int, src: tuple[int, int], obs: tuple[int, int]) -> int:
    """Ticks until a boundary reflection can first reach ``obs`` (Manhattan causality)."""
    (sx, sy), (ox, oy) = src, obs
    images = [(-1 - sx, sy), (2 * grid_size - 1 - sx, sy), (sx, -1 - sy), (sx, 2 * grid_size - 1 - sy)]
    return min(abs(ix - ox) + abs(iy - oy) for ix, iy in images)


def mesh_measure_dispersion(grid_size: int = 64, direction: str = "diagonal", pulse=1.0,
                            distance: int = 20, tail: int = 16) -> DispersionResult:
    """Propagation speed of a pulse launched at the mesh center.

    The pulse samples are injected at the center junction on successive
    ticks; the junction value is recorded ``distance`` junctions away
    along an axis or a diagonal. Arrival is the peak of the magnitude
    response minus the peak of the pulse. Speed is in junction spacings per
    tick; the nominal mesh speed is 1/sqrt(2). ``spread`` is how many ticks
    the first significant arrival (1e-3 of the peak) leads the peak; a
    non-dispersive direction has the whole front arrive at once.
    """
    pulse = np.atleast_1d(np.asarray(pulse, dtype=np.float64))
    if not np.any(pulse):
        raise MeasurementInvalidError("pulse is identically zero")
    c = grid_size // 2
    if direction == "diagonal":
        obs = (c + distance, c + distance)
        geometric = distance * np.sqrt(2.0)
    elif direction == "axial":
        obs = (c + distance, c)
        geometric = float(distance)
    else:
        raise ValueError(f"direction must be 'axial' or 'diagonal', got {direction!r}")
    manhattan = abs(obs[0] - c) + abs(obs[1] - c)
    window = len(pulse) + manhattan + tail
    if not (0 <= obs[0] < grid_size and 0 <= obs[1] < grid_size):
        raise MeasurementInvalidError("observation point lies outside the grid")
    if window >= _earliest_echo(grid_size, (c, c), obs):
        raise MeasurementInvalidError(
            f"boundary reflections reach the observation point before tick {window}; use a larger grid"
        )
    grid = mesh_build(grid_size, grid_size, -1.0)
    response = np.empty(window)
    for n in range(window):
        if n < len(pulse):
            mesh_excite(grid, c, c, pulse[n])
        response[n] = mesh_read(grid, *obs)
        mesh_step(grid)
    arrival = int(np.argmax(np.abs(response))) - int(np.argmax(np.abs(pulse)))
    peak = int(np.argmax(np.abs(response)))
    first = int(np.argmax(np.abs(response) >= 1e-3 * np.abs(response[peak])))
    spread = float(peak - first)
    nominal = 1.0 / np.sqrt(2.0)
    speed = geometric / arrival if arrival > 0 else float("inf")
    return DispersionResult(float(speed), nominal, arrival, geometric / nominal, spread, response)


_HEADER = struct.Struct("<ii")


def mesh_dump(grid: MeshGrid, stream) -> None:
    """Append one frame: int32 width, int32 height, then float64 v_J row-major."""
    stream.write(_HEADER.pack(grid.width, grid.height))
    stream.write(np.ascontiguousarray(mesh_field(grid), dtype="<f8").tobytes())


def mesh_load_dump(data: bytes) -> list[np.ndarray]:
    frames = []
    pos = 0
    while pos < len(data):
        width, height = _HEADER.unpack_from(data, pos)
        pos += _HEADER.size
        size = 8 * width * height
        frames.append(np.frombuffer(data[pos : pos + size], dtype="<f8").reshape(height, width).copy())
        pos += size
    return frames


def mesh_render(grid: MeshGrid, excitation, excite_at: tuple[int, int], pickup: tuple[int, int],
                n_samples: int, dump=None) -> np.ndarray:
    """Drive one junction with ``excitation`` and record another, one value per step."""
    e = np.asarray(excitation, dtype=np.float64)
    _check(grid, *excite_at)
    _check(grid, *pickup)
    out = np.empty(n_samples)
    for n in range(n_samples):
        if n < len(e) and e[n] != 0.0:
            mesh_excite(grid, *excite_at, e[n])
        out[n] = mesh_read(grid, *pickup)
        if dump is not None:
            mesh_dump(grid, dump)
        mesh_step(grid)
    return out
