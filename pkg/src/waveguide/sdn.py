"""Scattering delay network room reverberator for shoebox rooms.

One scattering node sits on each wall at the specular reflection point of
the source-receiver pair. Nodes are fully interconnected by bidirectional
delay lines; the source feeds every node and every node feeds the receiver
through one-way taps, and a separate direct path joins source and receiver.

Conventions:
  * tap gains: source->node 1/d_sk, node->receiver 1/(1 + d_kr/d_sk), so a
    first-order path has total gain 1/(d_sk + d_kr); direct path 1/d.
  * each node scatters with ``(2/K) J - I`` (K = walls - 1 line ports),
    then applies its wall gain (optionally a one-pole lowpass).
  * the source sample arriving at a node is added as 0.5*s on every port;
    the receiver tap reads ``(2/K) * sum(outgoing)``.
  * network lines use first-order allpass interpolation (lossless); taps
    use third-order Lagrange.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .core import FractionalDelay

__all__ = [
    "GeometryError",
    "RT60Error",
    "SdnRoom",
    "sdn_build",
    "sdn_render_ir",
    "sdn_rt60",
    "image_source_arrivals",
    "schroeder_edc",
]

MAX_BLOCK = 256


class GeometryError(ValueError):
    pass


class RT60Error(ValueError):
    pass


def _walls(dims: np.ndarray) -> list[tuple[int, float]]:
    """(axis, coordinate) for every wall: low then high side per axis."""
    return [(axis, side) for axis in range(len(dims)) for side in (0.0, float(dims[axis]))]


def _reflection_point(source, receiver, axis: int, plane: float) -> np.ndarray:
    image = source.copy()
    image[axis] = 2 * plane - source[axis]
    # where the image-to-receiver segment crosses the wall plane
    t = (plane - image[axis]) / (receiver[axis] - image[axis])
    return image + t * (receiver - image)


@dataclass
class SdnRoom:
    dims: np.ndarray
    source: np.ndarray
    receiver: np.ndarray
    wall_gains: np.ndarray
    sample_rate: float
    sound_speed: float
    node_positions: np.ndarray
    wall_poles: np.ndarray
    lines: list = field(repr=False)
    line_delays: np.ndarray = field(repr=False)
    source_delays: np.ndarray = field(repr=False)
    source_gains: np.ndarray = field(repr=False)
    receiver_delays: np.ndarray = field(repr=False)
    receiver_gains: np.ndarray = field(repr=False)
    direct_delay: float = 0.0
    direct_gain: float = 0.0

    @property
    def wall_count(self) -> int:
        return len(self.node_positions)

    @property
    def degree(self) -> int:
        return self.wall_count - 1

    def scattering_matrix(self) -> np.ndarray:
        k = self.degree
        return (2.0 / k) * np.ones((k, k)) - np.eye(k)

    def first_order_delays(self) -> np.ndarray:
        return self.source_delays + self.receiver_delays


def _samples(distance: float, fs: float, c: float) -> float:
    return distance / c * fs


def sdn_build(room_dims, source, receiver, wall_gains=0.9, fs: float = 44100.0, c: float = 343.0,
              wall_poles=0.0) -> SdnRoom:
    """Place nodes and compute every delay and tap gain for a shoebox room.

    ``room_dims`` has 2 (4 walls) or 3 (6 walls) entries. ``wall_gains`` and
    ``wall_poles`` are scalars or one value per wall, ordered low/high side
    of x, then y, then z.
    """
    dims = np.asarray(room_dims, dtype=np.float64)
    src = np.asarray(source, dtype=np.float64)
    rcv = np.asarray(receiver, dtype=np.float64)
    if dims.shape not in ((2,), (3,)):
        raise GeometryError("room_dims must have 2 or 3 entries")
    if np.any(dims <= 0):
        raise GeometryError("room dimensions must be positive")
    for name, p in (("source", src), ("receiver", rcv)):
        if p.shape != dims.shape:
            raise GeometryError(f"{name} must have {len(dims)} coordinates")
        if np.any(p <= 0) or np.any(p >= dims):
            raise GeometryError(f"{name} {p.tolist()} must lie strictly inside the room {dims.tolist()}")
    if np.allclose(src, rcv, atol=1e-9, rtol=0):
        raise GeometryError("source and receiver coincide")
    if fs <= 0 or c <= 0:
        raise ValueError("sample rate and sound speed must be positive")
    walls = _walls(dims)
    n_walls = len(walls)
    gains = np.broadcast_to(np.asarray(wall_gains, dtype=np.float64), (n_walls,)).copy()
    poles = np.broadcast_to(np.asarray(wall_poles, dtype=np.float64), (n_walls,)).copy()
    if np.any(gains < 0) or np.any(gains > 1):
        raise ValueError("wall gains must lie in [0, 1]")
    if np.any(poles < 0) or np.any(poles >= 1):
        raise ValueError("wall poles must lie in [0, 1)")
    nodes = np.array([_reflection_point(src, rcv, axis, plane) for axis, plane in walls])
    d_sk = np.linalg.norm(nodes - src, axis=1)
    d_kr = np.linalg.norm(nodes - rcv, axis=1)
    lines = list(itertools.combinations(range(n_walls), 2))
    line_delays = np.zeros((n_walls, n_walls))
    for i, j in lines:
        d = _samples(float(np.linalg.norm(nodes[i] - nodes[j])), fs, c)
        # the network needs at least one sample between nodes to stay causal
        line_delays[i, j] = line_delays[j, i] = max(d, 1.0)
    d_sr = float(np.linalg.norm(rcv - src))
    return SdnRoom(
        dims=dims,
        source=src,
        receiver=rcv,
        wall_gains=gains,
        sample_rate=float(fs),
        sound_speed=float(c),
        node_positions=nodes,
        wall_poles=poles,
        lines=lines,
        line_delays=line_delays,
        source_delays=d_sk / c * fs,
        source_gains=1.0 / d_sk,
        receiver_delays=d_kr / c * fs,
        receiver_gains=1.0 / (1.0 + d_kr / d_sk),
        direct_delay=d_sr / c * fs,
        direct_gain=1.0 / d_sr,
    )


def image_source_arrivals(room: SdnRoom) -> tuple[float, np.ndarray]:
    """Direct and first-order arrival times (samples) from mirrored sources."""
    fs, c = room.sample_rate, room.sound_speed
    direct = np.linalg.norm(room.receiver - room.source) / c * fs
    first = []
    for axis, plane in _walls(room.dims):
        image = room.source.copy()
        image[axis] = 2 * plane - image[axis]
        first.append(np.linalg.norm(room.receiver - image) / c * fs)
    return float(direct), np.array(first)


def _delayed(x: np.ndarray, delay: float, n: int) -> np.ndarray:
    """Third-order Lagrange fractional delay of a whole signal."""
    fd = FractionalDelay.lagrange(max(delay, 1.0), 3)
    y = np.zeros(n)
    if fd.base < n:
        y[fd.base :] = sps.lfilter(fd.coefficients, [1.0], x[: n - fd.base])
    return y


def sdn_render_ir(room: SdnRoom, duration_s: float, return_components: bool = False):
    """Impulse response of the network.

    With ``return_components`` the result is ``(ir, direct, per_node)`` where
    ``per_node[k]`` is everything that reaches the receiver through node k.
    """
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    fs = room.sample_rate
    n = int(round(duration_s * fs))
    n_walls, k_ports = room.wall_count, room.degree
    impulse = np.zeros(n)
    impulse[0] = 1.0
    direct = room.direct_gain * _delayed(impulse, room.direct_delay, n)
    source_in = np.array([g * _delayed(impulse, d, n) for g, d in zip(room.source_gains, room.source_delays)])

    # directed line (i -> j): input history, allpass coefficient and base delay
    pairs = [(i, j) for i in range(n_walls) for j in range(n_walls) if i != j]
    port = {}
    for j in range(n_walls):
        others = [i for i in range(n_walls) if i != j]
        for p, i in enumerate(others):
            port[(i, j)] = p
    reads = {}
    for pr in pairs:
        fd = FractionalDelay.allpass(room.line_delays[pr])
        a = float(fd.coefficients[0])
        if a == 0.0:
            # whole-sample delay: plain shift, no filter state
            reads[pr] = (fd.base + 1, np.array([1.0]), np.array([1.0]))
        else:
            reads[pr] = (fd.base, np.array([a, 1.0]), np.array([1.0, a]))
    block = max(1, min(min(r[0] for r in reads.values()), MAX_BLOCK))
    pad = max(r[0] for r in reads.values()) + 1
    line_in = {pr: np.zeros(n + pad) for pr in pairs}  # index t + pad holds time t
    line_zi = {pr: np.zeros(len(reads[pr][2]) - 1) for pr in pairs}
    node_out = np.zeros((n_walls, n))
    scatter = room.scattering_matrix()
    wall_zi = [np.zeros((k_ports, 1)) for _ in range(n_walls)]
    wall_filters = []
    for w in range(n_walls):
        p, g = room.wall_poles[w], room.wall_gains[w]
        wall_filters.append((np.array([g * (1.0 - p)]), np.array([1.0, -p])))

    for t0 in range(0, n, block):
        t1 = min(t0 + block, n)
        incoming = np.zeros((n_walls, k_ports, t1 - t0))
        for pr, (base, b, a) in reads.items():
            start = t0 - base + pad
            seg = line_in[pr][start : start + (t1 - t0)]
            if len(a) > 1:
                seg, line_zi[pr] = sps.lfilter(b, a, seg, zi=line_zi[pr])
            incoming[pr[1], port[pr]] = seg
        for j in range(n_walls):
            pressure = incoming[j] + 0.5 * source_in[j, t0:t1]
            out = scatter @ pressure
            b, a = wall_filters[j]
            out, wall_zi[j] = sps.lfilter(b, a, out, axis=1, zi=wall_zi[j])
            node_out[j, t0:t1] = (2.0 / k_ports) * out.sum(axis=0)
            for i in range(n_walls):
                if i != j:
                    line_in[(j, i)][t0 + pad : t1 + pad] = out[port[(i, j)]]

    per_node = np.array([
        g * _delayed(node_out[k], d, n) for k, (g, d) in enumerate(zip(room.receiver_gains, room.receiver_delays))
    ])
    ir = direct + per_node.sum(axis=0)
    if return_components:
        return ir, direct, per_node
    return ir


def schroeder_edc(ir: np.ndarray) -> np.ndarray:
    """Backward-integrated energy in dB relative to the total."""
    energy = np.cumsum(np.asarray(ir, dtype=np.float64)[::-1] ** 2)[::-1]
    if energy[0] <= 0:
        raise RT60Error("impulse response is silent")
    with np.errstate(divide="ignore"):
        return 10 * np.log10(energy / energy[0])


def sdn_rt60(ir: np.ndarray, fs: float, upper_db: float = -5.0, lower_db: float = -35.0) -> float:
    """Reverberation time from a line fit to the decay curve between two levels."""
    edc = schroeder_edc(ir)
    below_upper = np.flatnonzero(edc <= upper_db)
    below_lower = np.flatnonzero(edc <= lower_db)
    if below_upper.size == 0 or below_lower.size == 0:
        raise RT60Error(f"decay curve never reaches {lower_db} dB")
    i0, i1 = below_upper[0], below_lower[0]
    if i1 - i0 < 2:
        raise RT60Error("decay range spans too few samples to fit")
    t = np.arange(i0, i1 + 1) / fs
    slope = np.polyfit(t, edc[i0 : i1 + 1], 1)[0]
    if slope >= 0:
        raise RT60Error("energy decay curve does not decay")
    return float(-60.0 / slope)
