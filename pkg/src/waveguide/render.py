"""Turn validated render jobs into audio."""

from __future__ import annotations

import io
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .config import RenderJob
from .core import LoopFilter
from .mesh import mesh_build, mesh_render
from .sdn import sdn_build, sdn_render_ir
from .strings import (
    BowedString,
    BowParams,
    Excitation,
    FdlParams,
    TerminationFilter,
    TravelingWaveLine,
    commuted_render,
    fdl_render,
    terminated_string_render,
)
from .tubes import clarinet_build, clarinet_render, kl_build, kl_render, reed_table_build, reed_table_load
from .wavio import write_wav

__all__ = ["loss_filter_from", "fdl_params_from", "render_job", "run_render", "RENDERERS"]


def loss_filter_from(spec: dict) -> LoopFilter:
    kind = spec.get("type", "averager")
    if kind == "identity":
        return LoopFilter.identity()
    if kind == "one_pole":
        return LoopFilter.one_pole(spec.get("pole", 0.0))
    return LoopFilter.averager()


def _excitation(spec: dict, job: RenderJob) -> Excitation:
    seed = job.seed if spec.get("seed") is None else spec["seed"]
    return Excitation(spec["kind"], spec.get("length"), seed, amplitude=spec.get("amplitude", 1.0))


def fdl_params_from(params: dict, job: RenderJob) -> FdlParams:
    return FdlParams(
        sample_rate=job.sample_rate,
        f0=params["f0"],
        loss_filter=loss_filter_from(params["loss_filter"]),
        loop_gain=params["loop_gain"],
        interp=params["interp"],
        interp_order=params["interp_order"],
        excitation=_excitation(params["excitation"], job),
        duration=job.duration,
        compensate=params["compensate"],
    )


def _positions(p) -> tuple[int, int]:
    n = p["length"]
    excite = n // 5 if p["excite_position"] is None else p["excite_position"]
    pickup = n // 3 if p["pickup"] is None else p["pickup"]
    return excite, pickup


def _ideal_string(p, job):
    line = TravelingWaveLine(p["length"], sample_rate=job.sample_rate)
    excite, pickup = _positions(p)
    return terminated_string_render(line, TerminationFilter.rigid(), TerminationFilter.rigid(),
                                    _excitation(p["excitation"], job), pickup, job.n_samples, excite)


def _terminated_string(p, job):
    line = TravelingWaveLine(p["length"], sample_rate=job.sample_rate)
    bridge = TerminationFilter(loss_filter_from(p["bridge_filter"]).scaled(p["bridge_gain"]))
    nut = TerminationFilter(LoopFilter.identity().scaled(p["nut_gain"]))
    excite, pickup = _positions(p)
    return terminated_string_render(line, bridge, nut, _excitation(p["excitation"], job), pickup,
                                    job.n_samples, excite)


def _fdl(p, job):
    return fdl_render(fdl_params_from(p, job))


def _commuted(p, job):
    string = fdl_params_from(p, job)
    t = np.arange(int(round(p["body_length"] * job.sample_rate))) / job.sample_rate
    body = np.zeros_like(t)
    for freq, decay, amp in p["body_modes"]:
        body += amp * np.exp(-decay * t) * np.sin(2 * np.pi * freq * t)
    body[0] = 1.0  # direct, unfiltered part of the body response
    e = string.excitation.samples(string.loop_length())
    return commuted_render(e, string, body, p["order"])


def _bowed_string(p, job):
    bow = BowParams(p["bow_velocity"], p["bow_force"], p["bow_position"], p["friction_slope"])
    bridge = TerminationFilter(LoopFilter.one_pole(p["bridge_pole"]).scaled(p["bridge_gain"]))
    return BowedString(p["length"], bow, bridge=bridge).render(job.n_samples)


def _kelly_lochbaum(p, job):
    n = job.n_samples
    x = np.zeros(n)
    if p["source"] == "impulse":
        x[0] = p["amplitude"]
    elif p["source"] == "impulse_train":
        period = job.sample_rate / p["source_f0"]
        idx = np.round(np.arange(0, n, period)).astype(int)
        x[idx[idx < n]] = p["amplitude"]
    else:
        x = p["amplitude"] * np.random.default_rng(job.seed).uniform(-1.0, 1.0, n)
    tract = kl_build(p["areas"], p["glottal_reflection"], p["lip_reflection"])
    return kl_render(tract, x, n)


def _clarinet(p, job):
    n = job.n_samples
    if p["reed_table_file"]:
        reed = reed_table_load(p["reed_table_file"])
    else:
        reed = reed_table_build(p["embouchure"], slope=p["reed_slope"])
    state = clarinet_build(p["bore_length"], reed, p["bell_gain"], p["bell_pole"])
    ramp = max(1, int(round(p["attack"] * job.sample_rate)))
    env = p["mouth_pressure"] * np.minimum(1.0, np.arange(1, n + 1) / ramp)
    return clarinet_render(state, env, n)


def _mesh2d(p, job):
    grid = mesh_build(p["width"], p["height"], p["boundary_reflection"])
    dump = open(p["dump"], "wb") if p["dump"] else nullcontext()
    with dump as stream:
        return mesh_render(grid, [p["amplitude"]], tuple(p["excite"]), tuple(p["pickup"]), job.n_samples, stream)


def _sdn(p, job):
    room = sdn_build(p["room"], p["source"], p["receiver"], p["wall_gain"], job.sample_rate,
                     p["sound_speed"], p["wall_pole"])
    return sdn_render_ir(room, job.duration)


RENDERERS = {
    "ideal_string": _ideal_string,
    "terminated_string": _terminated_string,
    "fdl": _fdl,
    "commuted": _commuted,
    "bowed_string": _bowed_string,
    "kelly_lochbaum": _kelly_lochbaum,
    "clarinet": _clarinet,
    "mesh2d": _mesh2d,
    "sdn": _sdn,
}


def render_job(job: RenderJob) -> np.ndarray:
    y = np.asarray(RENDERERS[job.model](job.params, job), dtype=np.float64)[: job.n_samples]
    if len(y) < job.n_samples:
        y = np.pad(y, (0, job.n_samples - len(y)))
    y = y * job.gain
    if job.normalize:
        peak = np.max(np.abs(y))
        if peak > 0:
            y = y * (0.9 / peak)
    return y


def run_render(job: RenderJob) -> tuple[np.ndarray, str]:
    """Render and write one job; returns the signal and its report text."""
    y = render_job(job)
    clipped = write_wav(job.output, y, job.sample_rate)
    out = io.StringIO()
    out.write(f"{job.name}: {job.model} -> {Path(job.output)} ({len(y)} frames at {job.sample_rate} Hz)\n")
    if clipped:
        out.write(f"warning: {job.name}: {clipped} samples clipped to [-1, 1]\n")
    return y, out.getvalue()
