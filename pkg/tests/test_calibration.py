import math

import numpy as np
import pytest

from waveguide.calibration import (
    GaConfig,
    HarmonicFitness,
    InfeasibleError,
    ModalComponent,
    UnvoicedError,
    estimate_f0,
    ga_optimize,
    loss_filter_fit,
    modal_fit,
    partial_decays,
    synthesize_modes,
)
from waveguide.core import LoopFilter
from waveguide.strings import Excitation, FdlParams, fdl_render

FS = 44100.0
BIN_HZ = FS / 4096


def cents(f, ref):
    return 1200 * math.log2(f / ref)


# ---------------------------------------------------------------- pitch


def test_f0_of_sine():
    t = np.arange(int(FS)) / FS
    assert estimate_f0(np.sin(2 * np.pi * 440 * t), FS) == pytest.approx(440, abs=0.5)


def test_f0_of_fdl_render():
    y = fdl_render(FdlParams(f0=220, duration=1.0))
    assert abs(cents(estimate_f0(y, FS), 220)) <= 1.0


def test_f0_unvoiced():
    noise = np.random.default_rng(1).standard_normal(int(FS))
    with pytest.raises(UnvoicedError):
        estimate_f0(noise, FS)
    with pytest.raises(UnvoicedError):
        estimate_f0(np.zeros(int(FS)), FS)


def test_f0_too_short():
    with pytest.raises(ValueError):
        estimate_f0(np.ones(1000), FS)


@pytest.mark.parametrize("f0", [110, 331.7, 882])
def test_f0_scale_invariant(f0):
    y = fdl_render(FdlParams(f0=f0, duration=0.5))
    assert estimate_f0(0.01 * y, FS) == pytest.approx(estimate_f0(y, FS), rel=1e-9)


# ---------------------------------------------------------------- modal


def assert_recovered(true, fitted):
    assert len(fitted) == len(true)
    for a, b in zip(sorted(true, key=lambda m: m.frequency), fitted):
        assert abs(a.frequency_hz - b.frequency_hz) <= 0.5
        if a.damping == 0:
            assert abs(b.damping) <= 0.05
        else:
            assert b.damping == pytest.approx(a.damping, rel=0.02)


def test_modal_single_mode():
    true = [ModalComponent.from_hz(1.0, 440, 5.0, 0.0)]
    fit = modal_fit(synthesize_modes(true, FS, int(FS)), FS, 4)
    assert_recovered(true, fit)
    assert fit[0].amplitude == pytest.approx(1.0, rel=0.01)


def test_modal_two_modes():
    true = [ModalComponent.from_hz(1.0, 440, 5.0, 0.3), ModalComponent.from_hz(0.6, 1200, 12.0, 1.1)]
    assert_recovered(true, modal_fit(synthesize_modes(true, FS, int(FS)), FS, 2))


def test_modal_undamped():
    true = [ModalComponent.from_hz(0.8, 523.25, 0.0, 0.0)]
    assert_recovered(true, modal_fit(synthesize_modes(true, FS, int(FS)), FS, 1))


def test_modal_random_round_trips():
    rng = np.random.default_rng(7)
    for _ in range(20):
        k = int(rng.integers(1, 4))
        while True:
            freqs = np.sort(rng.uniform(100, 4000, k))
            if k == 1 or np.min(np.diff(freqs)) >= 3 * BIN_HZ:
                break
        true = [ModalComponent.from_hz(rng.uniform(0.2, 1.0), f, rng.uniform(1, 30), rng.uniform(0, 2 * np.pi))
                for f in freqs]
        assert_recovered(true, modal_fit(synthesize_modes(true, FS, int(FS)), FS, k))


def test_modal_silence_is_empty():
    assert modal_fit(np.zeros(int(FS)), FS, 4) == []


def test_modal_too_short():
    with pytest.raises(ValueError):
        modal_fit(np.ones(1000), FS, 2)


def test_modal_component_units():
    m = ModalComponent.from_hz(1.0, 100.0, 2.0, 0.5)
    assert m.frequency == pytest.approx(2 * np.pi * 100)
    assert m.frequency_hz == pytest.approx(100.0)
    x = synthesize_modes([m], FS, 10)
    assert x[0] == pytest.approx(math.cos(0.5))


# ---------------------------------------------------------------- loss filter


def test_loss_fit_uniform_alpha():
    rows = np.array([[220.0 * k, 5.0] for k in range(1, 8)])
    fit = loss_filter_fit(rows, 100, FS)
    assert fit.pole == 0.0
    assert fit.gain == pytest.approx(math.exp(-5 * 100 / 44100), rel=1e-12)
    assert fit.gain == pytest.approx(0.98873, abs=1e-5)


def test_loss_fit_lowpass_when_alpha_rises():
    rows = np.array([[220.0 * k, 2.0 + 1.5 * k**2] for k in range(1, 9)])
    fit = loss_filter_fit(rows, FS / 220, FS)
    assert fit.pole > 0
    assert fit.residual < fit.flat_residual


def test_loss_fit_infeasible():
    with pytest.raises(InfeasibleError):
        loss_filter_fit(np.array([[220.0, 3.0], [440.0, -1.0]]), 200, FS)
    with pytest.raises(ValueError):
        loss_filter_fit(np.zeros((0, 2)), 200, FS)


def test_loss_fit_self_consistent():
    f0 = 220.0
    true = FdlParams(f0=f0, loss_filter=LoopFilter.one_pole(0.3), loop_gain=0.996, duration=2.0,
                     excitation=Excitation(seed=2))
    target = partial_decays(fdl_render(true), FS, f0, 6)
    fit = loss_filter_fit(target, FS / f0, FS)
    again = FdlParams(f0=f0, loss_filter=fit.filter, loop_gain=fit.gain, duration=2.0, excitation=Excitation(seed=2))
    measured = partial_decays(fdl_render(again), FS, f0, 6)
    np.testing.assert_allclose(measured[:, 1], target[:, 1], rtol=0.05)
    assert fit.pole == pytest.approx(0.3, abs=0.05)


# ---------------------------------------------------------------- GA


def test_ga_config_validation():
    with pytest.raises(ValueError, match="degenerate"):
        GaConfig(bounds={"f0": (220, 220)})
    with pytest.raises(ValueError):
        GaConfig(mutation_rate=1.5)
    with pytest.raises(ValueError):
        GaConfig(weighting="loudness")
    with pytest.raises(ValueError):
        GaConfig(population=1)


def _target(f0=220.0, g=0.99, duration=0.5):
    return fdl_render(FdlParams(f0=f0, loop_gain=g, duration=duration, excitation=Excitation("impulse")))


def test_fitness_zero_at_own_parameters():
    y = _target()
    for weighting in ("flat", "db_domain"):
        assert HarmonicFitness(y, FS, 10, weighting)(y) == 0.0


def test_fitness_level_matching():
    y = _target()
    fit = HarmonicFitness(y, FS, 10, "db_domain", match_level=True)
    assert fit.level(0.25 * y) == pytest.approx(4.0, rel=1e-9)
    assert fit(0.25 * y) == pytest.approx(0.0, abs=1e-12)


def test_ga_deterministic_and_monotone():
    y = _target()
    cfg = GaConfig(population=12, generations=6, bounds={"f0": (210.0, 230.0), "loop_gain": (0.97, 1.0)}, seed=3)
    a = ga_optimize(y, FS, "fdl", cfg)
    b = ga_optimize(y, FS, "fdl", cfg)
    assert a.trace == b.trace and a.params == b.params
    assert all(x >= y_ for x, y_ in zip(a.trace, a.trace[1:]))
    assert len(a.trace) == cfg.generations + 1
    c = ga_optimize(y, FS, "fdl", GaConfig(population=12, generations=6, bounds=cfg.bounds, seed=4))
    assert c.params != a.params


def test_ga_errors():
    with pytest.raises(UnvoicedError):
        ga_optimize(np.random.default_rng(0).standard_normal(22050), FS, "fdl", GaConfig(population=4, generations=1))
    with pytest.raises(ValueError, match="fdl"):
        ga_optimize(_target(), FS, "clarinet")


@pytest.mark.slow
def test_ga_self_target_recovery():
    y = _target(220.0, 0.990, 0.5)
    res = ga_optimize(y, FS, "fdl", GaConfig(population=64, generations=60))
    assert abs(cents(res.params["f0"], 220.0)) <= 1.0
    assert abs(res.params["loop_gain"] - 0.990) <= 0.005
