import math

import numpy as np
import pytest
from scipy import signal

from waveguide.calibration import estimate_f0, partial_decays
from waveguide.core import LoopFilter
from waveguide.strings import (
    BowedString,
    BowParams,
    Excitation,
    FdlParams,
    FilteredDelayLoop,
    FrictionCurve,
    FrictionTable,
    TerminationFilter,
    TravelingWaveLine,
    bowed_string_tick,
    commuted_render,
    fdl_filter,
    fdl_render,
    fdl_transfer_function,
    fdl_tune,
    ideal_string_tick,
    terminated_string_render,
)

FS = 44100.0


def cents(f, ref):
    return 1200 * math.log2(f / ref)


def first_period(y, tol=1e-12):
    """Smallest shift p > 0 with y[n + p] == y[n] over the tail of the signal."""
    for p in range(1, len(y) // 2):
        if np.max(np.abs(y[p:] - y[:-p])) <= tol:
            return p
    return None


# ---------------------------------------------------------------- ideal string


def test_ideal_string_silent_without_input():
    line = TravelingWaveLine(20)
    assert all(ideal_string_tick(line, pickup=5) == 0.0 for _ in range(200))


@pytest.mark.parametrize("M", [5, 17, 32])
def test_ideal_string_period_2M(M):
    line = TravelingWaveLine(M)
    out = [ideal_string_tick(line, (0, 1.0) if n == 0 else None, pickup=M - 1) for n in range(12 * M)]
    out = np.array(out)
    assert np.any(out != 0)
    assert first_period(out[2 * M :], tol=0) == 2 * M


def test_ideal_string_same_tick_cancellation():
    line = TravelingWaveLine(10)
    line.inject(4, 1.3)
    line.inject(4, -1.3)
    assert line.energy() == 0.0
    assert all(ideal_string_tick(line, pickup=2) == 0.0 for _ in range(50))


def test_ideal_string_range_errors():
    line = TravelingWaveLine(8)
    with pytest.raises(IndexError):
        ideal_string_tick(line, (8, 1.0))
    with pytest.raises(IndexError):
        ideal_string_tick(line, pickup=-1)


def test_ideal_string_energy_constant():
    rng = np.random.default_rng(2)
    line = TravelingWaveLine(64)
    line.set_state(rng.standard_normal(64), rng.standard_normal(64))
    e0 = line.energy()
    for _ in range(10_000):
        ideal_string_tick(line, pickup=0)
    assert abs(line.energy() - e0) <= 1e-10 * e0


def test_ideal_string_linearity():
    rng = np.random.default_rng(3)
    M, n = 30, 400
    a, b = rng.standard_normal(40), rng.standard_normal(40)
    ca, cb = 0.7, -1.9

    def run(e):
        line = TravelingWaveLine(M)
        return np.array([ideal_string_tick(line, (7, e[i]) if i < len(e) else None, pickup=21) for i in range(n)])

    np.testing.assert_allclose(run(ca * a + cb * b), ca * run(a) + cb * run(b), atol=1e-12)


def test_traveling_wave_line_steps():
    from waveguide.scattering import StringMedium

    line = TravelingWaveLine(10, StringMedium(100, 0.01), 1000.0)
    assert line.temporal_step == 1e-3
    assert line.spatial_step == pytest.approx(0.1)


# ---------------------------------------------------------------- terminated string


def test_terminated_rigid_equals_ideal():
    M, n = 25, 500
    e = np.random.default_rng(4).standard_normal(10)
    ideal = TravelingWaveLine(M)
    ref = [ideal_string_tick(ideal, (3, e[i]) if i < len(e) else None, pickup=11) for i in range(n)]
    out = terminated_string_render(TravelingWaveLine(M), TerminationFilter.rigid(), TerminationFilter.rigid(),
                                   e, 11, n, excite_position=3)
    np.testing.assert_array_equal(out, ref)
    assert first_period(out[2 * M :], tol=0) == 2 * M


def test_terminated_gain_zero_dies_after_round_trip():
    M = 30
    dead = TerminationFilter(LoopFilter.identity().scaled(0.0))
    out = terminated_string_render(TravelingWaveLine(M), dead, TerminationFilter.rigid(), np.array([1.0]), 0, 400)
    assert np.any(out[: 2 * M] != 0)
    assert np.all(out[2 * M + 1 :] == 0)


def test_terminated_partial_decay_matches_loop_gain():
    M, g = 100, 0.99
    bridge = TerminationFilter(LoopFilter.averager().scaled(g))
    n = int(2 * FS)
    exc = Excitation("noise_burst", length=2 * M, seed=1)
    y = terminated_string_render(TravelingWaveLine(M), bridge, TerminationFilter.rigid(), exc, 37, n, excite_position=13)
    period = 2 * M + 0.5  # two rails plus the averager's half sample
    f0 = FS / period
    rows = partial_decays(y, FS, f0, 6)
    for k, (freq, alpha) in enumerate(rows, start=1):
        per_pass = g * abs(math.cos(math.pi * k * f0 / FS))
        expected = -math.log(per_pass) * FS / period
        assert alpha == pytest.approx(expected, rel=0.02), k


def test_terminated_rms_non_increasing():
    M = 40
    bridge = TerminationFilter(LoopFilter.one_pole(0.3).scaled(0.98))
    exc = np.random.default_rng(5).standard_normal(2 * M)
    y = terminated_string_render(TravelingWaveLine(M), bridge, TerminationFilter.rigid(), exc, 9, 40 * M, 5)
    frames = y[2 * M :].reshape(-1, 2 * M)
    rms = np.sqrt(np.mean(frames**2, axis=1))
    assert np.all(np.diff(rms) <= 1e-12 * rms[0])


def test_terminated_linearity():
    rng = np.random.default_rng(6)
    M, n = 20, 600
    a, b = rng.standard_normal(15), rng.standard_normal(15)

    def run(e):
        br = TerminationFilter(LoopFilter.one_pole(0.4).scaled(0.97))
        nut = TerminationFilter(LoopFilter.averager())
        return terminated_string_render(TravelingWaveLine(M), br, nut, e, 4, n, 8)

    np.testing.assert_allclose(run(2.0 * a - 0.5 * b), 2.0 * run(a) - 0.5 * run(b), atol=1e-12)


def test_termination_filter_validation():
    with pytest.raises(ValueError):
        TerminationFilter(polarity="sideways")
    with pytest.raises(ValueError):
        TerminationFilter(LoopFilter([1.0], [1.0, -1.5]))
    t = TerminationFilter.rigid()
    assert t.reflect(0.25) == -0.25


def test_string_is_a_filtered_delay_loop():
    """Both rails plus the two reflections form one loop of 2M samples
    through the lumped filter (averager at the bridge, inversions cancel)."""
    M, n = 50, 3000
    bridge = TerminationFilter(LoopFilter.averager(), "inverting")
    s = terminated_string_render(TravelingWaveLine(M), bridge, TerminationFilter.rigid(), np.array([1.0]), 0, n, 0)
    p = FdlParams(sample_rate=FS, f0=FS / (2 * M), loss_filter=LoopFilter.averager(), loop_gain=1.0,
                  compensate=False, duration=n / FS)
    assert p.loop_length() == 2 * M
    # undo the loop: what remains is the finite input the string feeds into it
    loop_den = np.zeros(2 * M + 2)
    loop_den[0] = 1.0
    loop_den[2 * M :] -= [0.5, 0.5]
    drive = signal.lfilter(loop_den, [1.0], s)
    assert np.max(np.abs(drive[2 * M + 1 :])) <= 1e-12
    np.testing.assert_allclose(fdl_filter(p, drive[: 2 * M + 1], n), s, atol=1e-9)


# ---------------------------------------------------------------- tuning


def test_fdl_tune_examples():
    n, frac = fdl_tune(44100, 441, LoopFilter.averager())
    assert n + frac == 99.5
    assert (n, frac) == (99, 0.5)
    n, frac = fdl_tune(44100, 441, LoopFilter.identity())
    assert n + frac == 100.0
    n, frac = fdl_tune(48000, 440, LoopFilter.averager())
    assert n + frac == pytest.approx(48000 / 440 - 0.5, abs=1e-9)
    p = FdlParams(sample_rate=48000, f0=440, duration=1.0)
    assert abs(cents(estimate_f0(fdl_render(p), 48000), 440)) <= 1.0


def test_fdl_tune_lagrange_window():
    for f0 in (110, 220, 441, 882):
        n, frac = fdl_tune(44100, f0, LoopFilter.averager(), "lagrange", 3)
        assert 1.0 <= frac <= 2.0
        assert n + frac == pytest.approx(44100 / f0 - 0.5, abs=1e-9)


def test_fdl_tune_unrealizable():
    with pytest.raises(ValueError):
        fdl_tune(44100, 22000, LoopFilter.averager())
    with pytest.raises(ValueError):
        fdl_tune(44100, 30000, LoopFilter.identity())


@pytest.mark.parametrize("f0", [110, 220, 441, 882])
@pytest.mark.parametrize("interp", ["allpass", "lagrange"])
def test_fdl_pitch_within_one_cent(f0, interp):
    p = FdlParams(sample_rate=FS, f0=f0, interp=interp, duration=1.0)
    n, frac = p.tuning()
    total = n + frac + p.loss_filter.phase_delay(f0, FS)
    assert abs(total - FS / f0) <= 1e-6
    assert abs(cents(estimate_f0(fdl_render(p), FS), f0)) <= 1.0


@pytest.mark.parametrize("f0", [110, 220, 441, 882, 300])
def test_fdl_uncompensated_detune_predicted(f0):
    p = FdlParams(sample_rate=FS, f0=f0, compensate=False, duration=1.0)
    n = p.loop_length()
    assert n == round(FS / f0)
    predicted = FS / (n + 0.5)  # rounded line plus the averager's phase delay
    measured = estimate_f0(fdl_render(p), FS)
    assert abs(cents(measured, predicted)) <= 0.1


def test_fdl_lossless_impulse_train():
    p = FdlParams(sample_rate=FS, f0=441, loss_filter=LoopFilter.identity(), loop_gain=1.0,
                  excitation=Excitation("impulse"), duration=0.1)
    y = fdl_render(p)
    assert len(y) == 4410
    hits = np.flatnonzero(y)
    np.testing.assert_array_equal(hits, np.arange(0, 4410, 100))
    np.testing.assert_array_equal(y[hits], 1.0)


def test_fdl_decay_ordering_and_pitch():
    p = FdlParams(sample_rate=FS, f0=220, loop_gain=0.995, duration=2.0, excitation=Excitation(seed=3))
    y = fdl_render(p)
    assert abs(cents(estimate_f0(y, FS), 220)) <= 1.0
    alphas = partial_decays(y, FS, 220, 6)[:, 1]
    assert np.all(np.diff(alphas) > 0)


def test_fdl_deterministic_and_seeded():
    p = FdlParams(excitation=Excitation(seed=9), duration=0.2)
    a, b = fdl_render(p), fdl_render(p)
    assert a.tobytes() == b.tobytes()
    c = fdl_render(FdlParams(excitation=Excitation(seed=10), duration=0.2))
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("interp", ["allpass", "lagrange"])
@pytest.mark.parametrize("comp", [True, False])
def test_fdl_block_matches_sample_loop_and_transfer_function(interp, comp):
    p = FdlParams(f0=331.7, interp=interp, loss_filter=LoopFilter.one_pole(0.3), loop_gain=0.99,
                  compensate=comp, duration=0.05)
    x = np.random.default_rng(7).standard_normal(60)
    n = p.n_samples
    fast = fdl_filter(p, x, n)
    slow = FilteredDelayLoop(p).run(x, n)
    np.testing.assert_allclose(fast, slow, atol=1e-12)
    b, a = fdl_transfer_function(p)
    np.testing.assert_allclose(fast, signal.lfilter(b, a, np.pad(x, (0, n - len(x)))), atol=1e-9)


def test_fdl_params_validation():
    with pytest.raises(ValueError, match="below fs/2"):
        FdlParams(f0=-5)
    with pytest.raises(ValueError):
        FdlParams(loop_gain=1.2)
    with pytest.raises(ValueError):
        FdlParams(interp="cubic")


def test_excitation_kinds():
    assert Excitation("impulse", amplitude=2.0).samples().tolist() == [2.0]
    burst = Excitation("noise_burst", length=50, seed=4).samples(100)
    assert burst.shape == (50,) and np.all(np.abs(burst) <= 1)
    np.testing.assert_array_equal(burst, Excitation("noise_burst", length=50, seed=4).samples(100))
    with pytest.raises(ValueError, match="exceeds the loop length"):
        Excitation("noise_burst", length=200).samples(100)
    ramp = Excitation("pluck_ramp", length=9).samples()
    assert np.argmax(ramp) == 4 and np.all(ramp > 0)
    with pytest.raises(ValueError):
        Excitation("samples")
    with pytest.raises(ValueError):
        Excitation("bogus")


# ---------------------------------------------------------------- commuted


def _string(duration=1.0):
    return FdlParams(f0=196.0, loop_gain=0.996, loss_filter=LoopFilter.one_pole(0.2), duration=duration)


def test_commuted_delta_gives_string_response():
    s = _string(0.2)
    h = fdl_filter(s, np.array([1.0]), s.n_samples)
    for order in ("e_string_body", "ebody_string"):
        np.testing.assert_allclose(commuted_render(np.array([1.0]), s, np.array([1.0]), order), h, atol=1e-15)


def test_commuted_orderings_agree():
    rng = np.random.default_rng(8)
    s = _string(1.0)
    for _ in range(10):
        e, b = rng.standard_normal(64), rng.standard_normal(64)
        y1 = commuted_render(e, s, b, "e_string_body")
        y2 = commuted_render(e, s, b, "ebody_string")
        assert np.max(np.abs(y1 - y2)) <= 1e-9


def test_commuted_linear_in_body():
    s = _string(0.2)
    e = np.random.default_rng(9).standard_normal(32)
    one = commuted_render(e, s, np.array([1.0]), "ebody_string")
    two = commuted_render(e, s, np.array([2.0]), "ebody_string")
    np.testing.assert_array_equal(two, 2 * one)


def test_commuted_errors():
    s = _string(0.1)
    with pytest.raises(ValueError):
        commuted_render(np.array([]), s, np.array([1.0]))
    with pytest.raises(ValueError):
        commuted_render(np.array([1.0]), s, np.array([1.0]), "body_first")


# ---------------------------------------------------------------- bowed string


def test_bow_zero_force_is_transparent():
    M = 60
    rng = np.random.default_rng(10)
    right, left = rng.standard_normal(M), rng.standard_normal(M)
    bowed = BowedString(M, BowParams(bow_force=0.0, bow_velocity=0.3), pickup=17)
    bowed.set_state(right, left)
    plain = TravelingWaveLine(M)
    plain.set_state(right, left)
    ref = terminated_string_render(plain, TerminationFilter.rigid(), TerminationFilter.rigid(), np.zeros(0), 17, 800)
    np.testing.assert_array_equal(bowed.render(800), ref)


def test_bow_stick_condition():
    bow = BowParams(bow_velocity=0.2, bow_force=50.0)
    s = BowedString(80, bow)
    for _ in range(2000):
        bowed_string_tick(s)
        assert abs(s.junction_velocity - bow.bow_velocity) <= 1e-6


def test_friction_curve_shape():
    f = FrictionCurve(bow_force=0.2, friction_slope=1.0)
    assert f(0.0) == 1.0 and f(0.2) == 1.0
    vs = np.linspace(0.21, 3, 50)
    forces = np.array([f(v) * v for v in vs])
    assert np.all(np.diff(forces) < 0)  # slipping friction falls with speed
    assert forces[-1] > 0.3 * 0.2
    assert f(-0.5) == f(0.5)
    assert FrictionCurve(0.0)(0.3) == 0.0


def test_friction_table():
    t = FrictionTable([0.0, 1.0, 2.0], [1.0, 0.5, 0.1])
    assert t(0.5) == 0.75 and t(-1.5) == pytest.approx(0.3) and t(5.0) == 0.1
    with pytest.raises(ValueError):
        FrictionTable([0.0, 0.0], [1.0, 1.0])


def _lossy_bridge():
    return TerminationFilter(LoopFilter.one_pole(0.2).scaled(0.95))


@pytest.mark.parametrize("M", [50, 100, 150])
def test_bowed_period(M):
    s = BowedString(M, BowParams(), bridge=_lossy_bridge())
    y = s.render(int(FS))
    f0 = estimate_f0(y[int(FS) // 2 :], FS)
    assert FS / f0 == pytest.approx(2 * M, rel=0.03)


def test_bowed_deterministic():
    a = BowedString(70, BowParams(), bridge=_lossy_bridge()).render(3000)
    b = BowedString(70, BowParams(), bridge=_lossy_bridge()).render(3000)
    assert a.tobytes() == b.tobytes()


def test_bow_params_validation():
    with pytest.raises(ValueError):
        BowParams(bow_position=1.0)
    with pytest.raises(ValueError):
        BowParams(bow_force=-1)
    with pytest.raises(ValueError):
        BowParams(friction_slope=0)
