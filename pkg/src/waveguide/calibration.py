"""Parameter estimation: pitch, modal analysis, partial decay tracking,
loss-filter fitting and a genetic optimizer with harmonic spectral fitness.

Analysis front end throughout: 4096-sample Hann frames with 75% overlap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, signal as sps

from .core import LoopFilter
from .strings import Excitation, FdlParams, fdl_render

__all__ = [
    "FRAME",
    "HOP",
    "UnvoicedError",
    "InfeasibleError",
    "ModalComponent",
    "estimate_f0",
    "synthesize_modes",
    "modal_fit",
    "partial_decays",
    "LossFit",
    "loss_filter_fit",
    "GaConfig",
    "GaResult",
    "HarmonicFitness",
    "ga_optimize",
]

FRAME = 4096
HOP = FRAME // 4
ZERO_PAD = 8


class UnvoicedError(ValueError):
    """No periodicity strong enough to call the signal pitched."""


class InfeasibleError(ValueError):
    pass


def _window() -> np.ndarray:
    return sps.get_window("hann", FRAME)


def _frames(x: np.ndarray) -> np.ndarray:
    """Rows are successive analysis frames (unwindowed); short input is zero padded."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) < FRAME:
        x = np.pad(x, (0, FRAME - len(x)))
    count = 1 + (len(x) - FRAME) // HOP
    return np.lib.stride_tricks.sliding_window_view(x, FRAME)[::HOP][:count]


# ---------------------------------------------------------------- pitch


def _spectral_peak(x: np.ndarray, fs: float, lo_hz: float, hi_hz: float) -> tuple[float, float]:
    """Hann-windowed, zero-padded spectral peak in a band; (frequency, magnitude)."""
    nfft = 1 << (ZERO_PAD * len(x) - 1).bit_length()
    spec = np.abs(np.fft.rfft(np.hanning(len(x)) * x, nfft))
    lo = max(int(lo_hz * nfft / fs), 1)
    hi = min(int(math.ceil(hi_hz * nfft / fs)), len(spec) - 2)
    k = lo + int(np.argmax(spec[lo : hi + 1]))
    a, b, c = np.log(spec[k - 1 : k + 2] + 1e-300)
    denom = a - 2 * b + c
    delta = 0.5 * (a - c) / denom if denom < 0 else 0.0
    return (k + delta) * fs / nfft, float(spec.max() and spec[k] / spec.max())


def estimate_f0(x: np.ndarray, fs: float, fmin: float = 50.0, fmax: float = 2000.0,
                voicing_threshold: float = 0.3) -> float:
    """Fundamental frequency of a pitched signal.

    The period is located on the normalized autocorrelation (each lag divided
    by the energies of the two overlapping segments, so steady decay does not
    bias it). The estimate is then refined on the spectral peak of the
    fundamental partial, which keeps slightly inharmonic upper partials from
    pulling the result. If the fundamental is missing the parabolic
    autocorrelation estimate is returned.
    """
    x = np.asarray(x, dtype=np.float64)
    max_lag = int(math.ceil(fs / fmin))
    min_lag = max(2, int(math.floor(fs / fmax)))
    if len(x) < 4 * fs / 50.0:
        raise ValueError(f"signal too short: need at least {4 * fs / 50.0:.0f} samples")
    x = x - np.mean(x)
    n = len(x)
    nfft = 1 << (2 * n - 1).bit_length()
    acf = np.fft.irfft(np.abs(np.fft.rfft(x, nfft)) ** 2, nfft)[: max_lag + 2]
    csum = np.concatenate([[0.0], np.cumsum(x * x)])
    total = csum[-1]
    if total <= 0.0:
        raise UnvoicedError("signal is silent")
    lags = np.arange(min_lag - 1, max_lag + 2)
    head = csum[n - lags]
    tail = total - csum[lags]
    nccf = acf[lags] / np.sqrt(np.maximum(head * tail, 1e-300))
    inner = nccf[1:-1]
    is_peak = (inner >= nccf[:-2]) & (inner > nccf[2:])
    peaks = np.flatnonzero(is_peak) + 1
    if peaks.size == 0 or nccf[peaks].max() < voicing_threshold:
        raise UnvoicedError("no autocorrelation peak above the voicing threshold")
    i = peaks[np.argmax(nccf[peaks] >= 0.9 * nccf[peaks].max())]
    ym, y0, yp = nccf[i - 1 : i + 2]
    denom = ym - 2 * y0 + yp
    lag = lags[i] + (0.5 * (ym - yp) / denom if denom < 0 else 0.0)
    coarse = fs / lag
    freq, rel = _spectral_peak(x, fs, coarse * 0.9, coarse * 1.1)
    if rel < 1e-3 or abs(freq - coarse) > 0.05 * coarse:
        return float(coarse)
    return float(freq)


# ---------------------------------------------------------------- modal analysis


@dataclass
class ModalComponent:
    """One term ``A exp(-alpha t) cos(omega t + phi)``; omega in rad/s."""

    amplitude: float
    frequency: float
    damping: float
    phase: float = 0.0

    @property
    def frequency_hz(self) -> float:
        return self.frequency / (2 * np.pi)

    @classmethod
    def from_hz(cls, amplitude, frequency_hz, damping, phase=0.0) -> ModalComponent:
        return cls(amplitude, 2 * np.pi * frequency_hz, damping, phase)


def synthesize_modes(components, fs: float, n_samples: int) -> np.ndarray:
    t = np.arange(n_samples) / fs
    out = np.zeros(n_samples)
    for c in components:
        out += c.amplitude * np.exp(-c.damping * t) * np.cos(c.frequency * t + c.phase)
    return out


def _peak_frequency(frame_spectrum: np.ndarray, fs: float, lo_bin: int, hi_bin: int) -> float:
    """Quadratic interpolation of the log-magnitude peak between two fine bins."""
    lo_bin = max(lo_bin, 1)
    hi_bin = min(hi_bin, len(frame_spectrum) - 2)
    seg = frame_spectrum[lo_bin : hi_bin + 1]
    k = lo_bin + int(np.argmax(seg))
    k = min(max(k, 1), len(frame_spectrum) - 2)
    a, b, c = np.log(frame_spectrum[k - 1 : k + 2] + 1e-300)
    denom = a - 2 * b + c
    delta = 0.5 * (a - c) / denom if denom < 0 else 0.0
    return (k + delta) * fs / (FRAME * ZERO_PAD)


def _track(x: np.ndarray, fs: float, freq: float) -> np.ndarray:
    """Complex DTFT of each Hann frame at one frequency (time origin per frame)."""
    frames = _frames(x)
    n = np.arange(FRAME)
    kernel = _window() * np.exp(-2j * np.pi * freq * n / fs)
    return frames @ kernel


def _decay_fit(track: np.ndarray, floor_db: float = -60.0) -> tuple[float, int]:
    """Least-squares slope of the log magnitude track, as a decay rate in 1/s."""
    mag = np.abs(track)
    if mag[0] <= 0:
        return 0.0, 0
    keep = mag >= mag[0] * 10 ** (floor_db / 20)
    # stop at the first frame that falls below the floor
    stop = int(np.argmin(keep)) if not keep.all() else len(mag)
    stop = max(stop, 2)
    t = np.arange(stop) * HOP
    slope = np.polyfit(t, np.log(mag[:stop] + 1e-300), 1)[0]
    return -slope, stop


def _fit_one(x: np.ndarray, fs: float, freq_guess: float) -> ModalComponent:
    w = _window()
    seg = np.zeros(FRAME)
    m = min(FRAME, len(x))
    seg[:m] = x[:m]
    spec = np.abs(np.fft.rfft(w * seg, FRAME * ZERO_PAD))
    centre = int(round(freq_guess * FRAME * ZERO_PAD / fs))
    freq = _peak_frequency(spec, fs, centre - ZERO_PAD, centre + ZERO_PAD)
    track = _track(x, fs, freq)
    damping_per_sample, _ = _decay_fit(track)
    alpha = damping_per_sample * fs
    gain = np.sum(w * np.exp(-damping_per_sample * np.arange(FRAME)))
    c = track[0] / gain
    return ModalComponent(float(2 * abs(c)), float(2 * np.pi * freq), float(alpha), float(np.angle(c)))


def modal_fit(x: np.ndarray, fs: float, max_modes: int, floor_db: float = -60.0,
              iterations: int = 4) -> list[ModalComponent]:
    """Estimate damped-sinusoid components of ``x``.

    Modes are found one at a time: the strongest peak of the first frame's
    zero-padded spectrum is fitted and subtracted before the next search, so
    window sidelobes of strong modes are never mistaken for modes. Each mode
    is then re-estimated from the signal minus all other modes, which removes
    most cross-mode leakage from the log-amplitude tracks. Peaks below the
    floor (``floor_db`` under the strongest, or ten times the median
    spectral level) end the search.
    """
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 0.25 * fs:
        raise ValueError("modal_fit needs at least 0.25 s of signal")
    w = _window()
    n = len(x)

    def first_frame_spectrum(sig):
        return np.abs(np.fft.rfft(w * sig[:FRAME], FRAME * ZERO_PAD))

    spec = first_frame_spectrum(x)
    peak = spec.max()
    if peak <= 0:
        return []
    floor = max(peak * 10 ** (floor_db / 20), 10 * np.median(spec))
    bin_hz = fs / FRAME
    modes: list[ModalComponent] = []
    residual = x.copy()
    excluded = np.zeros(len(spec), dtype=bool)
    excluded[: 2 * ZERO_PAD] = True  # DC and the first analysis bin
    excluded[-1] = True
    while len(modes) < max_modes:
        masked = np.where(excluded, 0.0, spec)
        k = int(np.argmax(masked))
        if masked[k] <= floor:
            break
        freq = _peak_frequency(spec, fs, k - 1, k + 1)
        if any(abs(freq - m.frequency_hz) < bin_hz for m in modes):
            # leftover of an already fitted mode
            excluded[max(k - ZERO_PAD, 0) : k + ZERO_PAD + 1] = True
            continue
        mode = _fit_one(residual, fs, freq)
        modes.append(mode)
        residual -= synthesize_modes([mode], fs, n)
        spec = first_frame_spectrum(residual)
    for _ in range(iterations if len(modes) > 1 else 0):
        for i in range(len(modes)):
            others = synthesize_modes(modes[:i] + modes[i + 1 :], fs, n)
            modes[i] = _fit_one(x - others, fs, modes[i].frequency_hz)
    return sorted(modes, key=lambda c: c.frequency)


def partial_decays(x: np.ndarray, fs: float, f0: float, n_partials: int,
                   floor_db: float = -60.0) -> np.ndarray:
    """Decay rate (1/s) of each harmonic partial near k*f0.

    Returns an array of ``(frequency_hz, alpha)`` rows; partials at or
    above Nyquist are skipped.
    """
    x = np.asarray(x, dtype=np.float64)
    w = _window()
    spec = np.abs(np.fft.rfft(w * _frames(x)[0], FRAME * ZERO_PAD))
    scale = FRAME * ZERO_PAD / fs
    rows = []
    for k in range(1, n_partials + 1):
        guess = k * f0
        if guess + 0.5 * f0 >= fs / 2:
            break
        lo = int((guess - 0.3 * f0) * scale)
        hi = int((guess + 0.3 * f0) * scale)
        freq = _peak_frequency(spec, fs, lo, hi)
        rate, _ = _decay_fit(_track(x, fs, freq), floor_db)
        rows.append((freq, rate * fs))
    return np.array(rows).reshape(-1, 2)


# ---------------------------------------------------------------- loss filter


@dataclass
class LossFit:
    filter: LoopFilter
    gain: float
    pole: float
    residual: float
    flat_residual: float


def _onepole_logmag(pole: float, omega: np.ndarray) -> np.ndarray:
    return np.log(1.0 - pole) - 0.5 * np.log(1.0 - 2.0 * pole * np.cos(omega) + pole * pole)


def loss_filter_fit(decays, loop_length: float, fs: float) -> LossFit:
    """Fit ``g |H(e^{jw})|`` (one-pole lowpass H, scalar g) to per-pass gains.

    The target per-pass gain of a partial with decay alpha is
    ``exp(-alpha N / fs)``; the fit is least squares on log magnitudes.
    """
    decays = np.atleast_2d(np.asarray(decays, dtype=np.float64))
    if decays.size == 0:
        raise ValueError("need at least one partial")
    freqs, alphas = decays[:, 0], decays[:, 1]
    if np.any(alphas < 0):
        raise InfeasibleError("negative decay rate implies a per-pass gain above 1")
    target = -alphas * loop_length / fs
    omega = 2 * np.pi * freqs / fs

    def solve(pole: float) -> tuple[float, float]:
        model = _onepole_logmag(pole, omega)
        log_g = min(float(np.mean(target - model)), 0.0)
        return log_g, float(np.sum((target - model - log_g) ** 2))

    flat_log_g, flat_res = solve(0.0)
    pole, res, log_g = 0.0, flat_res, flat_log_g
    if len(freqs) > 1 and flat_res > 0:
        opt = optimize.minimize_scalar(lambda p: solve(p)[1], bounds=(0.0, 0.999), method="bounded",
                                       options={"xatol": 1e-10})
        cand_log_g, cand_res = solve(opt.x)
        if cand_res < flat_res:
            pole, res, log_g = float(opt.x), cand_res, cand_log_g
    filt = LoopFilter.identity() if pole == 0.0 else LoopFilter.one_pole(pole)
    return LossFit(filt, math.exp(log_g), pole, res, flat_res)


# ---------------------------------------------------------------- genetic optimizer


@dataclass
class GaConfig:
    population: int = 64
    generations: int = 60
    bounds: dict = field(default_factory=lambda: {"f0": (196.0, 247.0), "loop_gain": (0.95, 1.0)})
    mutation_rate: float = 0.2
    crossover_rate: float = 0.9
    harmonic_count: int = 10
    weighting: str = "db_domain"
    seed: int = 0
    match_level: bool = False
    tournament_size: int = 3
    elitism: int = 1
    mutation_scale: float = 0.1

    def __post_init__(self):
        for name, (lo, hi) in self.bounds.items():
            if not hi > lo:
                raise ValueError(f"bounds for {name!r} are degenerate: ({lo}, {hi})")
        for name in ("mutation_rate", "crossover_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.weighting not in ("flat", "db_domain"):
            raise ValueError("weighting must be 'flat' or 'db_domain'")
        if self.population < 2 or self.generations < 1 or self.harmonic_count < 1:
            raise ValueError("population >= 2, generations >= 1 and harmonic_count >= 1 required")
        if not 0 <= self.elitism < self.population:
            raise ValueError("elitism must be smaller than the population")


@dataclass
class GaResult:
    params: dict
    fitness: float
    trace: list
    target_f0: float
    template: FdlParams = field(repr=False)
    level: float = 1.0

    def fdl_params(self) -> FdlParams:
        return replace(self.template, **self.params)


class HarmonicFitness:
    """Weighted squared distance between harmonic magnitude tracks.

    Magnitudes are DTFT values at k*f0 (k = 1..H, f0 measured on the
    target) in every analysis frame; the fitness is the frame-averaged sum
    over harmonics. ``db_domain`` compares 20*log10 magnitudes with a floor
    80 dB below the target's loudest harmonic. With ``match_level`` the
    candidate is first scaled by :meth:`level`, so an unknown output gain
    does not count against it.
    """

    FLOOR_DB = -80.0

    def __init__(self, target: np.ndarray, fs: float, harmonic_count: int = 10,
                 weighting: str = "db_domain", f0: float | None = None, match_level: bool = False):
        self.fs = fs
        self.n = len(target)
        self.f0 = estimate_f0(target, fs) if f0 is None else f0
        ks = np.arange(1, harmonic_count + 1)
        ks = ks[ks * self.f0 < fs / 2]
        n = np.arange(FRAME)
        self._kernel = _window()[:, None] * np.exp(-2j * np.pi * np.outer(n, ks * self.f0) / fs)
        self.weighting = weighting
        self.match_level = match_level
        raw = self._raw(target)
        self._floor = raw.max() * 10 ** (self.FLOOR_DB / 20)
        self._target = self._scale(raw)

    def _raw(self, x: np.ndarray) -> np.ndarray:
        return np.abs(_frames(x) @ self._kernel)

    def _scale(self, mags: np.ndarray) -> np.ndarray:
        if self.weighting == "db_domain":
            return 20 * np.log10(np.maximum(mags, self._floor))
        return mags

    def magnitudes(self, x: np.ndarray) -> np.ndarray:
        return self._scale(self._raw(x))

    def level(self, x: np.ndarray) -> float:
        """Gain that best aligns the candidate's harmonic magnitudes with the target."""
        if self.weighting == "db_domain":
            return float(10 ** (np.mean(self._target - self.magnitudes(x)) / 20))
        c = self._raw(x)
        denom = float(np.sum(c * c))
        return float(np.sum(self._target * c) / denom) if denom > 0 else 1.0

    def __call__(self, x: np.ndarray) -> float:
        if self.match_level:
            x = x * self.level(x)
        diff = self._target - self.magnitudes(x)
        return float(np.mean(np.sum(diff * diff, axis=1)))


def _fdl_template(target: np.ndarray, fs: float, bounds: dict) -> FdlParams:
    """Fixed part of every candidate: averager loss filter, allpass tuning and
    a unit impulse excitation (flat spectrum, no dependence on the bounds)."""
    f_hi = bounds.get("f0", (50.0, 2000.0))[1]
    return FdlParams(sample_rate=fs, f0=min(440.0, f_hi), duration=len(target) / fs,
                     excitation=Excitation("impulse"))


def ga_optimize(target: np.ndarray, fs: float, model: str = "fdl", config: GaConfig | None = None,
                template: FdlParams | None = None) -> GaResult:
    """Generational GA over FDL parameters with harmonic spectral fitness.

    Tournament selection, uniform crossover, Gaussian mutation with sigma a
    fixed fraction of each bound's width (clipped to bounds), and elitism.
    Candidates are evaluated in index order, so results depend only on the
    seed.
    """
    if model != "fdl":
        raise ValueError(f"genetic calibration supports model 'fdl' only, got {model!r}")
    config = config or GaConfig()
    target = np.asarray(target, dtype=np.float64)
    fitness = HarmonicFitness(target, fs, config.harmonic_count, config.weighting, match_level=config.match_level)
    template = template or _fdl_template(target, fs, config.bounds)
    template = replace(template, sample_rate=fs, duration=len(target) / fs)
    names = list(config.bounds)
    lo = np.array([config.bounds[k][0] for k in names], dtype=np.float64)
    hi = np.array([config.bounds[k][1] for k in names], dtype=np.float64)
    sigma = config.mutation_scale * (hi - lo)
    rng = np.random.default_rng(config.seed)

    def evaluate(genome: np.ndarray) -> float:
        params = replace(template, **dict(zip(names, genome.tolist())))
        return fitness(fdl_render(params))

    pop = lo + rng.random((config.population, len(names))) * (hi - lo)
    fit = np.array([evaluate(g) for g in pop])
    trace = []

    def tournament() -> np.ndarray:
        picks = rng.integers(0, config.population, config.tournament_size)
        return pop[picks[np.argmin(fit[picks])]]

    for _ in range(config.generations):
        order = np.argsort(fit, kind="stable")
        trace.append(float(fit[order[0]]))
        children = [pop[i].copy() for i in order[: config.elitism]]
        child_fit = [fit[i] for i in order[: config.elitism]]
        while len(children) < config.population:
            a, b = tournament(), tournament()
            if rng.random() < config.crossover_rate:
                child = np.where(rng.random(len(names)) < 0.5, a, b)
            else:
                child = a.copy()
            mutate = rng.random(len(names)) < config.mutation_rate
            child = np.clip(child + mutate * rng.normal(0.0, sigma), lo, hi)
            children.append(child)
            child_fit.append(None)
        pop = np.array(children)
        fit = np.array([f if f is not None else evaluate(g) for g, f in zip(pop, child_fit)])
    best = int(np.argmin(fit))
    trace.append(float(fit[best]))
    params = dict(zip(names, pop[best].tolist()))
    level = fitness.level(fdl_render(replace(template, **params))) if config.match_level else 1.0
    return GaResult(params, float(fit[best]), trace, fitness.f0, template, level)
