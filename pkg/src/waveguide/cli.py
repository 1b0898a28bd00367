"""Command line front end: render, analyze, calibrate, list-models.

Exit status is 0 on success, 1 for invalid input (bad config, flags or
unsupported requests) and 2 for runtime failures (I/O, model errors).
Reports go to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import METRICS, analyze_signal
from .calibration import (
    GaConfig,
    InfeasibleError,
    UnvoicedError,
    estimate_f0,
    ga_optimize,
    loss_filter_fit,
    modal_fit,
)
from .config import MODEL_DESCRIPTIONS, MODEL_SCHEMAS, ConfigError, dump_config, parse_config
from .render import run_render
from .wavio import read_wav

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2

CALIBRATION_METHODS = {("fdl", "ga"), ("fdl", "modal")}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override every job's seed")
    common.add_argument("--sample-rate", type=int, default=None, help="override every job's sample rate")

    parser = _Parser(prog="waveguide", description="Digital waveguide synthesis renderer and analyzer")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("render", parents=[common], help="render every job in a config file")
    p.add_argument("config")
    p.add_argument("--jobs", type=int, default=1, help="render up to N jobs concurrently")

    p = sub.add_parser("analyze", help="measure metrics on a WAV file")
    p.add_argument("wav")
    p.add_argument("--metrics", default="f0", help=f"comma-separated subset of {','.join(METRICS)}")

    p = sub.add_parser("calibrate", parents=[common], help="fit model parameters to a recording")
    p.add_argument("wav")
    p.add_argument("--model", required=True, help="model to calibrate (fdl)")
    p.add_argument("--method", required=True, choices=("ga", "modal"))
    p.add_argument("--out", required=True, help="config file to write")
    p.add_argument("--population", type=int, default=64)
    p.add_argument("--generations", type=int, default=60)
    p.add_argument("--max-modes", type=int, default=8)

    sub.add_parser("list-models", help="list renderable models and their parameters")
    return parser


def cmd_render(args) -> int:
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    jobs = parse_config(args.config, sample_rate=args.sample_rate, seed=args.seed)

    def work(job):
        try:
            _, report = run_render(job)
            return report, None
        except Exception as exc:  # reported with the job name, after earlier jobs' output
            return "", f"job {job.name!r} ({job.model}): {exc}"

    if args.jobs == 1:
        results = [work(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(work, jobs))
    status = EXIT_OK
    for report, error in results:
        for line in report.splitlines():
            stream = sys.stderr if line.startswith("warning:") else sys.stdout
            print(line, file=stream)
        if error:
            _err(error)
            status = EXIT_RUNTIME
    return status


def cmd_analyze(args) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in metrics if m not in METRICS]
    if unknown or not metrics:
        raise UsageError(f"unknown metric(s) {', '.join(unknown) or '(none given)'}; choose from {', '.join(METRICS)}")
    x, fs = read_wav(args.wav)
    for line in analyze_signal(x, fs, metrics):
        print(line)
    return EXIT_OK


def _fdl_job(name: str, output: str, duration: float, params: dict, calibration: dict, gain: float = 1.0) -> dict:
    return {"name": name, "model": "fdl", "duration": duration, "output": output, "gain": gain,
            "params": params, "calibration": calibration}


def _calibrate_ga(x, fs, args):
    f0 = estimate_f0(x, fs)
    bounds = {"f0": (f0 * 2 ** (-1 / 12), f0 * 2 ** (1 / 12)), "loop_gain": (0.95, 1.0)}
    cfg = GaConfig(population=args.population, generations=args.generations, bounds=bounds,
                   seed=0 if args.seed is None else args.seed, match_level=True)
    result = ga_optimize(x, fs, "fdl", cfg)
    exc = result.template.excitation
    params = {
        "f0": result.params["f0"],
        "loop_gain": result.params["loop_gain"],
        "excitation": {"kind": exc.kind, "amplitude": exc.amplitude},
    }
    meta = {"method": "ga", "fitness": result.fitness, "target_f0": result.target_f0,
            "population": cfg.population, "generations": cfg.generations, "seed": cfg.seed}
    return params, meta, {"fitness": result.fitness, "gain": result.level}


def _calibrate_modal(x, fs, args):
    f0 = estimate_f0(x, fs)
    modes = modal_fit(x, fs, args.max_modes)
    if not modes:
        raise InfeasibleError("no spectral peaks above the noise floor")
    rows = []
    for m in modes:
        k = round(m.frequency_hz / f0)
        if k >= 1 and abs(m.frequency_hz - k * f0) <= 0.03 * k * f0:
            rows.append((m.frequency_hz, max(m.damping, 0.0)))
    if not rows:
        raise InfeasibleError("no fitted mode lies near a harmonic of the estimated f0")
    fit = loss_filter_fit(np.array(rows), fs / f0, fs)
    loss = {"type": "identity"} if fit.pole == 0.0 else {"type": "one_pole", "pole": fit.pole}
    params = {"f0": f0, "loop_gain": fit.gain, "loss_filter": loss}
    meta = {
        "method": "modal",
        "residual": fit.residual,
        "modes": [[m.frequency_hz, m.damping, m.amplitude, m.phase] for m in modes],
        "mode_fields": ["frequency_hz", "damping_per_s", "amplitude", "phase_rad"],
    }
    return params, meta, {"residual": fit.residual}


def cmd_calibrate(args) -> int:
    pair = (args.model, args.method)
    if pair not in CALIBRATION_METHODS:
        supported = ", ".join(f"{m}/{k}" for m, k in sorted(CALIBRATION_METHODS))
        raise UsageError(f"calibration of model {args.model!r} with method {args.method!r} is not "
                         f"supported (supported: {supported})")
    if args.model not in MODEL_SCHEMAS:
        raise UsageError(f"unknown model {args.model!r}")
    x, fs = read_wav(args.wav)
    if args.sample_rate is not None and args.sample_rate != fs:
        raise UsageError(f"--sample-rate {args.sample_rate} does not match the target file ({fs} Hz)")
    start = time.perf_counter()
    if args.method == "ga":
        params, meta, scores = _calibrate_ga(x, fs, args)
    else:
        params, meta, scores = _calibrate_modal(x, fs, args)
    elapsed = time.perf_counter() - start
    out = Path(args.out)
    job = _fdl_job(out.stem, f"{out.stem}.wav", len(x) / fs, params, meta, scores.get("gain", 1.0))
    text = dump_config([job], {"sample_rate": fs, "seed": 0 if args.seed is None else args.seed},
                       header=f"calibrated from {Path(args.wav).name} ({args.method})")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    report_lines = [f"model={args.model}", f"method={args.method}"]
    report_lines += [f"{k}={v:.6g}" for k, v in scores.items()]
    report_lines += [f"f0={params['f0']:.4f} hz", f"loop_gain={params['loop_gain']:.6f}",
                     f"wall_time={elapsed:.3f} s", f"config={out}"]
    report = out.with_name(out.stem + ".report.txt")
    report.write_text("\n".join(report_lines) + "\n", encoding="utf-8")
    print("\n".join(report_lines))
    return EXIT_OK


def cmd_list_models(args) -> int:
    for name, schema in MODEL_SCHEMAS.items():
        print(f"{name}: {MODEL_DESCRIPTIONS[name]}")
        fields = ", ".join(f"{k}{'*' if p.required else ''}" for k, p in schema.items())
        print(f"    params: {fields}")
    return EXIT_OK


COMMANDS = {"render": cmd_render, "analyze": cmd_analyze, "calibrate": cmd_calibrate, "list-models": cmd_list_models}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        for problem in exc.problems:
            _err(problem)
        return EXIT_VALIDATION
    except UsageError as exc:
        _err(str(exc))
        return EXIT_VALIDATION
    except (UnvoicedError, InfeasibleError) as exc:
        _err(f"calibration failed: {exc}")
        return EXIT_RUNTIME
    except (OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
