"""Render-job configuration: YAML parsing and schema validation.

A config file has an optional ``defaults`` section (``sample_rate``,
``seed``) and a ``jobs`` list. Every job names a ``model`` and carries
model-specific ``params``; see :data:`MODEL_SCHEMAS`. Diagnostics name the
field path, its line in the file and the violated constraint, e.g.
``jobs[0].params.f0 (line 7): must be positive and below fs/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import yaml

__all__ = [
    "ConfigError",
    "Param",
    "RenderJob",
    "MODEL_SCHEMAS",
    "MODEL_DESCRIPTIONS",
    "JOB_FIELDS",
    "parse_config",
    "parse_config_text",
    "validate_params",
    "dump_config",
]


class ConfigError(ValueError):
    """Validation failure; ``problems`` holds one diagnostic per bad field."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))


@dataclass
class Param:
    kind: str  # float, int, bool, str, floats, point, mapping, any
    default: Any = None
    required: bool = False
    check: Callable[[Any, dict], bool] | None = None
    constraint: str = ""
    choices: tuple | None = None
    fields: dict | None = None  # nested schema for kind == "mapping"


def _pos(v, ctx):
    return v > 0


def _unit(v, ctx):
    return -1.0 <= v <= 1.0


def _gain(v, ctx):
    return 0.0 <= v <= 1.0


def _pole(v, ctx):
    return 0.0 <= v < 1.0


def _below_nyquist(v, ctx):
    return 0 < v < ctx["sample_rate"] / 2


EXCITATION = {
    "kind": Param("str", "noise_burst", choices=("noise_burst", "pluck_ramp", "impulse")),
    "length": Param("int", None, check=lambda v, c: v is None or v >= 1, constraint="must be >= 1"),
    "seed": Param("int", None),
    "amplitude": Param("float", 1.0),
}

LOSS_FILTER = {
    "type": Param("str", "averager", choices=("averager", "identity", "one_pole")),
    "pole": Param("float", 0.0, check=_pole, constraint="must lie in [0, 1)"),
}

FDL = {
    "f0": Param("float", required=True, check=_below_nyquist, constraint="must be positive and below fs/2"),
    "loop_gain": Param("float", 0.995, check=_gain, constraint="must lie in [0, 1]"),
    "loss_filter": Param("mapping", fields=LOSS_FILTER),
    "interp": Param("str", "allpass", choices=("allpass", "lagrange")),
    "interp_order": Param("int", 3, check=lambda v, c: 1 <= v <= 5, constraint="must lie in 1..5"),
    "compensate": Param("bool", True),
    "excitation": Param("mapping", fields=EXCITATION),
}

# None means a length-dependent default chosen by the renderer
POSITION = Param("int", None, check=lambda v, c: v is None or v >= 0, constraint="must be >= 0")
STRING_LENGTH = Param("int", 100, check=lambda v, c: v >= 2, constraint="must be an integer >= 2")

MODEL_SCHEMAS: dict[str, dict[str, Param]] = {
    "ideal_string": {
        "length": STRING_LENGTH,
        "excite_position": POSITION,
        "pickup": POSITION,
        "excitation": Param("mapping", fields={**EXCITATION, "kind": Param("str", "pluck_ramp",
                            choices=("noise_burst", "pluck_ramp", "impulse"))}),
    },
    "terminated_string": {
        "length": STRING_LENGTH,
        "bridge_gain": Param("float", 0.99, check=_gain, constraint="must lie in [0, 1]"),
        "bridge_filter": Param("mapping", fields=LOSS_FILTER),
        "nut_gain": Param("float", 1.0, check=_gain, constraint="must lie in [0, 1]"),
        "excite_position": POSITION,
        "pickup": POSITION,
        "excitation": Param("mapping", fields=EXCITATION),
    },
    "fdl": FDL,
    "commuted": {
        **FDL,
        "body_modes": Param("any", [[110.0, 40.0, 1.0], [230.0, 60.0, 0.6], [410.0, 90.0, 0.3]],
                            check=lambda v, c: isinstance(v, list) and len(v) > 0 and all(
                                isinstance(m, list) and len(m) == 3 and all(isinstance(x, (int, float)) for x in m)
                                and m[0] > 0 and m[1] >= 0 for m in v),
                            constraint="must be a nonempty list of [frequency_hz, decay_per_s, amplitude]"),
        "body_length": Param("float", 0.25, check=_pos, constraint="must be positive"),
        "order": Param("str", "e_string_body", choices=("e_string_body", "ebody_string")),
    },
    "bowed_string": {
        "length": STRING_LENGTH,
        "bow_velocity": Param("float", 0.2),
        "bow_force": Param("float", 0.1, check=lambda v, c: v >= 0, constraint="must be >= 0"),
        "bow_position": Param("float", 0.13, check=lambda v, c: 0 < v < 1, constraint="must lie in (0, 1)"),
        "friction_slope": Param("float", 1.0, check=_pos, constraint="must be positive"),
        "bridge_gain": Param("float", 0.95, check=_gain, constraint="must lie in [0, 1]"),
        "bridge_pole": Param("float", 0.2, check=_pole, constraint="must lie in [0, 1)"),
    },
    "kelly_lochbaum": {
        "areas": Param("floats", required=True, check=lambda v, c: len(v) >= 1 and all(a > 0 for a in v),
                       constraint="must be a nonempty list of positive areas"),
        "glottal_reflection": Param("float", 0.75, check=_unit, constraint="must lie in [-1, 1]"),
        "lip_reflection": Param("float", -0.85, check=_unit, constraint="must lie in [-1, 1]"),
        "source": Param("str", "impulse_train", choices=("impulse_train", "noise", "impulse")),
        "source_f0": Param("float", 110.0, check=_below_nyquist, constraint="must be positive and below fs/2"),
        "amplitude": Param("float", 0.1),
    },
    "clarinet": {
        "bore_length": Param("int", 50, check=lambda v, c: v >= 2, constraint="must be an integer >= 2"),
        "mouth_pressure": Param("float", 1.5, check=lambda v, c: v >= 0, constraint="must be >= 0"),
        "attack": Param("float", 0.01, check=lambda v, c: v >= 0, constraint="must be >= 0"),
        "embouchure": Param("float", 0.0),
        "reed_slope": Param("float", 0.3, check=_pos, constraint="must be positive"),
        "reed_table_file": Param("str", None),
        "bell_gain": Param("float", 0.95, check=lambda v, c: 0 < v <= 1, constraint="must lie in (0, 1]"),
        "bell_pole": Param("float", 0.5, check=_pole, constraint="must lie in [0, 1)"),
    },
    "mesh2d": {
        "width": Param("int", 32, check=lambda v, c: v >= 2, constraint="must be an integer >= 2"),
        "height": Param("int", 32, check=lambda v, c: v >= 2, constraint="must be an integer >= 2"),
        "boundary_reflection": Param("any", -1.0, check=lambda v, c: _boundary_ok(v),
                                     constraint="must be a number in [-1, 1] or a mapping of edges to such numbers"),
        "excite": Param("point", [8, 8]),
        "pickup": Param("point", [20, 12]),
        "amplitude": Param("float", 1.0),
        "dump": Param("str", None),
    },
    "sdn": {
        "room": Param("floats", [5.0, 4.0], check=lambda v, c: len(v) in (2, 3) and all(x > 0 for x in v),
                      constraint="must list 2 or 3 positive dimensions"),
        "source": Param("floats", required=True),
        "receiver": Param("floats", required=True),
        "wall_gain": Param("any", 0.9, check=lambda v, c: _gains_ok(v),
                           constraint="must be a number in [0, 1] or a list of such numbers"),
        "wall_pole": Param("float", 0.0, check=_pole, constraint="must lie in [0, 1)"),
        "sound_speed": Param("float", 343.0, check=_pos, constraint="must be positive"),
    },
}

MODEL_DESCRIPTIONS = {
    "ideal_string": "lossless string with rigid ends, bidirectional traveling waves",
    "terminated_string": "string with filtered reflections at nut and bridge",
    "fdl": "filtered delay loop (extended Karplus-Strong) with fractional-delay tuning",
    "commuted": "filtered delay loop driven by an excitation convolved with a modal body",
    "bowed_string": "string with a nonlinear bow junction",
    "kelly_lochbaum": "piecewise cylindrical tube ladder driven at the glottis",
    "clarinet": "cylindrical bore with a reed reflection table and inverting bell",
    "mesh2d": "rectilinear 2D waveguide mesh with reflecting edges",
    "sdn": "scattering delay network room impulse response",
}

JOB_FIELDS = {
    "name": Param("str", None),
    "model": Param("str", required=True, choices=tuple(MODEL_SCHEMAS)),
    "duration": Param("float", required=True, check=_pos, constraint="must be positive"),
    "output": Param("str", required=True),
    "sample_rate": Param("int", None, check=lambda v, c: v is None or 8000 <= v <= 384000,
                         constraint="must lie in 8000..384000"),
    "seed": Param("int", None),
    "gain": Param("float", 1.0),
    "normalize": Param("bool", False),
    "params": Param("mapping"),
    "calibration": Param("any", None),  # descriptive metadata, not used for rendering
}


def _boundary_ok(v) -> bool:
    if isinstance(v, dict):
        return set(v) <= {"north", "south", "east", "west"} and all(
            isinstance(x, (int, float)) and not isinstance(x, bool) and -1 <= x <= 1 for x in v.values())
    return isinstance(v, (int, float)) and not isinstance(v, bool) and -1 <= v <= 1


def _gains_ok(v) -> bool:
    if isinstance(v, list):
        return len(v) in (4, 6) and all(isinstance(x, (int, float)) and 0 <= x <= 1 for x in v)
    return isinstance(v, (int, float)) and not isinstance(v, bool) and 0 <= v <= 1


@dataclass
class RenderJob:
    name: str
    model: str
    duration: float
    output: str
    sample_rate: int = 44100
    seed: int = 0
    gain: float = 1.0
    normalize: bool = False
    params: dict = field(default_factory=dict)
    calibration: Any = None

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))


class _Lines:
    """Maps dotted field paths to 1-based source lines."""

    def __init__(self):
        self.lines: dict[str, int] = {}

    def record(self, node, path: str) -> None:
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                sub = f"{path}.{key.value}" if path else key.value
                self.record(value, sub)
                self.lines[sub] = key.start_mark.line + 1
        elif isinstance(node, yaml.SequenceNode):
            for i, item in enumerate(node.value):
                self.record(item, f"{path}[{i}]")

    def at(self, path: str) -> str:
        while path:
            if path in self.lines:
                return f"{path} (line {self.lines[path]})"
            cut = max(path.rfind("."), path.rfind("["))
            if cut <= 0:
                break
            parent = path[:cut]
            if parent in self.lines:
                return f"{path} (line {self.lines[parent]})"
            path = parent
        return path


def _coerce(kind: str, value):
    """Return (ok, value) after type coercion; ints are accepted as floats."""
    if value is None:
        return True, None
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return False, value
        value = float(value)
        return math.isfinite(value), value
    if kind == "int":
        return isinstance(value, int) and not isinstance(value, bool), value
    if kind == "bool":
        return isinstance(value, bool), value
    if kind == "str":
        return isinstance(value, str), value
    if kind == "floats":
        if not isinstance(value, list) or not all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in value):
            return False, value
        return True, [float(x) for x in value]
    if kind == "point":
        ok = isinstance(value, list) and len(value) == 2 and all(
            isinstance(x, int) and not isinstance(x, bool) for x in value)
        return ok, value
    if kind == "mapping":
        return isinstance(value, dict), value
    return True, value


_KIND_NAMES = {
    "float": "must be a number",
    "int": "must be an integer",
    "bool": "must be true or false",
    "str": "must be a string",
    "floats": "must be a list of numbers",
    "point": "must be a two-element list of integers [x, y]",
    "mapping": "must be a mapping",
}


def _validate(data, schema: dict, path: str, ctx: dict, lines: _Lines, problems: list) -> dict:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        problems.append(f"{lines.at(path)}: must be a mapping")
        return {}
    out = {}
    for key in data:
        if key not in schema:
            known = ", ".join(sorted(schema))
            problems.append(f"{lines.at(f'{path}.{key}')}: unknown field (expected one of: {known})")
    for key, spec in schema.items():
        where = f"{path}.{key}"
        if key not in data or data[key] is None:
            if spec.required:
                problems.append(f"{lines.at(path)}: missing required field '{key}'")
                continue
            if spec.kind == "mapping" and spec.fields is not None:
                out[key] = _validate({}, spec.fields, where, ctx, lines, problems)
            else:
                out[key] = spec.default
            continue
        ok, value = _coerce(spec.kind, data[key])
        if not ok:
            problems.append(f"{lines.at(where)}: {_KIND_NAMES.get(spec.kind, 'has the wrong type')}")
            continue
        if spec.choices is not None and value not in spec.choices:
            problems.append(f"{lines.at(where)}: must be one of {', '.join(map(str, spec.choices))}")
            continue
        if spec.kind == "mapping" and spec.fields is not None:
            value = _validate(value, spec.fields, where, ctx, lines, problems)
        elif spec.check is not None and not spec.check(value, ctx):
            problems.append(f"{lines.at(where)}: {spec.constraint}")
            continue
        out[key] = value
    return out


def _cross_checks(model: str, params: dict, path: str, lines: _Lines, problems: list) -> None:
    if model in ("ideal_string", "terminated_string"):
        for key in ("excite_position", "pickup"):
            if params.get(key) is not None and params[key] >= params["length"]:
                problems.append(f"{lines.at(f'{path}.{key}')}: must be below length ({params['length']})")
    if model == "mesh2d":
        for key in ("excite", "pickup"):
            x, y = params[key]
            if not (0 <= x < params["width"] and 0 <= y < params["height"]):
                problems.append(f"{lines.at(f'{path}.{key}')}: must lie inside the "
                                f"{params['width']}x{params['height']} grid")
    if model == "sdn":
        room = params["room"]
        for key in ("source", "receiver"):
            p = params.get(key)
            if p is None:
                continue
            if len(p) != len(room):
                problems.append(f"{lines.at(f'{path}.{key}')}: must have {len(room)} coordinates like room")
            elif not all(0 < a < b for a, b in zip(p, room)):
                problems.append(f"{lines.at(f'{path}.{key}')}: must lie strictly inside the room")
        gains = params["wall_gain"]
        if isinstance(gains, list) and len(gains) != 2 * len(room):
            problems.append(f"{lines.at(f'{path}.wall_gain')}: needs {2 * len(room)} values, one per wall")


def validate_params(model: str, params: dict | None, sample_rate: int = 44100, path: str = "params",
                    lines: _Lines | None = None) -> dict:
    """Fill defaults and check one model's parameters; raises :class:`ConfigError`."""
    if model not in MODEL_SCHEMAS:
        raise ConfigError([f"{path}: unknown model {model!r}"])
    problems: list[str] = []
    lines = lines or _Lines()
    out = _validate(params, MODEL_SCHEMAS[model], path, {"sample_rate": sample_rate}, lines, problems)
    if not problems:
        _cross_checks(model, out, path, lines, problems)
    if problems:
        raise ConfigError(problems)
    return out


def parse_config_text(text: str, source: str = "<config>", sample_rate: int | None = None,
                      seed: int | None = None) -> list[RenderJob]:
    """Parse and validate every job; ``sample_rate``/``seed`` override the file."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1})" if mark is not None else ""
        raise ConfigError([f"{source}{where}: not valid YAML: {getattr(exc, 'problem', exc)}"]) from None
    lines = _Lines()
    if root is not None:
        lines.record(root, "")
    if not isinstance(data, dict):
        raise ConfigError([f"{source}: top level must be a mapping with a 'jobs' list"])
    problems: list[str] = []
    unknown = set(data) - {"defaults", "jobs"}
    for key in sorted(unknown):
        problems.append(f"{lines.at(key)}: unknown top-level section (expected defaults, jobs)")
    defaults = data.get("defaults") or {}
    if not isinstance(defaults, dict):
        raise ConfigError([f"{lines.at('defaults')}: must be a mapping"])
    default_fields = {
        "sample_rate": Param("int", 44100, check=lambda v, c: 8000 <= v <= 384000, constraint="must lie in 8000..384000"),
        "seed": Param("int", 0),
    }
    defaults = _validate(defaults, default_fields, "defaults", {}, lines, problems)
    jobs_data = data.get("jobs")
    if not isinstance(jobs_data, list) or not jobs_data:
        problems.append(f"{lines.at('jobs')}: must be a nonempty list of jobs")
        raise ConfigError(problems)
    jobs = []
    names = set()
    for i, raw in enumerate(jobs_data):
        path = f"jobs[{i}]"
        n_before = len(problems)
        job = _validate(raw, JOB_FIELDS, path, {}, lines, problems)
        if len(problems) > n_before or "model" not in job:
            continue
        fs = sample_rate or job["sample_rate"] or defaults.get("sample_rate", 44100)
        job_seed = seed if seed is not None else (job["seed"] if job["seed"] is not None else defaults.get("seed", 0))
        try:
            params = validate_params(job["model"], job["params"], fs, f"{path}.params", lines)
        except ConfigError as exc:
            problems.extend(exc.problems)
            continue
        name = job["name"] or f"job{i}"
        if name in names:
            problems.append(f"{lines.at(f'{path}.name')}: duplicate job name {name!r}")
            continue
        names.add(name)
        jobs.append(RenderJob(name, job["model"], job["duration"], job["output"], fs, job_seed,
                              job["gain"], job["normalize"], params, job["calibration"]))
    if problems:
        raise ConfigError(problems)
    return jobs


def parse_config(path, sample_rate: int | None = None, seed: int | None = None) -> list[RenderJob]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    jobs = parse_config_text(text, str(path), sample_rate, seed)
    # relative file names resolve against the config file's directory
    for job in jobs:
        job.output = str(_beside(path, job.output))
        for key in ("dump", "reed_table_file"):
            if job.params.get(key):
                job.params[key] = str(_beside(path, job.params[key]))
    return jobs


def _beside(config_path: Path, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() else config_path.parent / p


def _plain(value):
    """Recursively turn numpy scalars and arrays into YAML-safe builtins."""
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if hasattr(value, "tolist"):
        return _plain(value.tolist())
    return value


def dump_config(jobs: list[dict], defaults: dict | None = None, header: str = "") -> str:
    jobs, defaults = _plain(jobs), _plain(defaults)
    doc = {}
    if defaults:
        doc["defaults"] = defaults
    doc["jobs"] = jobs
    text = yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)
    if header:
        text = "".join(f"# {line}\n" for line in header.splitlines()) + text
    return text
