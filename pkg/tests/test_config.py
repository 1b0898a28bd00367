from pathlib import Path

import pytest
import yaml

from waveguide.config import MODEL_SCHEMAS, ConfigError, dump_config, parse_config, parse_config_text, validate_params

DOCS = Path(__file__).resolve().parents[1] / "docs" / "examples"

MINIMAL = """\
jobs:
  - model: fdl
    duration: 1.0
    output: a.wav
    params:
      f0: 220
"""


def problems(text, **kw):
    with pytest.raises(ConfigError) as info:
        parse_config_text(text, **kw)
    return info.value.problems


def test_minimal_fdl_job_gets_defaults():
    (job,) = parse_config_text(MINIMAL)
    assert job.model == "fdl" and job.name == "job0"
    assert job.sample_rate == 44100 and job.seed == 0 and job.gain == 1.0
    p = job.params
    assert p["f0"] == 220.0 and isinstance(p["f0"], float)
    assert p["loop_gain"] == 0.995 and p["interp"] == "allpass" and p["compensate"] is True
    assert p["loss_filter"] == {"type": "averager", "pole": 0.0}
    assert p["excitation"]["kind"] == "noise_burst"
    assert job.n_samples == 44100


def test_negative_f0_names_field_line_and_constraint():
    (msg,) = problems(MINIMAL.replace("f0: 220", "f0: -5"))
    assert "jobs[0].params.f0" in msg and "(line 6)" in msg
    assert "must be positive and below fs/2" in msg


def test_f0_above_nyquist_uses_job_rate():
    text = MINIMAL.replace("f0: 220", "f0: 5000").replace("duration: 1.0", "duration: 1.0\n    sample_rate: 8000")
    assert "must be positive and below fs/2" in problems(text)[0]


def test_jobs_keep_declaration_order():
    text = "jobs:\n" + "".join(
        f"  - {{name: {n}, model: fdl, duration: 0.1, output: {n}.wav, params: {{f0: {f}}}}}\n"
        for n, f in (("c", 300), ("a", 100), ("b", 200)))
    jobs = parse_config_text(text)
    assert [j.name for j in jobs] == ["c", "a", "b"]
    assert [j.params["f0"] for j in jobs] == [300, 100, 200]


def test_unknown_model_lists_choices():
    (msg,) = problems(MINIMAL.replace("model: fdl", "model: theremin"))
    assert "jobs[0].model (line 2)" in msg and "must be one of" in msg and "sdn" in msg


def test_missing_required_fields():
    msgs = problems("jobs:\n  - model: fdl\n    params: {}\n")
    joined = "\n".join(msgs)
    for name in ("duration", "output"):
        assert f"missing required field '{name}'" in joined
    msgs = problems("jobs:\n  - model: fdl\n    duration: 1\n    output: x.wav\n")
    assert "missing required field 'f0'" in msgs[0]


def test_unknown_and_mistyped_fields():
    text = MINIMAL + "      loop_gian: 0.9\n      interp_order: two\n"
    msgs = "\n".join(problems(text))
    assert "jobs[0].params.loop_gian (line 7): unknown field" in msgs
    assert "jobs[0].params.interp_order (line 8): must be an integer" in msgs


def test_nested_constraint():
    text = MINIMAL + "      loss_filter: {type: one_pole, pole: 1.0}\n"
    (msg,) = problems(text)
    assert "jobs[0].params.loss_filter.pole" in msg and "[0, 1)" in msg


def test_several_problems_reported_together():
    text = MINIMAL + "  - model: sdn\n    duration: -1\n    output: r.wav\n    params: {source: [1, 1]}\n"
    msgs = problems(text)
    assert any("jobs[1].duration" in m and "must be positive" in m for m in msgs)


def test_yaml_syntax_error_has_line():
    (msg,) = problems("jobs:\n  - model: fdl\n    params: {f0: [1, 2\n")
    assert "not valid YAML" in msg and "line" in msg


def test_top_level_shape():
    assert "top level must be a mapping" in problems("- 1\n- 2\n")[0]
    assert "nonempty list of jobs" in problems("jobs: []\n")[0]
    assert "unknown top-level section" in problems(MINIMAL + "extras: 1\n")[0]


def test_duplicate_names():
    text = "jobs:\n" + "  - {name: x, model: fdl, duration: 0.1, output: a.wav, params: {f0: 100}}\n" * 2
    assert "duplicate job name" in problems(text)[0]


def test_overrides_and_defaults():
    text = "defaults:\n  sample_rate: 48000\n  seed: 5\n" + MINIMAL
    (job,) = parse_config_text(text)
    assert (job.sample_rate, job.seed) == (48000, 5)
    (job,) = parse_config_text(text, sample_rate=22050, seed=9)
    assert (job.sample_rate, job.seed) == (22050, 9)


def test_cross_checks():
    sdn = "jobs:\n  - model: sdn\n    duration: 0.5\n    output: r.wav\n    params:\n      room: [5, 4]\n" \
          "      source: [1, 1]\n      receiver: [6, 1]\n"
    (msg,) = problems(sdn)
    assert "jobs[0].params.receiver (line 8): must lie strictly inside the room" in msg
    mesh = "jobs:\n  - model: mesh2d\n    duration: 0.1\n    output: m.wav\n    params: {width: 8, height: 8, pickup: [9, 1]}\n"
    assert "must lie inside the 8x8 grid" in problems(mesh)[0]
    string = "jobs:\n  - model: ideal_string\n    duration: 0.1\n    output: s.wav\n    params: {length: 20, pickup: 20}\n"
    assert "must be below length" in problems(string)[0]


def test_validate_params_direct():
    p = validate_params("clarinet", {"bore_length": 40})
    assert p["mouth_pressure"] == 1.5 and p["bell_pole"] == 0.5
    with pytest.raises(ConfigError):
        validate_params("clarinet", {"bore_length": 1})
    with pytest.raises(ConfigError):
        validate_params("harp", {})


def test_every_model_has_a_schema_entry():
    assert set(MODEL_SCHEMAS) == {"ideal_string", "terminated_string", "fdl", "commuted", "bowed_string",
                                  "kelly_lochbaum", "clarinet", "mesh2d", "sdn"}


def test_paths_resolve_next_to_config(tmp_path):
    cfg = tmp_path / "sub" / "c.yaml"
    cfg.parent.mkdir()
    cfg.write_text(MINIMAL)
    (job,) = parse_config(cfg)
    assert Path(job.output) == cfg.parent / "a.wav"


def test_dump_config_round_trip():
    import numpy as np

    job = {"name": "x", "model": "fdl", "duration": 0.5, "output": "x.wav",
           "params": {"f0": np.float64(219.5), "loop_gain": 0.99}, "calibration": {"modes": np.array([[1.0, 2.0]])}}
    text = dump_config([job], {"sample_rate": 44100, "seed": 0}, header="generated")
    assert text.startswith("# generated\n")
    (parsed,) = parse_config_text(text)
    assert parsed.params["f0"] == 219.5
    assert yaml.safe_load(text)["jobs"][0]["calibration"]["modes"] == [[1.0, 2.0]]


@pytest.mark.parametrize("path", sorted(DOCS.glob("*.yaml")), ids=lambda p: p.name)
def test_docs_examples_parse(path):
    assert parse_config(path)
