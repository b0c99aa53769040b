import json

import pytest

from pathreg import acceptance, harness
from pathreg.harness import ExperimentConfig, ValidationError, dump_flat, main, parse_flat, run

SMALL = ["--seed", "3", "--paths", "32", "--steps", "128", "--set", "params.window_steps=32"]


def test_parse_flat_types_and_comments():
    flat = parse_flat("experiment = qv\nseed = 4  # comment\nmodel.hurst = 0.7\nmodel = holder_mix\n\n")
    assert flat == {"experiment": "qv", "seed": 4, "model.hurst": 0.7, "model": "holder_mix"}
    with pytest.raises(ValidationError):
        parse_flat("no equals sign")


def test_flat_round_trip():
    flat = {"experiment": "qv", "seed": 4, "schedule.multiples": [4, 2, 1], "params.eta": "sin:1,2"}
    assert parse_flat(dump_flat(flat)) == flat


def test_config_from_flat_and_digest():
    cfg = ExperimentConfig.from_flat({"experiment": "qv", "seed": 1, "model": "holder_mix", "model.hurst": 0.7,
                                      "schedule.multiples": "4,2,1", "out": "a"})
    assert cfg.model_params == {"hurst": 0.7} and cfg.eps_multiples == (4, 2, 1)
    other = ExperimentConfig.from_flat({"experiment": "qv", "seed": 1, "model": "holder_mix", "model.hurst": 0.7,
                                        "schedule.multiples": "4,2,1", "out": "b"})
    assert cfg.digest() == other.digest()
    other.seed = 2
    assert cfg.digest() != other.digest()
    assert json.loads(cfg.to_json())["eps_multiples"] == [4, 2, 1]


@pytest.mark.parametrize("flat", [
    {"experiment": "qv"},
    {"experiment": "nope", "seed": 1},
    {"experiment": "qv", "seed": 1, "bogus": 1},
    {"experiment": "qv", "seed": 1, "model": "unknown"},
    {"experiment": "qv", "seed": 1, "schedule.multiples": "1,2"},
    {"experiment": "qv", "seed": 1, "n_paths": 0},
    {"experiment": "solve", "seed": 1, "functional": "cylindrical:missing"},
])
def test_invalid_configs(flat):
    with pytest.raises(ValidationError):
        ExperimentConfig.from_flat(flat).validate()


def test_eta_specs():
    assert harness.make_eta("const:2", 1.0, 4).values.tolist() == [2.0] * 5
    assert harness.make_eta("linear:1,2", 1.0, 2).values.tolist() == [-1.0, 0.0, 1.0]
    with pytest.raises(ValidationError):
        harness.make_eta("linear:1", 1.0, 2)
    with pytest.raises(ValidationError):
        harness.make_eta("spline", 1.0, 2)


def test_run_writes_identical_tables(tmp_path):
    cfg = ExperimentConfig("qv", 5, n_steps=128, n_paths=40, out=str(tmp_path / "a"))
    run(cfg)
    cfg.out = str(tmp_path / "b")
    run(cfg)
    a = (tmp_path / "a" / "quadratic_variation.csv").read_bytes()
    assert a == (tmp_path / "b" / "quadratic_variation.csv").read_bytes()
    rec = json.loads((tmp_path / "a" / "record.json").read_text())
    assert rec["config_hash"] == cfg.digest() and rec["tables"] == ["quadratic_variation"]


@pytest.mark.parametrize("command", harness.EXPERIMENTS)
def test_every_subcommand_runs(command, tmp_path, capsys):
    code = main([command, *SMALL, "--out", str(tmp_path)])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["experiment"] == command
    assert (tmp_path / "record.json").exists()


def test_config_file_and_overrides(tmp_path, capsys):
    conf = tmp_path / "run.conf"
    conf.write_text("seed = 9\nn_paths = 16\nn_steps = 64\nmodel = holder_mix\nmodel.hurst = 0.75\n")
    assert main(["qv", "--config", str(conf), "--out", str(tmp_path / "o")]) == 0
    rec = json.loads((tmp_path / "o" / "record.json").read_text())
    assert rec["config"]["model_params"] == {"hurst": 0.75} and rec["config"]["seed"] == 9


@pytest.mark.parametrize("argv, code", [
    (["qv", "--set", "model=nope"], 2),
    (["qv", "--set", "oops"], 2),
    (["bogus"], 2),
    (["residual", "--set", "params.solution=sup_norm"], 2),
    (["accept", "--tier", "huge"], 2),
])
def test_exit_codes(argv, code, tmp_path):
    assert main(argv + ["--out", str(tmp_path)]) == code


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    def boom(cfg):
        raise harness.fn.NonConvergence("no limit")
    monkeypatch.setitem(harness.RUNNERS, "qv", boom)
    assert main(["qv", "--out", str(tmp_path)]) == 3


def test_internal_failure_exit_code(tmp_path, monkeypatch):
    def boom(cfg):
        raise RuntimeError("bug")
    monkeypatch.setitem(harness.RUNNERS, "qv", boom)
    assert main(["qv", "--out", str(tmp_path)]) == 1


@pytest.mark.parametrize("passed, code", [(True, 0), (False, 2)])
def test_accept_exit_code_follows_matrix(passed, code, tmp_path, monkeypatch):
    fake = [acceptance.CriterionResult(1, "x", passed, "d")]
    monkeypatch.setattr(acceptance, "run_acceptance_suite", lambda tier, echo=None: fake)
    assert main(["accept", "--out", str(tmp_path)]) == code
    assert (tmp_path / "acceptance.csv").read_text().splitlines()[1].startswith(f"1,x,{passed}")
