import json

import pytest

from conftest import TINY_ARCH, TINY_SIM
from symptom_bench.cli import main, make_parser
from symptom_bench.config import SEED_ENV, ConfigError, resolve_seed


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k} = {_toml_value(x)}" for k, x in v.items()) + "}"
    return repr(v)


def write_toml(path, sections):
    lines = []
    for name, body in sections.items():
        lines.append(f"[{name}]")
        lines += [f"{k} = {_toml_value(v)}" for k, v in body.items()]
    path.write_text("\n".join(lines) + "\n")
    return path


TRAIN = {"model_kind": "composite", "max_epochs": 2, "patience": 1, "batch_size": 8, "model": TINY_ARCH}


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_toml(root / "sim.toml", {"sim": TINY_SIM})
    assert main(["simulate", "--config", str(cfg), "--out", str(root / "data")]) == 0
    return root / "data"


def test_help_documents_every_flag(capsys):
    assert main(["--help"]) == 0
    parser = make_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        assert main([name, "--help"]) == 0
        text = capsys.readouterr().out
        for action in p._actions:
            for flag in action.option_strings:
                assert flag in text


@pytest.mark.parametrize("argv", [["frobnicate"], ["simulate", "--bogus", "1", "--out", "x"], ["simulate"], []])
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    cfg = write_toml(tmp_path / "c.toml", {"sim": {"seed": 1, "widow_len": 40}})
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 1
    assert "sim.widow_len" in capsys.readouterr().err


def test_unknown_nested_key(tmp_path, capsys):
    cfg = write_toml(tmp_path / "c.toml", {"sim": {"causal": {"b_dely": 3}}})
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 1
    assert "sim.causal.b_dely" in capsys.readouterr().err


def test_invalid_value_and_missing_config(tmp_path):
    cfg = write_toml(tmp_path / "c.toml", {"sim": {"fault4_mode": "sideways"}})
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 1
    assert main(["simulate", "--config", str(tmp_path / "none.toml"), "--out", str(tmp_path / "d")]) == 1


def test_simulate_outputs_and_rerun_identical(tmp_path, data_dir):
    assert (data_dir / "manifest.json").exists()
    man = json.loads((data_dir / "manifest.json").read_text())
    assert man["command"] == "simulate" and len(man["config_digest"]) == 64
    cfg = write_toml(tmp_path / "sim.toml", {"sim": TINY_SIM})
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "again")]) == 0
    for name in ("meta.json", "train.csv", "val.csv", "test.csv", "test_labels.csv"):
        assert (tmp_path / "again" / name).read_bytes() == (data_dir / name).read_bytes()
    assert json.loads((tmp_path / "again" / "manifest.json").read_text())["config_digest"] == man["config_digest"]


def test_seed_precedence(monkeypatch):
    monkeypatch.setenv(SEED_ENV, "11")
    assert resolve_seed(None, None) == 11
    assert resolve_seed(None, 5) == 5
    assert resolve_seed(3, 5) == 3
    monkeypatch.setenv(SEED_ENV, "x")
    with pytest.raises(ConfigError):
        resolve_seed(None, None)


def test_seed_env_used_by_simulate(tmp_path, monkeypatch):
    sim = {k: v for k, v in TINY_SIM.items() if k != "seed"}
    cfg = write_toml(tmp_path / "sim.toml", {"sim": sim})
    monkeypatch.setenv(SEED_ENV, "17")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
    assert json.loads((tmp_path / "d" / "manifest.json").read_text())["seed"] == 17


def _train(tmp_path, data_dir, name, extra=(), train=TRAIN):
    cfg = write_toml(tmp_path / f"{name}.toml", {"train": {**train, "data": str(data_dir)}})
    code = main(["train", "--config", str(cfg), "--out", str(tmp_path / name), *extra])
    runs = sorted((tmp_path / name).glob("*/*")) if code == 0 else []
    return code, runs


def test_train_twice_identical(tmp_path, data_dir):
    c1, r1 = _train(tmp_path, data_dir, "r1", ["--seed", "7"])
    c2, r2 = _train(tmp_path, data_dir, "r2", ["--seed", "7"])
    assert c1 == c2 == 0
    assert r1[0].name.endswith("-7") and r1[0].parent.name == "composite"
    assert (r1[0] / "history.csv").read_bytes() == (r2[0] / "history.csv").read_bytes()
    assert (r1[0] / "checkpoint.zip").read_bytes() == (r2[0] / "checkpoint.zip").read_bytes()
    assert json.loads((r1[0] / "manifest.json").read_text())["seed"] == 7


def test_train_divergence_exit_2(tmp_path, data_dir, capsys):
    code, _ = _train(tmp_path, data_dir, "div", train={**TRAIN, "learning_rate": 1e12})
    assert code == 2
    assert "diverged" in capsys.readouterr().err


def test_train_without_data(tmp_path):
    cfg = write_toml(tmp_path / "t.toml", {"train": TRAIN})
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 1


def test_evaluate_and_export(tmp_path, data_dir):
    _, runs = _train(tmp_path, data_dir, "r")
    ckpt = runs[0] / "checkpoint.zip"
    out = tmp_path / "eval"
    assert main(["evaluate", "--data", str(data_dir), "--checkpoint", str(ckpt), "--out", str(out)]) == 0
    for name in ("scores.csv", "thresholds.json", "metrics.json", "observations.jsonl", "manifest.json"):
        assert (out / name).exists()
    n_test = len((out / "scores.csv").read_text().splitlines()) - 1
    assert len((out / "observations.jsonl").read_text().splitlines()) == n_test

    exp = tmp_path / "exp"
    assert main(["export-observations", "--scores", str(out / "scores.csv"),
                 "--thresholds", str(out / "thresholds.json"), "--out", str(exp)]) == 0
    assert (exp / "observations.jsonl").read_bytes() == (out / "observations.jsonl").read_bytes()


def test_evaluate_missing_checkpoint(tmp_path, data_dir):
    assert main(["evaluate", "--data", str(data_dir), "--checkpoint", str(tmp_path / "nope.zip"),
                 "--out", str(tmp_path / "e")]) == 1


def test_evaluate_bad_dataset(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["evaluate", "--data", str(tmp_path / "empty"), "--checkpoint", str(tmp_path / "x.zip"),
                 "--out", str(tmp_path / "e")]) == 1


def test_benchmark_smoke(tmp_path):
    vae = {"max_epochs": 2, "patience": 1, "batch_size": 8, "model": TINY_ARCH}
    cfg = write_toml(tmp_path / "b.toml", {
        "sim": TINY_SIM,
        "benchmark": {"seeds": [0], "tune": False},
        "benchmark.train.composite": vae,
        "benchmark.train.vanilla": vae,
        "benchmark.train.univariate": vae,
        "benchmark.train.gmm": {"gmm_k_grid": [1], "gmm_restarts": 1},
    })
    out = tmp_path / "bench"
    assert main(["benchmark", "--config", str(cfg), "--out", str(out), "--plots"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert set(report["models"]) == {"gmm", "univariate", "vanilla", "composite"}
    assert all("median" in e for e in report["models"].values())
    assert (out / "manifest.json").exists() and (out / "figures" / "scores_composite.png").exists()


def test_benchmark_unknown_train_key(tmp_path, capsys):
    cfg = write_toml(tmp_path / "b.toml", {"benchmark.train.vanilla": {"learning_rte": 0.1}})
    assert main(["benchmark", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "benchmark.train.vanilla.learning_rte" in capsys.readouterr().err
