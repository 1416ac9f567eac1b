import csv
import hashlib
import json

import pytest

from macdae.cli import main
from macdae.config import PRESETS, SEED_OFFSETS, parse_config
from macdae.errors import ConfigError

PIPELINE = ("ingest", "pretrain", "train", "evaluate", "analyze")


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_config(dirpath, **overrides):
    cfg = {
        "name": "tiny",
        "seed": 3,
        "data": {"path": "log.tsv", "embedding_dim": 4, "train_negatives": 1},
        "pretrain": {"kind": "macdae", "heads": 2, "hidden_dim": 8, "epochs": 2, "batch_size": 64},
        "ranker": {"hidden_sizes": [8], "integration": "fine_tune", "epochs": 2, "batch_size": 64},
        "evaluation": {"negatives": 10},
        "ablation": {"groups": ["d.dist"]},
        "sweep": {"heads": [1, 2], "kinds": ["macdae"]},
        "output": "out",
    }
    for k, v in overrides.items():
        if v is None:
            cfg.pop(k, None)
        else:
            cfg[k] = v
    path = dirpath / "exp.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--output", str(root / "log.tsv"), "--users", "20", "--items", "60",
                 "--rows", "600", "--seed", "1"]) == 0
    return root


def _run_pipeline(config, output=None):
    extra = ["--output", str(output)] if output else []
    for cmd in PIPELINE:
        assert main([cmd, "--config", str(config), *extra]) == 0, cmd


def test_pipeline_writes_declared_artifacts(workspace):
    config = _write_config(workspace)
    _run_pipeline(config)
    out = workspace / "out"
    for name in ("dataset.json", "features.ckpt", "pretrain.ckpt", "pretrain_loss.csv", "ranker.ckpt",
                 "train_loss.csv", "metrics.csv", "metrics.json", "predictions.csv", "analysis.json",
                 "hidden_states.csv"):
        assert (out / name).exists(), name
    for cmd in PIPELINE:
        snap = json.loads((out / f"{cmd}.config.json").read_text())
        assert snap["seeds"]["pretrain"] == 3 + SEED_OFFSETS["pretrain"]
    with open(out / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {(r["metric"], r["k"]) for r in rows} == {("ndcg", "5"), ("ndcg", "10"), ("auc", "")}
    assert all(r["dataset"] == "tiny" and r["seed"] == str(3 + SEED_OFFSETS["evaluation"]) for r in rows)
    with open(out / "pretrain_loss.csv") as fh:
        assert next(csv.reader(fh)) == ["epoch", "reconstruction", "kl", "penalty", "total"]
    analysis = json.loads((out / "analysis.json").read_text())
    assert len(analysis["cosine_matrix"]) == 2
    assert analysis["config"]["name"] == "tiny"


def test_rerun_is_bit_identical(workspace, tmp_path):
    config = _write_config(workspace)
    _run_pipeline(config, tmp_path / "a")
    _run_pipeline(config, tmp_path / "b")
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in files:
        assert _sha(tmp_path / "a" / name) == _sha(tmp_path / "b" / name), name


def test_missing_seed_exits_2(workspace, capsys):
    config = _write_config(workspace, seed=None)
    assert main(["ingest", "--config", str(config)]) == 2
    assert "field=seed" in capsys.readouterr().err


def test_unknown_key_names_field(workspace, capsys):
    config = _write_config(workspace, pretrain={"kind": "macdae", "heds": 2})
    assert main(["pretrain", "--config", str(config)]) == 2
    err = capsys.readouterr().err.strip()
    assert err.startswith("error=config field=pretrain.heds")
    assert len(err.splitlines()) == 1


def test_invalid_value_names_field(workspace, capsys):
    config = _write_config(workspace, pretrain={"heads": 3, "hidden_dim": 8})
    assert main(["pretrain", "--config", str(config)]) == 2
    assert "field=pretrain.hidden_dim" in capsys.readouterr().err


def test_missing_data_exits_3(workspace, tmp_path, capsys):
    config = _write_config(workspace, data={"path": "absent.tsv"})
    assert main(["ingest", "--config", str(config), "--output", str(tmp_path)]) == 3
    assert "field=data.path" in capsys.readouterr().err


def test_missing_stage_input_exits_3(workspace, tmp_path, capsys):
    config = _write_config(workspace)
    assert main(["train", "--config", str(config), "--output", str(tmp_path)]) == 3
    assert "field=dataset.json" in capsys.readouterr().err


def test_divergence_exits_4(workspace, tmp_path, capsys):
    config = _write_config(workspace, pretrain={"kind": "vae", "heads": 2, "hidden_dim": 4,
                                                "learning_rate": 1e12, "epochs": 2})
    assert main(["ingest", "--config", str(config), "--output", str(tmp_path)]) == 0
    assert main(["pretrain", "--config", str(config), "--output", str(tmp_path)]) == 4
    assert capsys.readouterr().err.startswith("error=numeric")


def test_output_env_and_flag(workspace, tmp_path, monkeypatch):
    config = _write_config(workspace)
    monkeypatch.setenv("MACDAE_OUTPUT", str(tmp_path / "env"))
    assert main(["ingest", "--config", str(config)]) == 0
    assert (tmp_path / "env" / "dataset.json").exists()
    assert main(["ingest", "--config", str(config), "--output", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "dataset.json").exists()


def test_seed_and_preset_overrides(workspace, tmp_path):
    config = _write_config(workspace, pretrain={"epochs": 1}, ranker={"epochs": 1})
    assert main(["ingest", "--config", str(config), "--output", str(tmp_path), "--seed", "11",
                 "--preset", "ctr-like"]) == 0
    snap = json.loads((tmp_path / "ingest.config.json").read_text())
    assert snap["seed"] == 11 and snap["seeds"]["split"] == 11
    assert snap["preset"] == "ctr-like"
    assert snap["pretrain"]["heads"] == 8 and snap["ranker"]["integration"] == "feature_based"


def test_inputs_untouched_and_outputs_contained(workspace, tmp_path):
    config = _write_config(workspace)
    before = {p.name: _sha(p) for p in workspace.iterdir() if p.is_file()}
    _run_pipeline(config, tmp_path / "run")
    after = {p.name: _sha(p) for p in workspace.iterdir() if p.is_file()}
    assert before == after


def test_ablate_and_sweep(workspace, tmp_path):
    config = _write_config(workspace)
    assert main(["ablate", "--config", str(config), "--output", str(tmp_path)]) == 0
    assert main(["sweep", "--config", str(config), "--output", str(tmp_path)]) == 0
    with open(tmp_path / "ablation.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["group"] for r in rows] == ["d.dist"]
    with open(tmp_path / "k_sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert sorted({int(r["heads"]) for r in rows}) == [1, 2]


def test_parse_config_defaults_and_presets(tmp_path):
    cfg = parse_config({"seed": 5, "data": {"path": "x.tsv"}}, base_dir=tmp_path)
    assert cfg.data.path == str((tmp_path / "x.tsv").resolve())
    assert cfg.pretrain.seed == 5 + SEED_OFFSETS["pretrain"]
    assert cfg.ranker.seed == 5 + SEED_OFFSETS["ranker"]
    for name, preset in PRESETS.items():
        cfg = parse_config({"seed": 0, "preset": name, "data": {"path": "x.tsv"}})
        assert cfg.pretrain.heads == preset["pretrain"]["heads"]
        assert cfg.pretrain.hidden_dim == preset["pretrain"]["hidden_dim"]
        assert list(cfg.ranker.hidden_sizes) == preset["ranker"]["hidden_sizes"]
    with pytest.raises(ConfigError):
        parse_config({"seed": 0, "preset": "nope", "data": {"path": "x.tsv"}})
    with pytest.raises(ConfigError):
        parse_config({"seed": 0})
