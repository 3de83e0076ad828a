import json

import pytest

from deconav.cli import main
from deconav.pipeline import (ConfigError, FingerprintMismatch, StageError, embedded_fingerprint,
                              load_config, run_pipeline, sweep)

TINY = {"n_worlds": 1, "train_episodes": 6, "val_episodes": 4, "n_seeds": 2, "train.epochs": 2,
        "finetune_epochs": 1, "long_horizon.episodes_per_world": 3, "long_horizon.pool_per_world": 60,
        "long_horizon.min_episodes": 1}


def tiny(out, **extra):
    return load_config(overrides={**TINY, **extra, "out_dir": str(out)}, env={})


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    cfg = tiny(out)
    return cfg, run_pipeline(cfg)


def test_report_structure(tiny_run):
    cfg, res = tiny_run
    tables = {(r["table"], r["row"]) for r in res.rows}
    for row in ("baseline", "+AMR", "+AMR+CF"):
        assert ("table2", row) in tables and ("long", row) in tables
    assert {("memory", m) for m in ("none", "uniform", "amr")} <= tables
    assert {("table5", k) for k in ("trust_region", "dagger")} <= tables
    per_seed = [r for r in res.rows if r["table"] == "table2" and r["seed"] != "mean"]
    assert len(per_seed) == 3 * cfg.n_seeds
    for path in res.paths.values():
        assert embedded_fingerprint(path) == cfg.fingerprint()
    t5 = [r for r in res.rows if r["table"] == "table5" and r["seed"] != "mean"]
    assert all(int(r["n_pairs"]) > 0 for r in t5)


def test_resume_after_deleting_downstream(tiny_run):
    cfg, res = tiny_run
    art = sorted((p for p in (res.paths["csv"].parent / "artifacts").rglob("*") if p.is_file()))
    before = {p: p.read_bytes() for p in art}
    stamps = {p: p.stat().st_mtime_ns for p in art}
    report = res.paths["csv"].read_bytes()
    gone = [p for p in art if p.name.startswith(("traces-", "policy-trust_region", "policy-dagger"))]
    assert gone
    for p in gone:
        p.unlink()
    again = run_pipeline(cfg)
    assert again.paths["csv"].read_bytes() == report
    for p in art:
        assert p.read_bytes() == before[p]
        if p not in gone:
            assert p.stat().st_mtime_ns == stamps[p]


def test_fingerprint_guard(tiny_run, tmp_path):
    cfg, res = tiny_run
    other = tiny(res.paths["csv"].parent, **{"train.epochs": 3})
    assert other.fingerprint() != cfg.fingerprint()
    with pytest.raises(FingerprintMismatch):
        run_pipeline(other)
    with pytest.raises(FingerprintMismatch):
        sweep(other, "k", [2])


def test_sweep_row_counts(tiny_run):
    cfg, _ = tiny_run
    k = sweep(cfg, "k", [2, 4, 8, 12])
    assert len([r for r in k.rows if r["seed"] != "mean"]) == 4 * cfg.n_seeds
    tau = sweep(cfg, "tau", [1, 3, 6])
    assert len([r for r in tau.rows if r["seed"] != "mean"]) == 3 * cfg.n_seeds
    assert k.paths["csv"].name == "sweep-k.csv"
    with pytest.raises(StageError):
        sweep(cfg, "k", [2.5])


def test_invalid_config_rejected(tmp_path):
    with pytest.raises(ConfigError):
        tiny(tmp_path, **{"train.epochs": 0})
    with pytest.raises(ConfigError):
        tiny(tmp_path, **{"no_such.field": 1})
    with pytest.raises(ConfigError):
        load_config(env={"DECONAV_SEED": "x"})
    assert load_config(env={"DECONAV_SEED": "7"}).base_seed == 7


def test_cli_exit_codes(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("DECONAV_SEED", raising=False)
    assert main(["show-config", "--refine.k", "4", "--quiet"]) == 0
    shown = json.loads(capsys.readouterr().out)
    assert shown["config"]["refine"]["k"] == 4
    monkeypatch.setenv("DECONAV_SEED", "11")
    assert main(["show-config", "--quiet"]) == 0
    assert json.loads(capsys.readouterr().out)["config"]["base_seed"] == 11
    monkeypatch.delenv("DECONAV_SEED")
    assert main(["report", "--train.epochs", "0", "--out_dir", str(tmp_path), "--quiet"]) == 1
    assert "stage" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["gen-world", "--config", str(bad), "--quiet"]) == 1
    good = tmp_path / "cfg.json"
    good.write_text(json.dumps({"n_worlds": 1, "n_seeds": 1, "out_dir": str(tmp_path / "o")}))
    assert main(["gen-world", "--config", str(good), "--quiet"]) == 0
    assert "1 worlds" in capsys.readouterr().out
    assert main(["gen-world", "--config", str(good), "--n_worlds", "2", "--quiet"]) == 1
    assert "--force" in capsys.readouterr().err
