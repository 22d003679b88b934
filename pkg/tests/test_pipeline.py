import json

import pytest

from pseudoscore.cli import main
from pseudoscore.data import FILES, SynthSpec, generate_synthetic, load_dataset, write_dataset
from pseudoscore.pipeline import ConfigError, Pipeline, StageError, parse_config, render_report, stage_keys

TINY = {
    "seed": 7,
    "synth": {"n_users": 300, "n_clusters": 6, "n_global_apps": 30},
    "node2vec": {"dimensions": 4, "walks_per_node": 2, "walk_length": 10, "context_window": 2, "epochs": 1},
    "models": {"kinds": ["logistic_regression", "random_forest"], "random_forest": {"trees": 8}},
    "experiment": {"folds": 3, "bootstrap_rounds": 500, "importance_repeats": 1,
                   "combinations": [["sociodemographic"], ["neighborhood", "influence"]]},
}


def toml(cfg, path):
    lines = []

    def emit(table, prefix):
        scalars = {k: v for k, v in table.items() if not isinstance(v, dict)}
        if prefix:
            lines.append(f"[{prefix}]")
        for k, v in scalars.items():
            lines.append(f"{k} = {json.dumps(v)}")
        for k, v in table.items():
            if isinstance(v, dict):
                emit(v, f"{prefix}.{k}" if prefix else k)

    emit(cfg, "")
    path.write_text("\n".join(lines) + "\n")
    return path


def test_strict_parsing():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config({**TINY, "node2vec": {"dims": 3}})
    with pytest.raises(ConfigError, match="exactly one"):
        parse_config({"seed": 1})
    with pytest.raises(ConfigError, match="exactly one"):
        parse_config({"synth": {}, "data": {"users": "a", "app_usage": "b", "calls": "c", "loans": "d"}})
    with pytest.raises(ConfigError):
        parse_config({"synth": {"signal": 2.0}})
    with pytest.raises(ConfigError):
        parse_config({"synth": {}, "pagerank": {"alpha": 1.0}})
    with pytest.raises(ConfigError):
        parse_config({"synth": {}, "network": {"weighted": "yes"}})
    with pytest.raises(ConfigError, match="disabled"):
        parse_config({"synth": {}, "features": {"embedding": False},
                      "experiment": {"combinations": [["embedding"]]}})
    cfg = parse_config({"synth": {"signal": 1}})
    assert cfg.synth.signal == 1.0


def test_cache_keys_follow_config_blocks():
    base = stage_keys(parse_config(TINY))
    changed = stage_keys(parse_config({**TINY, "node2vec": {**TINY["node2vec"], "dimensions": 6}}))
    assert base["data"] == changed["data"] and base["network"] == changed["network"]
    assert base["features"] != changed["features"] and base["train"] != changed["train"]
    profit = stage_keys(parse_config({**TINY, "profit": {"roi": 0.3}}))
    assert profit["train"] == base["train"] and profit["evaluate"] != base["evaluate"]


@pytest.fixture(scope="module")
def finished(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    report = Pipeline(parse_config(TINY), out).run()
    return out, report


def test_report_contents(finished):
    out, report = finished
    assert report["status"] == "complete"
    assert report["dataset"]["users"] == 300
    assert {"nodes", "edges", "density"} <= set(report["network"]["unipartite"])
    cells = [(tuple(r["combination"]), r["model"]) for r in report["ablation"]]
    assert len(cells) == len(set(cells)) == 4
    assert all(len(r["auc"]) == 3 for r in report["ablation"])
    assert {s["model"] for s in report["significance"]} == {"logistic_regression", "random_forest"}
    assert set(report["importance"]["random_forest"]["by_group"]) <= set(
        ["sociodemographic", "behavior", "neighborhood", "centrality", "influence", "embedding"])
    for name in ("report.json", "ablation.tsv", "significance.tsv", "importance.tsv", "timings.json"):
        assert (out / name).exists()
    assert not (out / "scores.tsv").exists()
    assert "timings" not in json.loads((out / "report.json").read_text())


def test_rerun_reuses_cache(finished, caplog):
    out, _ = finished
    caplog.set_level("INFO", logger="pseudoscore")
    before = (out / "report.json").read_bytes()
    Pipeline(parse_config(TINY), out).run()
    assert (out / "report.json").read_bytes() == before
    assert caplog.text.count("reusing cached artifact") == 5


def test_changing_node2vec_reuses_upstream(finished, caplog):
    out, _ = finished
    caplog.set_level("INFO", logger="pseudoscore")
    cfg = {**TINY, "node2vec": {**TINY["node2vec"], "dimensions": 6}}
    Pipeline(parse_config(cfg), out).run()
    reused = [r.message for r in caplog.records if "reusing" in r.message]
    assert any(m.endswith(stage_keys(parse_config(cfg))["data"]) for m in reused)
    assert any(m.endswith(stage_keys(parse_config(cfg))["network"]) for m in reused)
    assert len(reused) == 2


def test_export_scores_flag(tmp_path):
    cfg = {**TINY, "output": {"export_scores": True}}
    Pipeline(parse_config(cfg), tmp_path).run()
    rows = (tmp_path / "scores.tsv").read_text().splitlines()
    assert rows[0] == "combination\tmodel\tfold\tuser_id\ttarget\tscore"
    assert len(rows) > 1


def test_failed_stage_marks_report_incomplete(tmp_path):
    ds = generate_synthetic(SynthSpec(n_users=50, n_clusters=3, n_global_apps=10), seed=1)
    paths = write_dataset(ds, tmp_path / "in")
    text = paths["users"].read_text().splitlines()
    paths["users"].write_text("\n".join(text[:1] + [r.replace(",", ",999,", 1) for r in text[1:10]] + text[10:]) + "\n")
    cfg = parse_config({"data": {k: str(v) for k, v in paths.items()}})
    with pytest.raises(StageError) as info:
        Pipeline(cfg, tmp_path / "out").run()
    assert info.value.stage == "data"
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["status"] == "incomplete" and report["failed_stage"] == "data"


def test_cli_exit_codes_and_subcommands(tmp_path, capsys):
    cfg = toml(TINY, tmp_path / "c.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text(cfg.read_text() + "\n[extra]\nx = 1\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert not (tmp_path / "o").exists()
    assert main(["featurize", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "pseudoscore synth" in capsys.readouterr().err
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert main(["featurize", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "pseudoscore build-net" in capsys.readouterr().err
    for step in ("build-net", "featurize", "train"):
        assert main([step, "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert main(["report", "--out", str(tmp_path / "o")]) == 2
    assert main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    capsys.readouterr()
    assert main(["report", "--out", str(tmp_path / "o")]) == 0
    shown = capsys.readouterr().out
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert shown.strip() == render_report(report)
    for row in report["ablation"]:
        assert f"{row['auc_mean']:7.4f}" in shown


def test_cli_synth_writes_dataset_files(tmp_path):
    assert main(["synth", "--users", "200", "--seed", "42", "--out", str(tmp_path)]) == 0
    ds = load_dataset({k: tmp_path / "data" / f"{k}.csv" for k in FILES}, tolerance=0.0)
    assert len(ds.users) == 200
    assert sorted(p.name for p in (tmp_path / "data").iterdir()) == sorted(f"{k}.csv" for k in FILES)
