import json

import yaml

from conftest import tiny_run_dict
from intent_ensemble.cli import main


def write_cfg(path, raw):
    path.write_text(yaml.safe_dump(raw))
    return str(path)


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "usage" in capsys.readouterr().out


def test_usage_errors_exit_one(capsys):
    assert main([]) == 1
    assert main(["train"]) == 1  # missing --config
    assert main(["train", "--config", "x.yaml", "--bogus"]) == 1
    assert main(["frobnicate"]) == 1


def test_validation_errors_exit_one(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", {"train": {"loss": "hinge"}})
    assert main(["train", "--config", cfg]) == 1
    assert main(["train", "--config", str(tmp_path / "missing.yaml")]) == 1


def test_verify_theorems_is_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["verify-theorems", "--trials", "10", "--seed", "7", "--out", str(a)]) == 0
    assert main(["verify-theorems", "--trials", "10", "--seed", "7", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    report = json.loads(a.read_text())
    assert set(report) == {"config", "summary", "trials", "counterexamples"}


def test_verify_theorems_single_k_and_n(tmp_path):
    out = tmp_path / "r.json"
    assert main(["verify-theorems", "--trials", "4", "--k", "3", "--n", "5", "--delta", "0.1", "--out", str(out)]) == 0
    trials = json.loads(out.read_text())["trials"]
    assert {(t["K"], t["N"]) for t in trials} == {(3, 5)}
    assert all(t["delta"] <= 0.1 for t in trials)


def test_gen_synthetic_and_aggregate(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "g.yaml", {"n_users": 20, "n_items": 100, "pool_size": 10, "top_m": 4, "span_days": 15, "sessions_per_user": 5})
    out = tmp_path / "data"
    assert main(["gen-synthetic", "--config", cfg, "--set", "n_categories=4", "--seed", "2", "--out", str(out)]) == 0
    assert (out / "sessions.jsonl").exists()
    ranks = tmp_path / "borda.jsonl"
    assert main(["aggregate", "--method", "borda", "--in", str(out / "sessions.jsonl"), "--out", str(ranks)]) == 0
    rows = [json.loads(l) for l in ranks.read_text().splitlines()]
    assert rows and all(len(set(r["ranking"])) == len(r["ranking"]) for r in rows)
    assert main(["aggregate", "--method", "median", "--in", str(out / "sessions.jsonl"), "--out", str(ranks)]) == 1
    assert main(["gen-synthetic", "--set", "colour=blue", "--out", str(out)]) == 1


def test_ingest_subcommand(tiny_data, tmp_path):
    src, _, _ = tiny_data
    out = tmp_path / "s.jsonl"
    code = main(["ingest", "--interactions", str(src / "interactions.csv"), "--basic-lists", str(src / "basic_lists.jsonl"),
                 "--out", str(out), "--behaviors", "two", "--min-positive", "1", "--top-m", "6"])
    assert code == 0
    assert out.read_text() == (src / "sessions.jsonl").read_text()


def test_train_evaluate_predict_report(tiny_data, tmp_path, capsys):
    run_dir = tmp_path / "run"
    cfg = write_cfg(tmp_path / "c.yaml", tiny_run_dict(tiny_data[1], run_dir, max_epochs=1))
    assert main(["train", "--config", cfg]) == 0
    assert main(["evaluate", "--config", cfg]) == 0
    metrics = json.loads((run_dir / "metrics.json").read_text())
    assert "All-NDCG@3" in metrics["metrics"]
    intents = tmp_path / "intents.jsonl"
    assert main(["predict-intents", "--config", cfg, "--out", str(intents)]) == 0
    first = json.loads(intents.read_text().splitlines()[0])
    assert abs(sum(first["intent"]) - 1) < 1e-5
    # a changed config no longer matches the checkpoint
    assert main(["evaluate", "--config", cfg, "--set", "train.lr=0.5"]) == 1
    table = tmp_path / "table.json"
    assert main(["report", str(run_dir), "--metrics", "All-NDCG@3", "--out", str(table)]) == 0
    assert "All-NDCG@3" in json.loads(table.read_text())[str(run_dir)]["metrics"]
    assert main(["report", str(tmp_path / "nowhere")]) == 1


def test_predict_intents_needs_an_intent(tiny_data, tmp_path):
    raw = tiny_run_dict(tiny_data[1], tmp_path / "run")
    raw["model"]["ablation"] = ["-Int"]
    cfg = write_cfg(tmp_path / "c.yaml", raw)
    assert main(["predict-intents", "--config", cfg, "--out", str(tmp_path / "i.jsonl")]) == 1
