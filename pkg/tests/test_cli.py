import json
from pathlib import Path

import pytest

from nextbuy.cli import run


def pipeline(tmp_path, seed=7, subdir="run", threads=1, players=120):
    """simulate -> train (ert) -> predict -> evaluate; returns the run dir."""
    root = tmp_path / subdir
    data = root / "data"
    assert run(["simulate", "--players", str(players), "--seed", str(seed),
                "--out", str(data)]) == 0
    telemetry = [
        "--telemetry", str(data / "telemetry.jsonl"),
        "--catalog", str(data / "catalog.txt"),
    ]
    assert run(["train", "--model", "ert", *telemetry, "--seed", str(seed),
                "--cutoff-day", "30", "--trees-per-iter", "5", "--iterations", "2",
                "--batch-users", str(players), "--threads", str(threads),
                "--out", str(root / "model")]) == 0
    assert run(["predict", "--model-file", str(root / "model" / "model.json"),
                *telemetry, "--cutoff-day", "30", "--heatmap", "heatmap.png",
                "--out", str(root / "pred")]) == 0
    assert run(["evaluate", "--model-file", str(root / "model" / "model.json"),
                *telemetry, "--cutoff-day", "30", "--window", "50",
                "--out", str(root / "eval")]) == 0
    return root


class TestPipeline:
    def test_smoke(self, tmp_path, capsys):
        root = pipeline(tmp_path)
        report = json.loads((root / "eval" / "report.json").read_text())
        assert report["schema_version"] == 1
        assert set(report["accuracy"]) == {
            "on_next_purchase_day", "next_purchase", "within_window"
        }
        assert (root / "pred" / "predictions.csv").exists()
        assert (root / "pred" / "heatmap.png").exists()
        for stage in ("data", "model", "pred", "eval"):
            manifest = json.loads((root / stage / "manifest.json").read_text())
            assert manifest["schema_version"] == 1

    def test_end_to_end_determinism(self, tmp_path):
        a = pipeline(tmp_path, seed=13, subdir="a")
        b = pipeline(tmp_path, seed=13, subdir="b")
        for rel in ("data/telemetry.jsonl", "model/model.json",
                    "pred/predictions.csv", "eval/report.json", "eval/report.txt"):
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_thread_count_does_not_change_output(self, tmp_path):
        a = pipeline(tmp_path, seed=5, subdir="t1", threads=1)
        b = pipeline(tmp_path, seed=5, subdir="t4", threads=4)
        assert (a / "model/model.json").read_bytes() == (b / "model/model.json").read_bytes()
        assert (a / "eval/report.json").read_bytes() == (b / "eval/report.json").read_bytes()

    def test_featurize_csv(self, tmp_path):
        data = tmp_path / "data"
        assert run(["simulate", "--players", "20", "--seed", "3", "--out", str(data)]) == 0
        out = tmp_path / "feat"
        assert run(["featurize", "--telemetry", str(data / "telemetry.jsonl"),
                    "--catalog", str(data / "catalog.txt"), "--cutoff-day", "20",
                    "--out", str(out)]) == 0
        lines = (out / "features.csv").read_text().splitlines()
        header = lines[0].split(",")
        assert header[:2] == ["player_id", "cutoff"]
        assert "playtime.mean" in header
        assert len(lines) > 1
        assert all(len(line.split(",")) == len(header) for line in lines[1:])


class TestErrors:
    def test_catalog_mismatch(self, tmp_path, capsys):
        root = pipeline(tmp_path)
        other = tmp_path / "other"
        assert run(["simulate", "--players", "20", "--items", "5", "--seed", "1",
                    "--out", str(other)]) == 0
        code = run(["evaluate", "--model-file", str(root / "model" / "model.json"),
                    "--telemetry", str(other / "telemetry.jsonl"),
                    "--catalog", str(other / "catalog.txt"),
                    "--cutoff-day", "30", "--out", str(tmp_path / "bad")])
        assert code == 1
        assert "catalog" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        code = run(["train", "--model", "ert", "--telemetry", "/nonexistent.jsonl",
                    "--catalog", "/nonexistent.txt", "--out", str(tmp_path / "x")])
        assert code == 1
        assert "train" in capsys.readouterr().err

    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit):
            run(["frobnicate"])

    def test_mlp_train_and_evaluate(self, tmp_path):
        data = tmp_path / "data"
        assert run(["simulate", "--players", "60", "--seed", "2", "--out", str(data)]) == 0
        telemetry = ["--telemetry", str(data / "telemetry.jsonl"),
                     "--catalog", str(data / "catalog.txt")]
        assert run(["train", "--model", "mlp", *telemetry, "--seed", "2",
                    "--cutoff-day", "30", "--hidden", "16,16", "--iterations", "2",
                    "--repeats-per-iteration", "1", "--batch-users", "60",
                    "--out", str(tmp_path / "mlp")]) == 0
        assert run(["evaluate", "--model-file", str(tmp_path / "mlp" / "model.json"),
                    *telemetry, "--cutoff-day", "30",
                    "--out", str(tmp_path / "mlpeval")]) == 0

    def test_config_file_supplies_defaults(self, tmp_path):
        data = tmp_path / "data"
        assert run(["simulate", "--players", "40", "--seed", "4", "--out", str(data)]) == 0
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"trees_per_iter": 3, "iterations": 2, "seed": 4,
                                   "batch_users": 40}))
        assert run(["train", "--model", "ert",
                    "--telemetry", str(data / "telemetry.jsonl"),
                    "--catalog", str(data / "catalog.txt"),
                    "--cutoff-day", "30", "--config", str(cfg),
                    "--out", str(tmp_path / "m")]) == 0
        model = json.loads((tmp_path / "m" / "model.json").read_text())
        assert len(model["trees"]) == 6
