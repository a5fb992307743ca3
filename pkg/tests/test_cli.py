import json
from pathlib import Path

import pytest

from capsift.cli import main
from capsift.pipeline import Pipeline, PipelineConfig
from capsift.store import Store
from capsift.synth import make_corpus


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture
def tasks_file(tmp_path):
    path = tmp_path / "tasks.txt"
    path.write_text("layered bedrock with fine dust\na dark crater rim\n", encoding="utf-8")
    return str(path)


@pytest.fixture
def demo_store(tmp_path, capsys):
    out = tmp_path / "demo"
    code = main(["demo-data", "--out", str(out), "--count", "6", "--seed", "3"])
    capsys.readouterr()
    assert code == 0
    return out


class TestExitCodes:
    def test_unknown_flag_is_usage_error(self, capsys):
        code, _, err = run(capsys, "score", "--caption", "x", "--definitely-not-a-flag")
        assert code == 1
        assert "usage error" in err

    def test_unknown_command_is_usage_error(self, capsys):
        code, _, _ = run(capsys, "frobnicate")
        assert code == 1

    def test_data_error_is_2(self, capsys, tmp_path, tasks_file):
        empty = tmp_path / "empty.txt"
        empty.write_text("\n\n", encoding="utf-8")
        code, _, err = run(capsys, "score", "--caption", "a rock", "--tasks", str(empty))
        assert code == 2
        assert "error" in err

    def test_help_is_success(self, capsys):
        code, out, _ = run(capsys, "--help")
        assert code == 0
        assert "caption" in out and "simulate" in out


class TestScore:
    def test_json_shape(self, capsys, tasks_file):
        code, out, _ = run(capsys, "score", "--caption",
                           "layered bedrock with fine dust", "--tasks", tasks_file, "--json")
        assert code == 0
        payload = json.loads(out)
        assert payload["value"] == 1.0
        assert payload["log_value"] == 0.0
        assert payload["eta"] == 1.0
        assert len(payload["p"]) == 4

    def test_zero_score_log_is_null(self, capsys, tasks_file):
        code, out, _ = run(capsys, "score", "--caption",
                           "completely unrelated nonsense words", "--tasks", tasks_file, "--json")
        assert code == 0
        payload = json.loads(out)
        assert payload["value"] == 0.0
        assert payload["log_value"] is None

    def test_byte_identical_across_runs(self, capsys, tasks_file):
        args = ("score", "--caption", "layered bedrock", "--tasks", tasks_file, "--json")
        _, first, _ = run(capsys, *args)
        _, second, _ = run(capsys, *args)
        assert first == second

    def test_empty_caption_is_data_error(self, capsys, tasks_file):
        code, _, _ = run(capsys, "score", "--caption", "?!", "--tasks", tasks_file)
        assert code == 2


class TestDemoDataAndRank:
    def test_demo_data_creates_store(self, demo_store):
        store = Store(demo_store)
        assert len(store.image_order) == 6
        assert store.reviewed_image_count() == 6

    def test_rank_json_deterministic(self, capsys, demo_store, tasks_file):
        args = ("rank", "--data-dir", str(demo_store), "--tasks", tasks_file, "--json")
        code, first, _ = run(capsys, *args)
        assert code == 0
        code, second, _ = run(capsys, *args)
        assert first == second
        listing = json.loads(first)["images"]
        assert len(listing) == 6

    def test_rank_needs_task_source(self, capsys, demo_store):
        code, _, _ = run(capsys, "rank", "--data-dir", str(demo_store))
        assert code == 1


class TestSimulate:
    def test_writes_artifacts(self, capsys, tmp_path):
        scenario = {
            "images": [
                {"id": "a", "arrival": 0, "size": 4,
                 "caption": "layered bedrock with fine dust"},
                {"id": "b", "arrival": 0, "size": 4, "caption": "nothing special"},
            ],
            "windows": [{"start": 0, "duration": 10, "bandwidth": 2}],
            "tasks": ["layered bedrock with fine dust"],
        }
        scenario_path = tmp_path / "scenario.json"
        scenario_path.write_text(json.dumps(scenario), encoding="utf-8")
        out_json = tmp_path / "report.json"
        out_csv = tmp_path / "curve.csv"
        code, out, _ = run(
            capsys, "simulate", "--scenario", str(scenario_path),
            "--out-json", str(out_json), "--out-csv", str(out_csv), "--json",
        )
        assert code == 0
        summary = json.loads(out)
        assert set(summary) == {"priority", "fifo"}
        report = json.loads(out_json.read_text())
        assert report["priority"]["completions"]["a"] < report["priority"]["completions"]["b"]
        assert out_csv.read_text().startswith("policy,time,delivered_relevance")

    def test_missing_scenario_is_usage_error(self, capsys):
        code, _, _ = run(capsys, "simulate", "--scenario", "/nope/missing.json")
        assert code == 1


class TestTrainExportImport:
    def test_train_emits_csv_and_checkpoint(self, capsys, tmp_path):
        store_dir = tmp_path / "store"
        code = main(["demo-data", "--out", str(store_dir), "--count", "4", "--seed", "5"])
        capsys.readouterr()
        assert code == 0
        csv_path = tmp_path / "curve.csv"
        code, out, err = run(
            capsys, "train", "--data-dir", str(store_dir), "--epochs", "2",
            "--patience", "0", "--seed", "0", "--csv", str(csv_path), "--json",
        )
        assert code == 0, err
        entry = json.loads(out)
        assert entry["dataset_size"] == 4
        lines = csv_path.read_text().strip().split("\n")
        assert lines[0] == "epoch,train_loss,bleu1,bleu2,bleu3,bleu4"
        assert len(lines) == 3

    def test_train_without_growth_is_error(self, capsys, tmp_path):
        store_dir = tmp_path / "store"
        main(["demo-data", "--out", str(store_dir), "--count", "4", "--seed", "5"])
        capsys.readouterr()
        assert main(["train", "--data-dir", str(store_dir), "--epochs", "1",
                     "--patience", "0"]) == 0
        capsys.readouterr()
        code, _, err = run(capsys, "train", "--data-dir", str(store_dir),
                           "--epochs", "1", "--patience", "0")
        assert code == 2
        assert "condition" in err

    def test_export_import_dataset_preserves_rank(self, capsys, tmp_path, demo_store, tasks_file):
        bundle = tmp_path / "dataset.zip"
        code, _, _ = run(capsys, "export", "--data-dir", str(demo_store),
                         "--what", "dataset", "--out", str(bundle))
        assert code == 0
        fresh = tmp_path / "fresh"
        code, _, _ = run(capsys, "import", "--bundle", str(bundle),
                         "--data-dir", str(fresh), "--what", "dataset")
        assert code == 0
        _, original, _ = run(capsys, "rank", "--data-dir", str(demo_store),
                             "--tasks", tasks_file, "--json")
        _, imported, _ = run(capsys, "rank", "--data-dir", str(fresh),
                             "--tasks", tasks_file, "--json")
        assert original == imported

    def test_export_import_weights(self, capsys, tmp_path):
        store_dir = tmp_path / "store"
        main(["demo-data", "--out", str(store_dir), "--count", "4", "--seed", "5",
              "--train", "--epochs", "2"])
        capsys.readouterr()
        bundle = tmp_path / "weights.zip"
        code, _, _ = run(capsys, "export", "--data-dir", str(store_dir),
                         "--what", "weights", "--out", str(bundle))
        assert code == 0
        other = tmp_path / "other"
        main(["demo-data", "--out", str(other), "--count", "2", "--seed", "6"])
        capsys.readouterr()
        code, out, _ = run(capsys, "import", "--bundle", str(bundle),
                           "--data-dir", str(other), "--what", "weights", "--json")
        assert code == 0
        assert json.loads(out)["checkpoint"] >= 1


class TestCaption:
    def test_caption_from_trained_demo(self, capsys, tmp_path):
        store_dir = tmp_path / "store"
        code = main(["demo-data", "--out", str(store_dir), "--count", "6", "--seed", "3",
                     "--train", "--epochs", "40"])
        capsys.readouterr()
        assert code == 0
        store = Store(store_dir)
        weights_path = store.checkpoint_dir / store.latest_checkpoint()["path"]
        image_id = store.image_order[0]
        image_path = tmp_path / "img.png"
        image_path.write_bytes(store.blob_bytes(image_id))
        code, out, _ = run(capsys, "caption", "--image", str(image_path),
                           "--weights", str(weights_path), "--json")
        assert code == 0
        payload = json.loads(out)
        assert "caption" in payload and "token_ids" in payload

    def test_caption_requires_exactly_one_source(self, capsys, tmp_path):
        code, _, _ = run(capsys, "caption", "--weights", "/nope")
        assert code == 1
