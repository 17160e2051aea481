"""Command-line behavior: determinism, exit codes, artifact round trips."""

import hashlib
import json
from pathlib import Path

import pytest

from prerank.cli import (
    EXIT_BAD_CONFIG,
    EXIT_MISSING_FILE,
    EXIT_NOT_FOUND,
    EXIT_OK,
    main,
)

WORLD_FLAGS = [
    "--set", "world.n_users=12",
    "--set", "world.n_items=160",
    "--set", "world.recall_size=64",
    "--set", "world.prerank_size=32",
    "--set", "world.rank_size=16",
    "--set", "world.n_impressions=8",
    "--set", "world.buckets=8",
    "--set", "teacher.steps=200",
]

MODEL_FLAGS = [
    "--set", "model.heads_user=2",
    "--set", "model.heads_item=2",
    "--set", "model.sub_dim=6",
    "--set", "model.tower_hidden=12",
    "--set", "model.reduction_ratio=2",
    "--set", "train.max_steps=30",
    "--set", "train.batch_size=6",
    "--set", "train.eval_interval=15",
    "--set", "train.eval_k=50",
    "--set", "sampling.n_candidate=3",
    "--set", "sampling.n_random=3",
]


def checksum_dir(path: Path) -> dict[str, str]:
    return {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(path.iterdir())
        if p.is_file()
    }


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    code = main(["gen-data", "--out-dir", str(out), "--seed", "5", *WORLD_FLAGS])
    assert code == EXIT_OK
    return out


@pytest.fixture(scope="module")
def run_dir(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--data-dir", str(dataset), "--out-dir", str(out), "--seed", "5", *MODEL_FLAGS])
    assert code == EXIT_OK
    return out


class TestGenData:
    def test_identical_seed_identical_files(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["gen-data", "--out-dir", str(a), "--seed", "9", *WORLD_FLAGS]) == EXIT_OK
        assert main(["gen-data", "--out-dir", str(b), "--seed", "9", *WORLD_FLAGS]) == EXIT_OK
        assert checksum_dir(a) == checksum_dir(b)

    def test_manifest_echoes_flags(self, dataset):
        manifest = json.loads((dataset / "manifest.json").read_text())
        assert manifest["world"]["n_users"] == 12
        assert manifest["run"]["seed"] == 5
        assert manifest["run"]["command"] == "gen-data"

    def test_expected_artifacts(self, dataset):
        for name in ("world.json", "schema.txt", "users.jsonl", "items.jsonl",
                     "train.jsonl", "val.jsonl", "test.jsonl", "manifest.json"):
            assert (dataset / name).exists(), name


class TestTrainEval:
    def test_checkpoint_and_history_written(self, run_dir):
        assert (run_dir / "checkpoint.bin").exists()
        history = json.loads((run_dir / "history.json").read_text())
        assert history["steps"] == 30
        echo = json.loads((run_dir / "config-echo.json").read_text())
        assert echo["train"]["max_steps"] == 30
        assert echo["model"]["sub_dim"] == 6
        assert echo["run"]["seed"] == 5

    def test_eval_writes_report(self, dataset, run_dir, tmp_path):
        out = tmp_path / "eval"
        code = main(["eval", "--checkpoint", str(run_dir / "checkpoint.bin"),
                     "--data-dir", str(dataset), "--split", "test", "--k", "50",
                     "--out-dir", str(out)])
        assert code == EXIT_OK
        report = json.loads((out / "report-test.json").read_text())
        assert report["k"] == 50
        assert 0.0 <= report["recall"] <= 1.0

    def test_export_and_score(self, dataset, run_dir, tmp_path):
        items_emb = tmp_path / "items.emb"
        users_emb = tmp_path / "users.emb"
        ckpt = str(run_dir / "checkpoint.bin")
        assert main(["export-embeddings", "--checkpoint", ckpt, "--data-dir", str(dataset),
                     "--side", "item", "--out", str(items_emb)]) == EXIT_OK
        assert main(["export-embeddings", "--checkpoint", ckpt, "--data-dir", str(dataset),
                     "--side", "user", "--out", str(users_emb)]) == EXIT_OK
        out = tmp_path / "scores.jsonl"
        assert main(["score", "--checkpoint", ckpt, "--user-store", str(users_emb),
                     "--item-store", str(items_emb), "--user", "3", "--items", "1,2,5",
                     "--out", str(out)]) == EXIT_OK
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert [l["item_id"] for l in lines] == [1, 2, 5]
        assert all(l["user_id"] == 3 for l in lines)

    def test_missing_id_exit_code(self, dataset, run_dir, tmp_path):
        items_emb = tmp_path / "items.emb"
        users_emb = tmp_path / "users.emb"
        ckpt = str(run_dir / "checkpoint.bin")
        main(["export-embeddings", "--checkpoint", ckpt, "--data-dir", str(dataset),
              "--side", "item", "--out", str(items_emb)])
        main(["export-embeddings", "--checkpoint", ckpt, "--data-dir", str(dataset),
              "--side", "user", "--out", str(users_emb)])
        code = main(["score", "--checkpoint", ckpt, "--user-store", str(users_emb),
                     "--item-store", str(items_emb), "--user", "99999", "--items", "1"])
        assert code == EXIT_NOT_FOUND


class TestErrorPaths:
    def test_missing_data_dir(self, tmp_path):
        code = main(["train", "--data-dir", str(tmp_path / "nope"), "--out-dir", str(tmp_path / "o")])
        assert code == EXIT_MISSING_FILE

    def test_malformed_config(self, tmp_path):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[world\nn_users = 10\n")
        code = main(["gen-data", "--config", str(cfg), "--out-dir", str(tmp_path / "o")])
        assert code == EXIT_BAD_CONFIG

    def test_unknown_config_key(self, tmp_path):
        code = main(["gen-data", "--out-dir", str(tmp_path / "o"), "--set", "world.bogus=1"])
        assert code == EXIT_BAD_CONFIG

    def test_unknown_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["gen-data", "--bogus-flag", "1"])
        assert exc.value.code == 2

    def test_contradictory_world_config(self, tmp_path):
        code = main(["gen-data", "--out-dir", str(tmp_path / "o"),
                     "--set", "world.n_items=100", "--set", "world.recall_size=500"])
        assert code == EXIT_BAD_CONFIG


class TestChecks:
    def test_gradcheck_passes(self, capsys):
        assert main(["gradcheck", "--seeds", "3"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out
        assert "hybrid_loss" in out and "matmul" in out

    def test_losscheck_passes(self, capsys):
        assert main(["losscheck"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out
        assert "sorting loss reversed triple" in out
