import sqlite3

import pytest

from dcdnn.errors import ConfigurationError
from dcdnn.run_store import RunStore, create_schema
from dcdnn.trainer import RoundRecord, TotalRecord, TrainHistory


@pytest.fixture
def store(tmp_path):
    return RunStore(str(tmp_path / "ledger" / "runs.db"))


class TestRuns:
    def test_start_and_finish(self, store):
        run_id = store.start_run("train", ["train", "--models", "b.dcdb"], {"modes": 2}, 7)
        assert store.get_run(run_id)["status"] == "running"
        store.finish_run(run_id, "ok")
        run = store.get_run(run_id)
        assert run["status"] == "ok" and run["finished_at"]
        assert run["argv"] == ["train", "--models", "b.dcdb"]
        assert run["config"] == {"modes": 2} and run["seed"] == 7

    def test_failed_run_keeps_message(self, store):
        run_id = store.start_run("split", [], {}, 1)
        store.finish_run(run_id, "failed", "split needs --models")
        assert store.get_run(run_id)["message"] == "split needs --models"

    def test_list_newest_first_and_filter(self, store):
        for command in ("extract", "pretrain", "train", "train"):
            store.start_run(command, [], {}, 1)
        assert [r["command"] for r in store.list_runs()] == ["train", "train", "pretrain", "extract"]
        assert len(store.list_runs(command="train")) == 2
        assert len(store.list_runs(limit=1)) == 1

    def test_unknown_run(self, store):
        assert store.get_run(99) is None


class TestArtifactsAndHistory:
    def test_artifacts_in_order(self, store):
        run_id = store.start_run("pretrain", [], {}, 1)
        store.add_artifact(run_id, "out/pretrained.dcdb", "bank", "ab" * 32)
        store.add_artifact(run_id, "out/history.json", "history", "cd" * 32)
        assert [a["kind"] for a in store.get_artifacts(run_id)] == ["bank", "history"]

    def test_history_round_trip(self, store):
        run_id = store.start_run("train", [], {}, 1)
        history = TrainHistory(rounds=[RoundRecord(2, 1, 0, 10, 4.5, 0.9)], totals=[TotalRecord(2, 1, 4.5)],
                               events=["respawn modes=2 round=1 cluster=1 from=0"])
        store.save_history(run_id, history)
        assert store.get_history(run_id).to_dict() == history.to_dict()

    def test_missing_history(self, store):
        run_id = store.start_run("evaluate", [], {}, 1)
        with pytest.raises(ConfigurationError):
            store.get_history(run_id)


def test_create_schema_is_idempotent(tmp_path):
    path = str(tmp_path / "runs.db")
    create_schema(path)
    create_schema(path)
    conn = sqlite3.connect(path)
    tables = {row[0] for row in conn.execute("SELECT name FROM sqlite_master WHERE type='table'")}
    conn.close()
    assert {"runs", "artifacts", "history"} <= tables
