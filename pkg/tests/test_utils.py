import pytest

from app.errors import ArtifactError
from app.observability import Observability
from app.utils import JsonlWriter, read_json, read_jsonl, strip_wall_time, write_json


def test_strip_wall_time_is_recursive():
    payload = {"q": 0.5, "train_seconds": 1.2, "nested": [{"wall_time": 3.0, "step": 1}], "phase_seconds": {"search": 2}}
    assert strip_wall_time(payload) == {"q": 0.5, "nested": [{"step": 1}]}


def test_json_helpers(tmp_path):
    path = str(tmp_path / "a" / "b.json")
    write_json(path, {"b": 1, "a": [1, 2]})
    assert read_json(path) == {"a": [1, 2], "b": 1}
    (tmp_path / "bad.json").write_text("{nope")
    with pytest.raises(ArtifactError):
        read_json(str(tmp_path / "bad.json"))
    with pytest.raises(ArtifactError):
        read_json(str(tmp_path / "missing.json"))


def test_jsonl_writer_flushes_each_record(tmp_path):
    path = str(tmp_path / "log.jsonl")
    with JsonlWriter(path) as writer:
        writer.write({"step": 0})
        assert read_jsonl(path) == [{"step": 0}]
        writer.write({"step": 1})
    assert [r["step"] for r in read_jsonl(path)] == [0, 1]


def test_observability_stage_timeline():
    obs = Observability()
    obs.start_run("search")
    obs.stage_start("pretrain")
    duration = obs.stage_end("pretrain", {"acc": 0.5})
    obs.add_event("candidate", {"step": 0, "q": 0.4})
    snap = obs.snapshot()
    obs.finish_run("success")
    assert duration >= 0.0
    assert obs.stage_seconds() == {"pretrain": duration}
    assert snap["run"] == "search" and snap["events"] == 1
    assert obs.status == "success"
