import json
import os

import pytest

from app.config import load_run_config
from app.errors import ConfigLoadError
from app.models import RunConfig

from conftest import ROOT


def test_example_template_matches_defaults():
    cfg = load_run_config(os.path.join(ROOT, "templates", "run.example.json"))
    defaults = RunConfig()
    assert cfg.search.outer_steps == 40 and cfg.search.finetune_epochs == 5
    assert cfg.search.dim == 10
    assert cfg.data == defaults.data
    assert cfg.pretrain == defaults.pretrain
    assert cfg.paths.workdir == "runs/example"


def test_raw_json_and_yaml_text():
    from_json = load_run_config(json.dumps({"search": {"E_o": 3, "top_k": 2}}))
    from_yaml = load_run_config("search:\n  outer_steps: 3\n  top_k: 2\n")
    assert from_json.search.outer_steps == from_yaml.search.outer_steps == 3


def test_empty_text_gives_defaults():
    assert load_run_config("{}") == RunConfig()


def test_unknown_keys_rejected():
    with pytest.raises(ConfigLoadError) as exc:
        load_run_config(json.dumps({"search": {"E_o": 3, "bogus": 1}}))
    assert exc.value.where == "models.RunConfig"
    assert any("bogus" in err["loc"] for err in exc.value.validation_errors)


def test_top_k_must_fit_budget():
    with pytest.raises(ConfigLoadError):
        load_run_config(json.dumps({"search": {"E_o": 2, "top_k": 3}}))


def test_non_mapping_top_level():
    with pytest.raises(ConfigLoadError) as exc:
        load_run_config("[1, 2, 3]")
    assert exc.value.where == "config.safe_load"


def test_malformed_text():
    with pytest.raises(ConfigLoadError) as exc:
        load_run_config("{search: [")
    assert exc.value.where == "config.safe_load"
    assert exc.value.to_dict()["status"] == "error"
