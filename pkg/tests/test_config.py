import json
import math
from pathlib import Path

import pytest

from densepose_kit.config import CONFIG_ENV_VAR, RunConfig, load_config
from densepose_kit.errors import InvalidConfig, ParseError
from densepose_kit.sim.toytrain import TABLE1_STRATEGIES

REPO = Path(__file__).resolve().parents[1]


def test_defaults_roundtrip_through_json():
    d = RunConfig().to_dict()
    assert d["assigner"]["level_bounds"][-1] is None
    again = RunConfig.from_dict(json.loads(json.dumps(d)))
    assert again == RunConfig()
    assert again.assigner.level_bounds[-1] == math.inf


def test_shipped_default_matches_code():
    assert load_config(REPO / "configs" / "default.json") == RunConfig()


def test_partial_sections_override_defaults():
    cfg = RunConfig.from_dict({"nms": {"oks_threshold": 0.5}, "seed": 7,
                               "ablation": {"strategies": [{"positive_rule": "full-box", "name": "x"}]}})
    assert cfg.nms.oks_threshold == 0.5 and cfg.nms.mode == "hard"
    assert cfg.seed == 7
    assert cfg.ablation.strategies[0].name == "x"
    assert RunConfig().ablation.strategies == TABLE1_STRATEGIES
    acfg = cfg.ablation_config()
    assert acfg.seed == 7 and acfg.pipeline.nms.oks_threshold == 0.5


@pytest.mark.parametrize("data", [
    {"bogus": {}},
    {"nms": {"oks_threshold": 0.3, "typo": 1}},
    {"nms": {"oks_threshold": 2.0}},
    {"noise": {"base_sigma": -1}},
    {"assigner": {"shrunk_sides": [1, 2]}},
    {"pipeline": {"nms": {}}},
    {"pipeline": {"min_confidence": 5}},
    {"seed": -1},
    {"seed": "3"},
    {"skeleton": {"k": 1, "names": ["a"], "kappas": [-1.0]}},
    {"ablation": {"n_trials": 0}},
    {"ablation": {"strategies": [{"refine_rule": "sometimes"}]}},
    [],
])
def test_invalid_configs(data):
    with pytest.raises(InvalidConfig):
        RunConfig.from_dict(data)


def test_load_config_env_fallback(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 11}))
    assert load_config(environ={CONFIG_ENV_VAR: str(p)}).seed == 11
    assert load_config(environ={}).seed == 0
    # An explicit path beats the environment.
    q = tmp_path / "d.json"
    q.write_text(json.dumps({"seed": 12}))
    assert load_config(q, environ={CONFIG_ENV_VAR: str(p)}).seed == 12


def test_load_config_parse_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{")
    with pytest.raises(ParseError):
        load_config(p, environ={})
    with pytest.raises(ParseError):
        load_config(tmp_path / "none.json", environ={})
