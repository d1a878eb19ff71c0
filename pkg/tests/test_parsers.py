"""
Test suite for parser modules
"""
import json

import pandas as pd
import pytest

from src.parsers import config_parser, csv_parser
from src.utils.errors import ConfigError, ContractViolationError


def test_parse_config(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({"name": "demo", "init": {"n": 8}}))
    assert config_parser.parse_config(str(path)) == {"name": "demo", "init": {"n": 8}}


def test_parse_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        config_parser.parse_config(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        config_parser.parse_config(str(bad))
    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        config_parser.parse_config(str(listed))


def test_parse_override_values():
    assert config_parser.parse_override("steps.eps=0.01") == ("steps.eps", 0.01)
    assert config_parser.parse_override("name=run-a") == ("name", "run-a")
    assert config_parser.parse_override("sweep.n_list=[4, 8]") == ("sweep.n_list", [4, 8])
    with pytest.raises(ConfigError):
        config_parser.parse_override("steps.eps")
    with pytest.raises(ConfigError):
        config_parser.parse_override("=1")


def test_deep_merge_does_not_mutate():
    base = {"steps": {"eps": 0.1, "rounds": 5}, "name": "a"}
    merged = config_parser.deep_merge(base, {"steps": {"eps": 0.2}})
    assert merged == {"steps": {"eps": 0.2, "rounds": 5}, "name": "a"}
    assert base["steps"]["eps"] == 0.1


def test_apply_overrides():
    result = config_parser.apply_overrides({"steps": {"eps": 0.1}}, ["steps.rounds=3", "output.dir=out"])
    assert result == {"steps": {"eps": 0.1, "rounds": 3}, "output": {"dir": "out"}}
    with pytest.raises(ConfigError):
        config_parser.apply_overrides({"name": "a"}, ["name.x=1"])


def test_parse_table_checks_columns(tmp_path):
    path = tmp_path / "table.csv"
    pd.DataFrame({"round": [0], "w1": [0.5]}).to_csv(path, index=False)
    assert len(csv_parser.parse_table(str(path), ["round", "w1"])) == 1
    with pytest.raises(ContractViolationError):
        csv_parser.parse_table(str(path), ["round", "w1", "ksd_between"])
    with pytest.raises(ContractViolationError):
        csv_parser.parse_table(str(path), ["w1", "round"])
