import json

import pytest

from powerseek.scenario_io import (
    ScenarioParseError,
    dump_scenario,
    load_scenario,
    scenario_from_dict,
    scenario_to_dict,
)
from powerseek.scenarios import CoinrunChainSpec, LassoSpec, make_coinrun_chain, make_lasso, make_random


@pytest.mark.parametrize("make", [
    lambda: make_lasso(LassoSpec(2, 3)),
    lambda: make_coinrun_chain(CoinrunChainSpec(4, 3), CoinrunChainSpec(4, 1))[2],
    lambda: make_random(5, 7),
])
def test_round_trip(make, tmp_path):
    sc = make()
    dump_scenario(sc, tmp_path / "s.json")
    back = load_scenario(tmp_path / "s.json")
    assert back.mdp == sc.mdp
    assert back.training == sc.training and back.reward == sc.reward
    assert (back.s_new, back.s_term, back.shutdown_action) == (sc.s_new, sc.s_term, sc.shutdown_action)


def lasso_doc():
    return scenario_to_dict(make_lasso(LassoSpec(2, 3)))


def test_bad_probability_names_triple():
    doc = lasso_doc()
    doc["transitions"][0]["prob"] = "3/2"
    with pytest.raises(ScenarioParseError, match=r'"next": "p1".*3/2'):
        scenario_from_dict(doc)


def test_unparseable_probability():
    doc = lasso_doc()
    doc["transitions"][1]["prob"] = "half"
    with pytest.raises(ScenarioParseError, match="transitions\\[1\\]"):
        scenario_from_dict(doc)


def test_distribution_must_sum_to_one():
    doc = lasso_doc()
    doc["transitions"][0]["prob"] = "1/2"
    with pytest.raises(ScenarioParseError, match="sums to 1/2"):
        scenario_from_dict(doc)


@pytest.mark.parametrize("field", ["states", "actions", "transitions", "s_new", "s_term",
                                   "shutdown_action"])
def test_missing_field_named(field):
    doc = lasso_doc()
    del doc[field]
    with pytest.raises(ScenarioParseError, match=field):
        scenario_from_dict(doc)


def test_unknown_state_in_training():
    doc = lasso_doc()
    doc["training"] = [{"state": "nowhere", "action": "go"}]
    with pytest.raises(ScenarioParseError, match="training\\[0\\]"):
        scenario_from_dict(doc)


def test_reward_length_checked():
    doc = lasso_doc()
    doc["reward"] = ["0"]
    with pytest.raises(ScenarioParseError, match="reward"):
        scenario_from_dict(doc)


def test_invalid_json(tmp_path):
    (tmp_path / "x.json").write_text("{not json")
    with pytest.raises(ScenarioParseError, match="invalid JSON"):
        load_scenario(tmp_path / "x.json")


def test_dump_is_stable(tmp_path):
    sc = make_random(9, 6)
    dump_scenario(sc, tmp_path / "a.json")
    dump_scenario(load_scenario(tmp_path / "a.json"), tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert json.loads((tmp_path / "a.json").read_text())["transitions"][0]["prob"]
