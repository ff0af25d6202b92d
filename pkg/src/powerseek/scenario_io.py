"""Scenario JSON documents.

Layout::

    {
      "name": "lasso-2-3",
      "states": ["s_new", "p1", ...],
      "actions": {"s_new": ["go", "shutdown"], ...},
      "transitions": [{"state": "s_new", "action": "go", "next": "p1", "prob": "1"}, ...],
      "terminal": ["s_term"],
      "reward": ["0", "1/2", ...],
      "training": [{"state": "train_0", "action": "right"}, ...],
      "s_new": "s_new",
      "s_term": "s_term",
      "shutdown_action": "shutdown"
    }

Probabilities and rewards are strings parsed as rationals ("1/3", "0.25").
Terminal states need no actions or transitions; their absorbing self-loop is
implied.  ``reward``, ``training`` and the shutdown fields are optional for
plain MDP documents.
"""

from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path

from powerseek.goalset import TrainingRecord
from powerseek.mdp import MdpError, TabularMdp
from powerseek.shutdown import ShutdownScenario


class ScenarioParseError(ValueError):
    pass


def parse_rational(text, where: str) -> Fraction:
    if isinstance(text, bool) or not isinstance(text, (str, int)):
        raise ScenarioParseError(f"{where}: expected a rational string, got {text!r}")
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise ScenarioParseError(f"{where}: cannot parse {text!r} as a rational") from None


def _require(doc, key, kind, where="document"):
    if key not in doc:
        raise ScenarioParseError(f"{where}: missing field {key!r}")
    value = doc[key]
    if not isinstance(value, kind):
        raise ScenarioParseError(f"{where}: field {key!r} has the wrong type")
    return value


def mdp_from_dict(doc: dict) -> TabularMdp:
    states = _require(doc, "states", list)
    if not states or not all(isinstance(s, str) for s in states):
        raise ScenarioParseError("field 'states' must be a nonempty list of names")
    if len(set(states)) != len(states):
        raise ScenarioParseError("field 'states' has duplicate names")
    index = {s: i for i, s in enumerate(states)}
    terminal = doc.get("terminal", [])
    for s in terminal:
        if s not in index:
            raise ScenarioParseError(f"field 'terminal': unknown state {s!r}")
    term = {index[s] for s in terminal}
    actions = _require(doc, "actions", dict)
    action_names = []
    for i, s in enumerate(states):
        if i in term:
            action_names.append(("stay",))
            continue
        names = actions.get(s)
        if not names:
            raise ScenarioParseError(f"field 'actions': state {s!r} has no actions")
        action_names.append(tuple(names))
    dists = [[{} for _ in names] for names in action_names]
    for k, t in enumerate(_require(doc, "transitions", list)):
        where = f"transitions[{k}] {json.dumps(t, sort_keys=True)}"
        if not isinstance(t, dict):
            raise ScenarioParseError(f"{where}: expected an object")
        for key in ("state", "action", "next", "prob"):
            if key not in t:
                raise ScenarioParseError(f"{where}: missing {key!r}")
        if t["state"] not in index or t["next"] not in index:
            raise ScenarioParseError(f"{where}: unknown state")
        s = index[t["state"]]
        if s in term:
            continue
        if t["action"] not in action_names[s]:
            raise ScenarioParseError(f"{where}: unknown action")
        p = parse_rational(t["prob"], where)
        if not 0 < p <= 1:
            raise ScenarioParseError(f"{where}: probability {p} outside (0, 1]")
        dist = dists[s][action_names[s].index(t["action"])]
        n = index[t["next"]]
        dist[n] = dist.get(n, 0) + p
    for s, acts in enumerate(dists):
        if s in term:
            continue
        for a, dist in enumerate(acts):
            total = sum(dist.values())
            if total != 1:
                raise ScenarioParseError(
                    f"transitions: distribution of ({states[s]}, {action_names[s][a]}) sums to {total}"
                )
    try:
        return TabularMdp.build(dists, sorted(term), states, action_names)
    except MdpError as exc:
        raise ScenarioParseError(str(exc)) from exc


def scenario_from_dict(doc: dict) -> ShutdownScenario:
    mdp = mdp_from_dict(doc)

    def state(key):
        name = _require(doc, key, str)
        if name not in mdp.state_names:
            raise ScenarioParseError(f"field {key!r}: unknown state {name!r}")
        return mdp.state_names.index(name)

    reward = None
    if "reward" in doc:
        values = _require(doc, "reward", list)
        if len(values) != mdp.n_states:
            raise ScenarioParseError(f"field 'reward' has {len(values)} entries, expected {mdp.n_states}")
        reward = tuple(parse_rational(v, f"reward[{i}]") for i, v in enumerate(values))
    pairs = []
    for k, item in enumerate(doc.get("training", [])):
        where = f"training[{k}]"
        if not isinstance(item, dict) or "state" not in item or "action" not in item:
            raise ScenarioParseError(f"{where}: expected {{'state', 'action'}}")
        if item["state"] not in mdp.state_names:
            raise ScenarioParseError(f"{where}: unknown state {item['state']!r}")
        s = mdp.state_names.index(item["state"])
        if item["action"] not in mdp.action_names[s]:
            raise ScenarioParseError(f"{where}: unknown action {item['action']!r}")
        pairs.append((s, mdp.action_names[s].index(item["action"])))
    try:
        training = TrainingRecord(tuple(pairs))
    except ValueError as exc:
        raise ScenarioParseError(f"field 'training': {exc}") from exc
    s_new = state("s_new")
    s_term = state("s_term")
    shutdown = _require(doc, "shutdown_action", str)
    if shutdown not in mdp.action_names[s_new]:
        raise ScenarioParseError(f"field 'shutdown_action': {shutdown!r} is not an action of s_new")
    return ShutdownScenario(mdp, training, s_new, s_term, mdp.action_names[s_new].index(shutdown),
                            reward, name=doc.get("name", ""))


def scenario_to_dict(scenario: ShutdownScenario) -> dict:
    mdp = scenario.mdp
    names = mdp.state_names
    doc = {
        "name": scenario.name,
        "states": list(names),
        "actions": {names[s]: list(mdp.action_names[s]) for s in range(mdp.n_states)
                    if not mdp.terminal[s]},
        "transitions": [
            {"state": names[s], "action": mdp.action_names[s][a], "next": names[n], "prob": str(p)}
            for s in range(mdp.n_states) if not mdp.terminal[s]
            for a, dist in enumerate(mdp.transitions[s])
            for n, p in dist
        ],
        "terminal": [names[s] for s in range(mdp.n_states) if mdp.terminal[s]],
        "training": [{"state": names[s], "action": mdp.action_names[s][a]}
                     for s, a in scenario.training.pairs],
        "s_new": names[scenario.s_new],
        "s_term": names[scenario.s_term],
        "shutdown_action": mdp.action_names[scenario.s_new][scenario.shutdown_action],
    }
    if scenario.reward is not None:
        doc["reward"] = [str(v) for v in scenario.reward]
    return doc


def load_scenario(path) -> ShutdownScenario:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ScenarioParseError(f"{path}: top level must be an object")
    return scenario_from_dict(doc)


def dump_scenario(scenario: ShutdownScenario, path):
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2, sort_keys=True) + "\n")
