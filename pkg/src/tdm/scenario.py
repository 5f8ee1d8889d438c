"""Scenario config documents (schema v1) and the strategy vocabulary.

Configs are JSON. Token amounts, money and fractions are decimal strings so
that parsing stays exact; periods and counts are integers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from fractions import Fraction
from typing import List, Optional, Tuple

import jsonschema

from . import canon
from .errors import ConfigInvalid, InvalidParams
from .ledger import Issuance, Money, format_fixed, parse_fixed, to_fraction, tokens
from .protocol import Rules
from .structure import Params, fraction_to_bp

CONFIG_SCHEMA_ID = "tdm/scenario/v1"
REPORT_SCHEMA_ID = "tdm/report/v1"

_DEC = {"type": "string", "pattern": r"^-?[0-9]+(\.[0-9]+)?$"}
_UDEC = {"type": "string", "pattern": r"^[0-9]+(\.[0-9]+)?$"}
_TICK = {"type": "integer", "minimum": 0}

_STRATEGY_FIELDS = {
    "HonestMaker": {
        "elements_per_epoch": {"type": "integer", "minimum": 1},
        "acquisition_cost": _UDEC,
        "max_elements": {"type": ["integer", "null"], "minimum": 0},
        "visibility": {"enum": ["public", "private"]},
    },
    "HonestVoter": {"accuracy": _UDEC},
    "LazyHolder": {},
    "LivenessProber": {"cost": _UDEC, "k": {"type": "integer", "minimum": 0}, "price": _UDEC},
    "Troll": {"garbage_rate": _UDEC},
    "Madman": {"loss_budget": _UDEC},
    "SybilDuplicator": {
        "identity_count": {"type": "integer", "minimum": 1},
        "acquisition_cost": _UDEC,
        "probe_cost": _UDEC,
    },
    "Leaker": {"leak_tick": _TICK, "arrival_tick": _TICK},
    "MembershipBuyer": {"arrival_tick": _TICK, "price": {"anyOf": [_UDEC, {"type": "null"}]}},
}

_PARAM_PROPS = {
    "candidate_deposit": _UDEC,
    "candidate_vote_period": _TICK,
    "candidate_reward": _UDEC,
    "candidate_quorum": _UDEC,
    "reward_stake_period": _TICK,
    "challenge_deposit": _UDEC,
    "challenge_vote_period": _TICK,
    "challenge_reward": _UDEC,
    "challenge_quorum": _UDEC,
    "fork_deposit": _UDEC,
    "fork_vote_period": _TICK,
    "fork_threshold": _UDEC,
    "query_stake": _UDEC,
    "offchain": {"type": "boolean"},
}

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "$id": CONFIG_SCHEMA_ID,
    "type": "object",
    "required": ["schema", "horizon", "master_seed"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": CONFIG_SCHEMA_ID},
        "kind": {"enum": ["agents", "theorem2_grid", "depth_dilution"]},
        "params": {"type": "object", "properties": _PARAM_PROPS, "additionalProperties": False},
        "rules": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dedup": {"type": "boolean"},
                "seizure_to_challenger": {"type": "boolean"},
                "forfeit_rejected_deposit": {"type": "boolean"},
                "steady_state": {"type": "boolean"},
                "membership_price": _UDEC,
            },
        },
        "issuance": {"enum": ["mining", "predetermined"]},
        "agents": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "strategy"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string", "pattern": r"^[A-Za-z0-9_.-]+$"},
                    "strategy": {
                        "type": "object",
                        "required": ["type"],
                        "properties": {"type": {"enum": sorted(_STRATEGY_FIELDS)}},
                    },
                    "tokens": _UDEC,
                    "cash": _DEC,
                },
            },
        },
        "horizon": _TICK,
        "replicates": {"type": "integer", "minimum": 1},
        "master_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "access_mode": {"enum": ["membership", "transaction"]},
        "ground_truth": _UDEC,
        "p_detect": _UDEC,
        "beta": _UDEC,
        "gamma": _UDEC,
        "counterfeit_sales": {"type": "integer", "minimum": 0},
        "unit_value": _UDEC,
        "drop_probability": _UDEC,
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "cells": {"type": "integer", "minimum": 1},
                "replicates": {"type": "integer", "minimum": 2},
                "supply": _UDEC,
                "explicit": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["p_detect", "beta", "gamma", "alpha", "k", "ell", "D"],
                        "additionalProperties": False,
                        "properties": {
                            "p_detect": _UDEC, "beta": _UDEC, "gamma": _UDEC, "alpha": _UDEC,
                            "k": {"type": "integer", "minimum": 0},
                            "ell": {"type": "integer", "minimum": 0},
                            "D": _UDEC,
                        },
                    },
                },
            },
        },
        "depth": {
            "type": "object",
            "additionalProperties": False,
            "required": ["max_depth"],
            "properties": {
                "max_depth": {"type": "integer", "minimum": 1},
                "base_supply": _UDEC,
                "shrink": _UDEC,
            },
        },
    },
}

_ROW = {
    "type": "object",
    "required": ["name", "closed_form", "monte_carlo_mean", "stderr", "replicates", "flag"],
    "properties": {
        "name": {"type": "string"},
        "closed_form": {"type": "string"},
        "monte_carlo_mean": {"type": "string"},
        "stderr": {"type": "string"},
        "replicates": {"type": "integer"},
        "flag": {"type": "boolean"},
    },
}

REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "$id": REPORT_SCHEMA_ID,
    "type": "object",
    "required": ["schema", "kind", "config_digest", "master_seed", "replicates",
                 "agents", "comparisons", "events", "snapshot_digest"],
    "properties": {
        "schema": {"const": REPORT_SCHEMA_ID},
        "kind": {"enum": ["agents", "theorem2_grid", "depth_dilution"]},
        "config_digest": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "master_seed": {"type": "integer"},
        "replicates": {"type": "integer"},
        "agents": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["net_mean", "net_stderr"],
                "properties": {"net_mean": _DEC, "net_stderr": {"type": "string"}},
            },
        },
        "comparisons": {"type": "array", "items": _ROW},
        "events": {"type": "object", "additionalProperties": {"type": "integer"}},
        "snapshot_digest": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "depth": {"type": "array"},
    },
}


# -- strategies ---------------------------------------------------------

@dataclass(frozen=True)
class HonestMaker:
    elements_per_epoch: int = 1
    acquisition_cost: Money = field(default_factory=Money)
    max_elements: Optional[int] = None
    visibility: str = "private"


@dataclass(frozen=True)
class HonestVoter:
    accuracy: Fraction = Fraction(1)


@dataclass(frozen=True)
class LazyHolder:
    pass


@dataclass(frozen=True)
class LivenessProber:
    cost: Money = field(default_factory=lambda: Money.of("0.1"))
    k: int = 1
    price: Money = field(default_factory=Money)


@dataclass(frozen=True)
class Troll:
    garbage_rate: Fraction = Fraction(1)


@dataclass(frozen=True)
class Madman:
    loss_budget: Money = field(default_factory=Money)


@dataclass(frozen=True)
class SybilDuplicator:
    identity_count: int = 2
    acquisition_cost: Money = field(default_factory=Money)
    probe_cost: Money = field(default_factory=Money)


@dataclass(frozen=True)
class Leaker:
    leak_tick: int = 1
    arrival_tick: int = 0


@dataclass(frozen=True)
class MembershipBuyer:
    arrival_tick: int = 0
    price: Optional[Money] = None


STRATEGIES = {cls.__name__: cls for cls in (
    HonestMaker, HonestVoter, LazyHolder, LivenessProber, Troll, Madman,
    SybilDuplicator, Leaker, MembershipBuyer,
)}

_MONEY_FIELDS = {"acquisition_cost", "cost", "price", "loss_budget", "probe_cost"}
_FRACTION_FIELDS = {"accuracy", "garbage_rate"}


def strategy_from_dict(d: dict):
    cls = STRATEGIES[d["type"]]
    kwargs = {}
    for k, v in d.items():
        if k == "type":
            continue
        if k in _MONEY_FIELDS and v is not None:
            v = Money.of(v)
        elif k in _FRACTION_FIELDS:
            v = to_fraction(v)
        kwargs[k] = v
    return cls(**kwargs)


def strategy_to_dict(s) -> dict:
    d = {"type": type(s).__name__}
    for f in fields(s):
        v = getattr(s, f.name)
        if isinstance(v, Money):
            v = str(v)
        elif isinstance(v, Fraction):
            v = _dec(v)
        d[f.name] = v
    return d


# -- config -------------------------------------------------------------

_TOKEN_PARAMS = ("candidate_deposit", "candidate_reward", "challenge_deposit",
                 "challenge_reward", "fork_deposit", "query_stake")
_BP_PARAMS = {"candidate_quorum": "candidate_quorum_bp", "challenge_quorum": "challenge_quorum_bp",
              "fork_threshold": "fork_threshold_bp"}


def params_from_json(d: dict) -> Params:
    kwargs = {}
    for k, v in d.items():
        if k in _TOKEN_PARAMS:
            kwargs[k] = tokens(v)
        elif k in _BP_PARAMS:
            kwargs[_BP_PARAMS[k]] = fraction_to_bp(v)
        else:
            kwargs[k] = v
    return Params(**kwargs).validate()


@dataclass(frozen=True)
class AgentSpec:
    agent_id: str
    strategy: object
    tokens: int = 0
    cash: int = 0


@dataclass(frozen=True)
class GridCell:
    p_detect: Fraction
    beta: Fraction
    gamma: Fraction
    alpha: Fraction
    k: int
    ell: int
    D: Fraction

    def to_dict(self) -> dict:
        return {"p_detect": _dec(self.p_detect), "beta": _dec(self.beta), "gamma": _dec(self.gamma),
                "alpha": _dec(self.alpha), "k": self.k, "ell": self.ell, "D": _dec(self.D)}


def _dec(x: Fraction) -> str:
    """Shortest exact decimal string for a value with at most 6 fractional digits."""
    text = format_fixed(parse_fixed(x))
    return text.rstrip("0").rstrip(".")


@dataclass(frozen=True)
class GridSpec:
    cells: int = 50
    replicates: int = 100_000
    supply: int = 1000 * 10**6
    explicit: Tuple[GridCell, ...] = ()


@dataclass(frozen=True)
class DepthSpec:
    max_depth: int
    base_supply: int = 1_000_000 * 10**6
    shrink: Fraction = Fraction(1, 10)


@dataclass(frozen=True)
class ScenarioConfig:
    params: Params = field(default_factory=Params)
    rules: Rules = field(default_factory=Rules)
    issuance: Issuance = Issuance.MINING
    agents: Tuple[AgentSpec, ...] = ()
    horizon: int = 0
    replicates: int = 1
    master_seed: int = 0
    access_mode: str = "membership"
    ground_truth: Fraction = Fraction(1)
    p_detect: Fraction = Fraction(0)
    beta: Fraction = Fraction(1)
    gamma: Fraction = Fraction(0)
    counterfeit_sales: int = 0
    unit_value: Money = field(default_factory=Money)
    drop_probability: Fraction = Fraction(0)
    kind: str = "agents"
    grid: Optional[GridSpec] = None
    depth: Optional[DepthSpec] = None
    document: dict = field(default_factory=dict, compare=False, repr=False)

    def digest(self) -> str:
        return canon.digest(self.document)

    def agent(self, agent_id: str) -> AgentSpec:
        for a in self.agents:
            if a.agent_id == agent_id:
                return a
        raise KeyError(agent_id)


def _path(parts) -> str:
    return "/".join(str(p) for p in parts) or "<root>"


def load_config(doc: dict, seed_override: Optional[int] = None) -> ScenarioConfig:
    """Validate a config document and build a :class:`ScenarioConfig`.

    Raises :class:`ConfigInvalid` listing every problem with its field path.
    """
    doc = dict(doc)
    if seed_override is not None:
        doc["master_seed"] = seed_override
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    problems = [(_path(e.absolute_path), e.message) for e in sorted(validator.iter_errors(doc), key=str)]
    if problems:
        raise ConfigInvalid(problems)

    for i, a in enumerate(doc.get("agents", [])):
        allowed = _STRATEGY_FIELDS[a["strategy"]["type"]]
        sub = jsonschema.Draft7Validator({"type": "object", "properties": allowed,
                                          "additionalProperties": False})
        strat = {k: v for k, v in a["strategy"].items() if k != "type"}
        for e in sub.iter_errors(strat):
            problems.append((_path(["agents", i, "strategy", *e.absolute_path]), e.message))
    if problems:
        raise ConfigInvalid(problems)

    def build(path, fn, *args):
        try:
            return fn(*args)
        except (InvalidParams, ValueError, TypeError) as exc:
            problems.append((path, str(exc)))
            return None

    params = build("params", params_from_json, doc.get("params", {}))
    rules = build("rules", Rules.from_dict, doc.get("rules", {}))
    agents = []
    seen = set()
    for i, a in enumerate(doc.get("agents", [])):
        if a["id"] in seen:
            problems.append((f"agents/{i}/id", f"duplicate agent id {a['id']!r}"))
        seen.add(a["id"])
        strat = build(f"agents/{i}/strategy", strategy_from_dict, a["strategy"])
        toks = build(f"agents/{i}/tokens", tokens, a.get("tokens", "0"))
        cash = build(f"agents/{i}/cash", parse_fixed, a.get("cash", "0"))
        agents.append(AgentSpec(a["id"], strat, toks, cash))

    fracs = {}
    for name in ("ground_truth", "p_detect", "beta", "gamma", "drop_probability"):
        v = to_fraction(doc[name]) if name in doc else None
        if v is not None and not 0 <= v <= 1:
            problems.append((name, f"{v} outside [0, 1]"))
        if v is not None:
            fracs[name] = v
    for i, a in enumerate(agents):
        s = a.strategy
        for fname in ("accuracy", "garbage_rate"):
            if s is not None and hasattr(s, fname) and not 0 <= getattr(s, fname) <= 1:
                problems.append((f"agents/{i}/strategy/{fname}", "must lie in [0, 1]"))

    issuance = Issuance(doc.get("issuance", "mining"))
    if params is not None and issuance is Issuance.PREDETERMINED and (params.candidate_reward or params.challenge_reward):
        problems.append(("params/candidate_reward", "predetermined issuance cannot mint rewards; set rewards to 0"))
    for i, a in enumerate(agents):
        if isinstance(a.strategy, LivenessProber) and a.strategy.cost.micro == 0:
            problems.append((f"agents/{i}/strategy/cost", "liveness check cost must be positive"))

    kind = doc.get("kind", "agents")
    grid = depth = None
    if kind == "agents" and not agents:
        problems.append(("agents", "an agents scenario needs at least one agent"))
    if kind == "agents" and sum((a.tokens or 0) for a in agents) == 0:
        problems.append(("agents", "initial token allocation is empty"))
    if kind == "theorem2_grid":
        g = doc.get("grid", {})
        explicit = []
        for j, c in enumerate(g.get("explicit", [])):
            cell = build(f"grid/explicit/{j}", lambda c=c: GridCell(
                to_fraction(c["p_detect"]), to_fraction(c["beta"]), to_fraction(c["gamma"]),
                to_fraction(c["alpha"]), c["k"], c["ell"], to_fraction(c["D"])))
            if cell is not None:
                if not (0 <= cell.p_detect <= 1 and 0 <= cell.beta <= 1):
                    problems.append((f"grid/explicit/{j}", "p_detect and beta must lie in [0, 1]"))
                elif (cell.k + 1) * cell.alpha >= 1:
                    problems.append((f"grid/explicit/{j}", "need (k + 1) * alpha < 1 for stake purchases"))
                explicit.append(cell)
        grid = GridSpec(
            cells=g.get("cells", len(explicit) or 50),
            replicates=g.get("replicates", 100_000),
            supply=build("grid/supply", tokens, g.get("supply", "1000")),
            explicit=tuple(explicit),
        )
    if kind == "depth_dilution":
        if "depth" not in doc:
            problems.append(("depth", "depth_dilution scenarios need a depth block"))
        else:
            d = doc["depth"]
            shrink = to_fraction(d.get("shrink", "0.1"))
            if not 0 <= shrink <= 1:
                problems.append(("depth/shrink", "must lie in [0, 1]"))
            depth = DepthSpec(d["max_depth"], build("depth/base_supply", tokens, d.get("base_supply", "1000000")),
                              shrink)
    if problems:
        raise ConfigInvalid(problems)

    return ScenarioConfig(
        params=params,
        rules=rules,
        issuance=issuance,
        agents=tuple(agents),
        horizon=doc["horizon"],
        replicates=doc.get("replicates", 1),
        master_seed=doc["master_seed"],
        access_mode=doc.get("access_mode", "membership"),
        ground_truth=fracs.get("ground_truth", Fraction(1)),
        p_detect=fracs.get("p_detect", Fraction(0)),
        beta=fracs.get("beta", Fraction(1)),
        gamma=fracs.get("gamma", Fraction(0)),
        counterfeit_sales=doc.get("counterfeit_sales", 0),
        unit_value=Money.of(doc.get("unit_value", "0")),
        drop_probability=fracs.get("drop_probability", Fraction(0)),
        kind=kind,
        grid=grid,
        depth=depth,
        document=doc,
    )


def validate_report(report: dict) -> None:
    jsonschema.Draft7Validator(REPORT_SCHEMA).validate(report)
