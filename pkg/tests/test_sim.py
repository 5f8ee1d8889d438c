import json
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import agent, agents_doc, config_doc
from tdm.economics import liveness_budget
from tdm.ledger import MICRO
from tdm.protocol import replay
from tdm.scenario import load_config
from tdm.sim import (
    World,
    comparison_row,
    depth_dilution_scan,
    flip_cost,
    mean_stderr,
    run_replicate,
    run_scenario,
)


def cfg_of(doc):
    return load_config(doc)


def test_mean_stderr():
    mean, se = mean_stderr([1, 1, 1])
    assert mean == 1 and se == 0
    mean, se = mean_stderr([0, 2])
    # sample variance 2, stderr sqrt(1) = 1
    assert mean == 1 and se == 1
    assert mean_stderr([5]) == (5, 0)


def test_comparison_row_flag_uses_slack():
    assert comparison_row("x", Fraction(100), Fraction(104), 1, 10, 0)["flag"]
    assert not comparison_row("x", Fraction(100), Fraction(103), 1, 10, 0)["flag"]
    assert not comparison_row("x", Fraction(100), Fraction(104), 1, 10, 1)["flag"]


def test_replicates_are_deterministic():
    cfg = cfg_of(config_doc("mixed_population"))
    a, b = run_replicate(cfg, 3, trace=True), run_replicate(cfg, 3, trace=True)
    assert a.nets == b.nets and a.log == b.log
    assert run_replicate(cfg, 4).snapshot_digest != a.snapshot_digest


def test_replicate_log_replays():
    cfg = cfg_of(config_doc("mixed_population"))
    r = run_replicate(cfg, 0, trace=True)
    assert replay([json.loads(x) for x in r.log]).snapshot_digest() == r.snapshot_digest


def test_certain_detection_loses_price():
    report = run_scenario(cfg_of(config_doc("leaker_detected")))
    leaker = report.document["agents"]["leaker"]
    assert leaker["net_mean"] == "-100.000000"
    assert leaker["net_min"] == leaker["net_max"]


def test_leaker_outcomes_take_two_values():
    doc = config_doc("leaker_detected")
    doc["p_detect"] = "0.5"
    doc["replicates"] = 40
    cfg = cfg_of(doc)
    values = {run_replicate(cfg, i).nets["leaker"] for i in range(40)}
    assert values == {run_replicate(cfg, 0, force_detection=d).nets["leaker"] for d in (True, False)}


def test_lazy_holder_without_tokens_gains_nothing():
    doc = agents_doc(agent("founder", "HonestVoter", "100"), agent("idle", "LazyHolder"),
                     agent("maker", "HonestMaker", max_elements=2), replicates=3)
    doc["agents"].append({"id": "buyer", "strategy": {"type": "MembershipBuyer", "arrival_tick": 150}})
    doc["rules"] = {"membership_price": "10"}
    for i in range(3):
        assert run_replicate(cfg_of(doc), i).nets["idle"] == 0


def test_accounting_closes():
    cfg = cfg_of(config_doc("mixed_population"))
    world = World(cfg, 1)
    world.run()
    world.check_invariants()
    cash_delta = sum(world.cash[a.agent_id] - a.spec.cash for a in world.agents)
    assert cash_delta == world.external_in - world.external_out


def test_transaction_mode_bonds_nothing():
    doc = agents_doc(agent("founder", "LazyHolder", "100"),
                     agent("buyer", "MembershipBuyer", arrival_tick=5),
                     access_mode="transaction", rules={"membership_price": "20"},
                     params={"query_stake": "5"})
    world = World(cfg_of(doc), 0)
    world.run()
    assert world.econ.owned("buyer") == 0
    assert world.cash["buyer"] == -20 * MICRO
    assert world.cash["founder"] == 20 * MICRO


def test_buyer_declines_above_limit():
    doc = agents_doc(agent("founder", "LazyHolder", "100"),
                     agent("buyer", "MembershipBuyer", arrival_tick=5, price="10"),
                     rules={"membership_price": "20"})
    r = run_replicate(cfg_of(doc), 0)
    assert r.counts["purchases_declined"] == 1 and r.nets["buyer"] == 0


def test_troll_candidacies_rejected_by_voters():
    doc = agents_doc(agent("founder", "HonestVoter", "100"),
                     agent("troll", "Troll", "10", garbage_rate="1"), horizon=24 * 10)
    r = run_replicate(cfg_of(doc), 0)
    assert r.counts["candidacies"] >= 9
    assert r.counts.get("accepted", 0) == 0
    # polls opened in the last three days are still open at the horizon
    assert r.counts["rejected"] >= r.counts["candidacies"] - 3


def test_madman_stops_at_budget():
    doc = agents_doc(agent("founder", "HonestVoter", "100"),
                     agent("madman", "Madman", "10", loss_budget="0"),
                     horizon=24 * 20, params={"candidate_deposit": "1"},
                     rules={"forfeit_rejected_deposit": True}, unit_value="1")
    r = run_replicate(cfg_of(doc), 0)
    assert r.counts["madman_stopped"] == 1
    assert r.counts.get("accepted", 0) == 0


def test_prober_respects_budget():
    doc = agents_doc(agent("founder", "HonestVoter", "100"),
                     agent("maker", "HonestMaker", max_elements=3),
                     agent("prober", "LivenessProber", "5", cost="100", k=1, price="1000"),
                     horizon=24 * 40, params={"offchain": True})
    world = World(cfg_of(doc), 0)
    world.run()
    prober = next(a for a in world.agents if a.agent_id == "prober")
    checks = prober.memory["checks"]
    bound = liveness_budget(1, 1000, 100, prober.memory["N"])
    assert checks and max(checks.values()) <= bound


def test_sybil_dedup_blocks_copies():
    cfg = cfg_of(config_doc("sybil_defended"))
    r = run_replicate(cfg, 0)
    assert r.counts["duplicates_blocked"] >= 1
    assert r.nets["sybil"] <= 0


def test_workers_do_not_change_report():
    doc = config_doc("mixed_population")
    doc["replicates"] = 6
    cfg = cfg_of(doc)
    assert run_scenario(cfg, workers=1).to_json() == run_scenario(cfg, workers=3).to_json()


def test_depth_scan_rows():
    cfg = cfg_of(config_doc("depth_dilution"))
    rows, log, digest = depth_dilution_scan(cfg, 8)
    costs = [int(r["flip_cost"].replace(".", "")) for r in rows]
    assert costs == sorted(costs, reverse=True)
    assert [r["subtree_depth"] for r in rows] == list(range(8, 0, -1))
    assert all(r["verified"] for r in rows)
    assert replay([json.loads(x) for x in log]).snapshot_digest() == digest


def test_depth_scan_zero_supply_is_degenerate():
    doc = config_doc("depth_dilution")
    doc["depth"] = {"max_depth": 3, "base_supply": "0.00001", "shrink": "0.1"}
    rows, _, _ = depth_dilution_scan(cfg_of(doc), 3)
    assert [r["degenerate"] for r in rows] == [False, False, True]
    assert rows[-1]["verified"] is None


@settings(max_examples=200)
@given(st.integers(1, 10**12), st.integers(1, 10000))
def test_flip_cost_is_minimal(supply, bp):
    cost = flip_cost(supply, bp)
    assert cost * 10000 >= bp * supply
    assert (cost - 1) * 10000 < bp * supply
