"""Acceptance gate: one test per criterion, each under its wall-clock limit.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary prints a
PASS/FAIL line per criterion.
"""

import json
import random
import subprocess
import sys
import time
from fractions import Fraction

import pytest

from conftest import make_engine
from helpers import CONFIGS, config_doc
from tdm import canon
from tdm.cli import main
from tdm.economics import contribution_ev, min_data_price
from tdm.errors import InvalidPartition
from tdm.ledger import MICRO, BondState
from tdm.protocol import Choice, Engine, Outcome, Partition, Rules, quorum_met
from tdm.scenario import load_config
from tdm.sim import flip_cost, run_replicate, run_scenario
from tdm.structure import (
    Element,
    ElementMetadata,
    ElementState,
    Inline,
    Leaf,
    Params,
    new_structure,
)


class Timer:
    def __init__(self, limit):
        self.limit = limit

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        if exc[0] is None:
            assert self.elapsed < self.limit, f"took {self.elapsed:.2f}s, limit {self.limit}s"


@pytest.mark.criterion(1, "liveness worked example prints 10")
def test_criterion_1_liveness_example():
    with Timer(1.0):
        proc = subprocess.run(
            [sys.executable, "-m", "tdm", "econ", "liveness", "--k", "10", "--D", "1000", "--c", "0.1", "--N", "10000"],
            capture_output=True, text=True,
        )
    assert proc.returncode == 0
    assert proc.stdout == "10\n"


@pytest.mark.criterion(2, "all-honest maker net matches contribution EV")
def test_criterion_2_honest_maker():
    with Timer(5.0):
        cfg = load_config(config_doc("theorem3"))
        result = run_replicate(cfg, 0)
    # one reward token minted on a supply of 100: realized alpha is 1/101
    oracle = contribution_ev(Fraction(1, 101), 10, 1000, 50)
    assert abs(result.nets["maker"] - oracle * MICRO) <= 1
    row = result.observations["theorem3/maker"]
    assert row[1] == oracle * MICRO


@pytest.mark.criterion(3, "leaker Monte Carlo agrees with dishonest EV over the grid")
def test_criterion_3_theorem2_grid():
    with Timer(300.0):
        report = run_scenario(load_config(config_doc("theorem2_grid")))
    rows = report.comparisons
    assert len(rows) == 50
    assert all(r["replicates"] == 100_000 for r in rows)
    flagged = [r["name"] for r in rows if r["flag"]]
    assert flagged == []
    # the bound itself, on the reported fixed-point values and without slack
    beyond = [r["name"] for r in rows
              if abs(Fraction(r["monte_carlo_mean"]) - Fraction(r["closed_form"])) > 3 * Fraction(r["stderr"])]
    assert beyond == []
    disagree = [r["name"] for r in rows if r["significant"] and not r["sign_agree"]]
    assert disagree == []
    assert sum(r["significant"] for r in rows) >= 25


@pytest.mark.criterion(4, "contribution EV changes sign at the minimum data price")
def test_criterion_4_pricing_corollary():
    rng = random.Random(20240)
    eps = Fraction(1, 10**6)
    with Timer(1.0):
        for _ in range(100):
            E = Fraction(rng.randint(1, 10**6), 100)
            supply = rng.randint(1, 10**9)
            k = rng.randint(1, 1000)
            reward = rng.randint(1, supply)
            alpha = Fraction(reward, supply)
            D = min_data_price(E, supply, k, reward)
            assert contribution_ev(alpha, k, D * (1 - eps), E) < 0
            assert contribution_ev(alpha, k, D, E) == 0
            assert contribution_ev(alpha, k, D * (1 + eps), E) > 0


@pytest.mark.criterion(5, "quorum decisions are exact at 66.67%")
def test_criterion_5_quorum_exactness():
    q = Fraction(6667, 10000)
    checked = 0
    with Timer(10.0):
        for supply in range(1, 301):
            for yes in range(supply + 1):
                assert quorum_met(yes, supply, 6667) == (Fraction(yes, supply) >= q)
                checked += 1
        # the engine applies the same rule: the minimal flip cost passes, one less fails
        for supply in (1, 2, 3, 7, 100, 299, 300):
            cost = flip_cost(supply, 6667)
            for tokens, expected in ((cost, Outcome.ACCEPTED), (cost - 1, Outcome.REJECTED)):
                alloc = {k: v for k, v in (("attacker", tokens), ("rest", supply - tokens)) if v}
                e = make_engine(alloc, candidate_reward=0)
                pid = e.propose_candidate("rest" if tokens == 0 else "attacker", Leaf(Inline(b"g")))
                if tokens:
                    e.cast_vote(pid, "attacker", Choice.YES)
                e.advance_time(72)
                assert e.poll(pid).outcome is expected
    assert checked == sum(s + 1 for s in range(1, 301))


def _fork_engine(rng):
    holders = {f"h{i}": rng.randint(1, 50) * MICRO for i in range(rng.randint(1, 5))}
    td = new_structure(Params(candidate_reward=0), holders)
    for i in range(rng.randint(0, 8)):
        td.add_element(Element(f"e{i + 1}", Leaf(Inline(f"row{i}".encode()))),
                       ElementMetadata(ElementState.QUASI_FINALIZED, "h0", 0))
    return Engine(td, Rules())


@pytest.mark.criterion(6, "forks split elements disjointly and exhaustively")
def test_criterion_6_fork_disjointness():
    rng = random.Random(6)
    resolved = rejected = 0
    with Timer(30.0):
        for _ in range(1000):
            e = _fork_engine(rng)
            ids = sorted(e.td.metadata)
            owners = sorted(e.economy.owners())
            side = {x: rng.random() < 0.5 for x in ids + owners}
            e1 = {x for x in ids if side[x]}
            h1 = {x for x in owners if side[x]}
            e2, h2 = set(ids) - e1, set(owners) - h1
            valid = rng.random() < 0.6
            if not valid:
                # overlap or drop something, whichever is possible
                mode = rng.randrange(4)
                if mode == 0 and ids:
                    e2.add(ids[0]); e1.add(ids[0])
                elif mode == 1 and ids:
                    e1.discard(ids[-1]); e2.discard(ids[-1])
                elif mode == 2:
                    h1.add(owners[0]); h2.add(owners[0])
                else:
                    h1.discard(owners[-1]); h2.discard(owners[-1])
                with pytest.raises(InvalidPartition):
                    e.propose_fork(owners[0], Partition.of(e1, e2, h1, h2))
                rejected += 1
                continue
            supply = e.economy.total_supply
            fid = e.propose_fork(owners[0], Partition.of(e1, e2, h1, h2))
            for h in owners:
                e.cast_vote(fid, h, Choice.YES)
                e.adopt_side(fid, h, rng.choice((1, 2)))
            e.advance_time(e.poll(fid).close_tick)
            assert e.poll(fid).outcome is Outcome.FORKED
            td1, td2 = e.td, e.detached[fid]
            l1 = {x.element_id for x in td1.elements}
            l2 = {x.element_id for x in td2.elements}
            assert l1.isdisjoint(l2)
            assert l1 | l2 == set(ids)
            assert l1 == e1 and l2 == e2
            assert set(td1.economy.owners()).isdisjoint(td2.economy.owners())
            assert td1.economy.total_supply + td2.economy.total_supply == supply
            td1.validate()
            td2.validate()
            resolved += 1
    assert resolved > 300 and rejected > 300


@pytest.mark.criterion(7, "duplication attack loses with defenses and wins without")
def test_criterion_7_sybil():
    with Timer(60.0):
        defended = run_scenario(load_config(config_doc("sybil_defended")))
        undefended = run_scenario(load_config(config_doc("sybil_undefended")))
    for report in (defended, undefended):
        assert report.document["replicates"] == 1000
    d_cfg = load_config(config_doc("sybil_defended"))
    assert d_cfg.rules.dedup and d_cfg.params.reward_stake_period >= d_cfg.params.challenge_vote_period
    u_cfg = load_config(config_doc("sybil_undefended"))
    assert not u_cfg.rules.dedup and u_cfg.params.reward_stake_period == 0
    assert Fraction(defended.document["agents"]["sybil"]["net_mean"]) <= 0
    assert Fraction(defended.document["agents"]["sybil"]["net_max"]) <= 0
    assert Fraction(undefended.document["agents"]["sybil"]["net_mean"]) > 0


def _accepted_element():
    e = make_engine()
    pid = e.propose_candidate("alice", Leaf(Inline(b"row")))
    e.cast_vote(pid, "alice", Choice.YES)
    e.advance_time(72)
    eid = e.poll(pid).element_id
    return e, eid, e.economy.bond(e.td.metadata[eid].reward_bond).release_tick


def _uphold(e, eid, issue_tick):
    e.advance_time(issue_tick)
    cid = e.issue_challenge("alice", eid)
    e.cast_vote(cid, "alice", Choice.YES)
    return cid


@pytest.mark.criterion(8, "statute of limitations boundary")
def test_criterion_8_statute_boundary():
    with Timer(1.0):
        cvp = Params().challenge_vote_period

        # resolves one tick before release: the reward is seized
        e, eid, R = _accepted_element()
        cid = _uphold(e, eid, R - 1 - cvp)
        e.advance_time(R - 1)
        assert e.poll(cid).outcome is Outcome.UPHELD
        assert e.economy.bond(e.td.metadata[eid].reward_bond).state is BondState.SEIZED

        # resolves one tick after release: balances stay exactly as they were
        e, eid, R = _accepted_element()
        cid = _uphold(e, eid, R + 1 - cvp)
        e.advance_time(R)
        before = canon.dump_bytes(e.economy.balances_dict())
        e.advance_time(R + 1)
        assert e.poll(cid).outcome is Outcome.UPHELD
        assert e.td.state_of(eid) is ElementState.CHALLENGED
        assert canon.dump_bytes(e.economy.balances_dict()) == before

        # issued after release: ledger bytes equal before issue and after resolution
        e, eid, R = _accepted_element()
        e.advance_time(R + 5)
        before = canon.dump_bytes(e.economy.balances_dict())
        cid = _uphold(e, eid, R + 5)
        e.advance_time(e.poll(cid).close_tick)
        assert e.poll(cid).outcome is Outcome.UPHELD
        assert canon.dump_bytes(e.economy.balances_dict()) == before


@pytest.mark.criterion(9, "grid report is byte-identical across runs")
def test_criterion_9_determinism(tmp_path):
    cfg = str(CONFIGS / "theorem2_grid.json")
    with Timer(300.0):
        assert main(["--quiet", "run", cfg, "--out", str(tmp_path / "a")]) == 0
        assert main(["--quiet", "run", cfg, "--out", str(tmp_path / "b")]) == 0
    first = (tmp_path / "a" / "report.json").read_bytes()
    assert first == (tmp_path / "b" / "report.json").read_bytes()
    assert json.loads(first)["replicates"] == 100_000
