"""Agent-based Monte Carlo harness on top of the protocol engine.

A replicate builds one engine from a :class:`ScenarioConfig`, wakes at epoch
boundaries, poll closes and agent-scheduled ticks, and at each wake runs an
act pass, a proof-response pass and a vote pass over agents in id order.
Every random draw comes from a stream seeded by ``(master_seed, index)``.
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import canon
from .economics import contribution_ev, dishonest_ev, liveness_budget, to_fixed
from .errors import DuplicateContent, InvariantViolation, TDMError
from .ledger import MICRO, BondPurpose, Issuance, Money, TokenEconomy, format_fixed, quantize
from .offchain import EPOCH_TICKS, ContentStore
from .protocol import Choice, Engine, PollKind, replay
from .scenario import (
    REPORT_SCHEMA_ID,
    AgentSpec,
    GridCell,
    HonestMaker,
    HonestVoter,
    LazyHolder,
    Leaker,
    LivenessProber,
    Madman,
    MembershipBuyer,
    ScenarioConfig,
    SybilDuplicator,
    Troll,
)
from .structure import (
    BP,
    Element,
    ElementMetadata,
    ElementState,
    Inline,
    Leaf,
    Nested,
    Offchain,
    Params,
    TokenizedDataStructure,
    Visibility,
    new_structure,
)

_LIVE = (ElementState.CANDIDATE, ElementState.QUASI_FINALIZED)
_DEPOSITS = (BondPurpose.CANDIDATE_DEPOSIT, BondPurpose.CHALLENGE_DEPOSIT, BondPurpose.FORK_DEPOSIT)


# -- statistics ---------------------------------------------------------

def _ceil_sqrt(x: Fraction) -> int:
    n = math.ceil(x)
    r = math.isqrt(n)
    return r if r * r == n else r + 1


def mean_stderr(values: Sequence[int]) -> Tuple[Fraction, int]:
    """Exact mean and the standard error of the mean (rounded up), in the input units."""
    n = len(values)
    mean = Fraction(sum(values), n)
    if n < 2:
        return mean, 0
    ss = sum((v - mean) ** 2 for v in values)
    return mean, _ceil_sqrt(ss / (n - 1) / n)


def _sign(x) -> int:
    return (x > 0) - (x < 0)


def comparison_row(name: str, closed_form_micro: Fraction, mean_micro: Fraction, stderr_micro: int,
                   replicates: int, slack_micro: int = 0, **extra) -> dict:
    """One oracle-vs-simulation row; ``flag`` marks a gap beyond 3 standard errors."""
    gap = abs(mean_micro - closed_form_micro)
    row = {
        "name": name,
        "closed_form": to_fixed(closed_form_micro / MICRO),
        "monte_carlo_mean": format_fixed(round(mean_micro)),
        "stderr": format_fixed(stderr_micro),
        "replicates": replicates,
        "flag": gap > 3 * stderr_micro + slack_micro,
    }
    row.update(extra)
    return row


# -- one replicate ------------------------------------------------------

@dataclass
class AgentState:
    spec: AgentSpec
    identities: Tuple[str, ...]
    memory: dict = field(default_factory=dict)

    @property
    def agent_id(self) -> str:
        return self.spec.agent_id


@dataclass
class ReplicateResult:
    index: int
    nets: Dict[str, int]
    observations: Dict[str, Tuple[int, Fraction, int]]
    counts: Dict[str, int]
    snapshot_digest: str
    log: Optional[List[str]] = None


class World:
    """Mutable state of one replicate: engine, agent cash and bookkeeping."""

    def __init__(self, cfg: ScenarioConfig, index: int, force_detection: Optional[bool] = None):
        self.cfg = cfg
        self.index = index
        self.force_detection = force_detection
        self.rng = random.Random(canon.derive_seed(cfg.master_seed, index))
        store = ContentStore(cfg.drop_probability, canon.derive_seed(cfg.master_seed, index, "store"))
        allocation = {a.agent_id: a.tokens for a in cfg.agents if a.tokens}
        td = new_structure(cfg.params, allocation, cfg.issuance)
        self.engine = Engine(td, replace(cfg.rules), store)
        self.initial_supply = td.economy.total_supply

        self.agents: List[AgentState] = []
        self.owner_of: Dict[str, str] = {}
        for spec in sorted(cfg.agents, key=lambda a: a.agent_id):
            ids = (spec.agent_id,)
            if isinstance(spec.strategy, SybilDuplicator):
                ids += tuple(f"{spec.agent_id}~{i}" for i in range(1, spec.strategy.identity_count))
            self.agents.append(AgentState(spec, ids))
            for i in ids:
                self.owner_of[i] = spec.agent_id
        self.cash = {a.agent_id: a.cash for a in cfg.agents}
        self.external_in = 0
        self.external_out = 0
        self.valid: Dict[str, bool] = {}
        self.counts: Counter = Counter()
        self.payments: Dict[str, List[Tuple[Fraction, int]]] = {}
        self.leak_info: Dict[str, dict] = {}

    # -- money helpers ---------------------------------------------------

    def pay_external(self, agent: str, micro: int) -> None:
        self.cash[agent] -= micro
        self.external_out += micro

    def receive_external(self, agent: str, micro: int) -> None:
        self.cash[agent] += micro
        self.external_in += micro

    def _credit_split(self, split: Dict[str, Money]) -> None:
        for holder, m in split.items():
            self.cash[self.owner_of[holder]] += m.micro

    @property
    def econ(self) -> TokenEconomy:
        return self.engine.td.economy

    def net(self, agent: AgentState) -> int:
        """Cash delta plus valued token delta plus book value of memberships."""
        econ = self.econ
        held = 0
        book = 0
        for i in agent.identities:
            held += econ.balance(i)
            held += sum(b.amount for b in econ.active_bonds() if b.owner == i and b.purpose in _DEPOSITS)
            if self.engine.is_member(i):
                book += self.engine.memberships[i].price.micro
        token_delta = held - agent.spec.tokens
        valued = quantize(Fraction(token_delta, MICRO) * self.cfg.unit_value.to_fraction())
        return self.cash[agent.agent_id] - agent.spec.cash + valued + book

    # -- element helpers -------------------------------------------------

    def _leaf(self, owner: str, payload: bytes, visibility: Visibility) -> Leaf:
        if self.cfg.params.offchain:
            h = self.engine.store_blob(owner, payload)
            return Leaf(Offchain(h, owner), visibility)
        return Leaf(Inline(payload), visibility)

    def _propose(self, agent: str, payload: bytes, valid: bool, visibility=Visibility.PUBLIC) -> Optional[str]:
        body = self._leaf(agent, payload, visibility)
        try:
            pid = self.engine.propose_candidate(agent, body)
        except DuplicateContent:
            self.counts["duplicates_blocked"] += 1
            return None
        except TDMError:
            return None
        eid = self.engine.poll(pid).element_id
        self.valid[eid] = valid
        self.counts["candidacies"] += 1
        return eid

    def _payload(self, agent: str, n: int, tag: str) -> bytes:
        return f"{agent}/{n}/{tag}/{self.rng.getrandbits(64):016x}".encode()

    def _live(self) -> List[str]:
        return self.engine.td.live_elements()

    # -- main loop -------------------------------------------------------

    def run(self) -> None:
        horizon = self.cfg.horizon
        t = 0
        while True:
            self._absorb(self.engine.advance_time(t))
            for a in self.agents:
                self._act(a, t)
            for a in self.agents:
                self._respond(a)
            for a in self.agents:
                self._vote(a)
            nxt = self._next_wake(t)
            if nxt is None or nxt > horizon:
                break
            t = nxt
        if self.engine.now < horizon:
            self._absorb(self.engine.advance_time(horizon))

    def _next_wake(self, t: int) -> Optional[int]:
        ticks = [(t // EPOCH_TICKS + 1) * EPOCH_TICKS]
        ev = self.engine.next_event_tick()
        if ev is not None:
            ticks.append(ev)
        for a in self.agents:
            s = a.spec.strategy
            for name in ("arrival_tick", "leak_tick"):
                v = getattr(s, name, None)
                if v is not None and v > t:
                    ticks.append(v)
        return min(ticks)

    def _absorb(self, results: List[dict]) -> None:
        names = {
            ("candidacy", "accepted"): "accepted",
            ("candidacy", "rejected"): "rejected",
            ("challenge", "upheld"): "challenges_upheld",
            ("challenge", "dismissed"): "challenges_dismissed",
            ("liveness", "upheld"): "liveness_failures",
            ("liveness", "dismissed"): "liveness_passed",
            ("fork", "forked"): "forks",
            ("fork", "no_fork"): "forks_rejected",
        }
        for r in results:
            self.counts[names.get((r["kind"], r["outcome"]), f"{r['kind']}_{r['outcome']}")] += 1

    # -- strategies ------------------------------------------------------

    def _act(self, agent: AgentState, t: int) -> None:
        s = agent.spec.strategy
        handler = {
            HonestMaker: self._act_maker,
            HonestVoter: self._act_voter,
            LazyHolder: lambda a, s, t: None,
            LivenessProber: self._act_prober,
            Troll: self._act_troll,
            Madman: self._act_madman,
            SybilDuplicator: self._act_sybil,
            Leaker: self._act_leaker,
            MembershipBuyer: self._act_buyer,
        }[type(s)]
        handler(agent, s, t)

    def _act_maker(self, agent: AgentState, s: HonestMaker, t: int) -> None:
        if t % EPOCH_TICKS:
            return
        made = agent.memory.get("made", 0)
        for _ in range(s.elements_per_epoch):
            if s.max_elements is not None and made >= s.max_elements:
                break
            valid = self.rng.random() < self.cfg.ground_truth
            payload = self._payload(agent.agent_id, made, "data" if valid else "junk")
            if self._propose(agent.agent_id, payload, valid, Visibility(s.visibility)) is None:
                break
            self.pay_external(agent.agent_id, s.acquisition_cost.micro)
            made += 1
        agent.memory["made"] = made

    def _act_voter(self, agent: AgentState, s: HonestVoter, t: int) -> None:
        if t % EPOCH_TICKS:
            return
        seen = agent.memory.setdefault("assessed", set())
        for eid in self._live():
            if eid in seen:
                continue
            seen.add(eid)
            correct = self.rng.random() < s.accuracy
            looks_invalid = (not self.valid.get(eid, True)) == correct
            if looks_invalid:
                try:
                    self.engine.issue_challenge(agent.agent_id, eid)
                    self.counts["challenges"] += 1
                except TDMError:
                    pass

    def _act_troll(self, agent: AgentState, s: Troll, t: int) -> None:
        if t % EPOCH_TICKS or not self.rng.random() < s.garbage_rate:
            return
        n = agent.memory.get("n", 0)
        agent.memory["n"] = n + 1
        self._propose(agent.agent_id, self._payload(agent.agent_id, n, "garbage"), False)

    def _act_madman(self, agent: AgentState, s: Madman, t: int) -> None:
        if t % EPOCH_TICKS or agent.memory.get("stopped"):
            return
        if -self.net(agent) > s.loss_budget.micro:
            agent.memory["stopped"] = True
            self.counts["madman_stopped"] += 1
            return
        n = agent.memory.get("n", 0)
        agent.memory["n"] = n + 1
        own = agent.memory.setdefault("own_polls", set())
        eid = self._propose(agent.agent_id, self._payload(agent.agent_id, n, "garbage"), False)
        if eid is not None:
            own.add(self._poll_for(eid, PollKind.CANDIDACY))
        targets = [e for e in self._live() if self.valid.get(e, True)]
        if targets:
            target = self.rng.choice(targets)
            try:
                own.add(self.engine.issue_challenge(agent.agent_id, target))
                self.counts["challenges"] += 1
            except TDMError:
                pass

    def _poll_for(self, eid: str, kind: PollKind) -> int:
        return max(p.poll_id for p in self.engine.polls.values() if p.element_id == eid and p.kind is kind)

    def _act_prober(self, agent: AgentState, s: LivenessProber, t: int) -> None:
        if t % EPOCH_TICKS or not self.cfg.params.offchain:
            return
        targets = [e for e in self._live() if self.engine.td.metadata[e].proposer != agent.agent_id]
        if not targets:
            return
        budget = math.floor(liveness_budget(s.k, s.price.to_fraction(), s.cost.to_fraction(), len(targets)))
        checks = agent.memory.setdefault("checks", Counter())
        agent.memory["N"] = len(targets)
        agent.memory["budget"] = budget
        for eid in targets:
            if checks[eid] >= budget:
                continue
            try:
                self.engine.liveness_challenge(agent.agent_id, eid, self.rng.randbytes(32))
            except TDMError:
                continue
            self.pay_external(agent.agent_id, s.cost.micro)
            checks[eid] += 1
            self.counts["liveness_checks"] += 1

    def _act_sybil(self, agent: AgentState, s: SybilDuplicator, t: int) -> None:
        mem = agent.memory
        copies = mem.setdefault("copies", {})
        payload = f"{agent.agent_id}/duplicate".encode()
        if not mem.get("acquired"):
            mem["acquired"] = True
            self.pay_external(agent.agent_id, s.acquisition_cost.micro)
        blocked = []
        for ident in agent.identities:
            eid = copies.get(ident)
            if eid is not None and self.engine.td.state_of(eid) in _LIVE:
                continue
            before = self.counts["duplicates_blocked"]
            eid = self._propose(ident, payload, True)
            if eid is not None:
                copies[ident] = eid
            elif self.counts["duplicates_blocked"] > before:
                blocked.append(ident)
        if not blocked or not self.cfg.params.offchain:
            return
        # free the dedup slot: probe a copy whose reward is still bonded and withhold the proof
        for ident, eid in sorted(copies.items()):
            if not blocked:
                break
            meta = self.engine.td.metadata[eid]
            if meta.state is not ElementState.QUASI_FINALIZED or meta.reward_bond is None:
                continue
            if self.econ.bonds[meta.reward_bond].state.value != "active":
                continue
            challenger = blocked[0]
            try:
                self.engine.liveness_challenge(challenger, eid, self.rng.randbytes(32))
            except TDMError:
                continue
            blocked.pop(0)
            self.pay_external(agent.agent_id, s.probe_cost.micro)
            self.counts["liveness_checks"] += 1

    def _buy(self, agent_id: str) -> Optional[Money]:
        """Pay the current price; membership mode also bonds the query stake."""
        price = self.engine.rules.membership_price
        econ = self.econ
        payment_alpha = {
            a.agent_id: Fraction(econ.owned(a.agent_id), econ.total_supply)
            for a in self.agents if isinstance(a.spec.strategy, HonestMaker)
        }
        try:
            if self.cfg.access_mode == "membership":
                _, split = self.engine.acquire_membership(agent_id, price)
                self.counts["memberships"] += 1
            else:
                split = econ.distribute_pro_rata(price)
                self.counts["transactions"] += 1
        except TDMError:
            return None
        self.cash[agent_id] -= price.micro
        self._credit_split(split)
        for maker, alpha in payment_alpha.items():
            if alpha > 0:
                self.payments.setdefault(maker, []).append((alpha, price.micro))
        return price

    def _act_buyer(self, agent: AgentState, s: MembershipBuyer, t: int) -> None:
        if t != s.arrival_tick:
            return
        if s.price is not None and self.engine.rules.membership_price.micro > s.price.micro:
            self.counts["purchases_declined"] += 1
            return
        self._buy(agent.agent_id)

    def _act_leaker(self, agent: AgentState, s: Leaker, t: int) -> None:
        info = self.leak_info.setdefault(agent.agent_id, {})
        if t == s.arrival_tick and "price" not in info:
            econ = self.econ
            price = self._buy(agent.agent_id)
            if price is not None:
                info["price"] = price.micro
                bond = self.engine.memberships.get(agent.agent_id)
                stake = econ.bonds[bond.stake_bond].amount if bond else 0
                info["alpha"] = Fraction(stake, econ.total_supply)
        if t == s.leak_tick and "price" in info and "detected" not in info:
            if self.force_detection is not None:
                detected = self.force_detection
            else:
                detected = self.rng.random() < self.cfg.p_detect
            info["detected"] = detected
            info["alpha"] = Fraction(self.econ.owned(agent.agent_id), self.econ.total_supply)
            if detected:
                self.counts["leaks_detected"] += 1
                if self.engine.is_member(agent.agent_id):
                    self.engine.slash_membership(agent.agent_id)
            else:
                self.counts["leaks_undetected"] += 1
                D = Fraction(info["price"])
                new_price = Money(quantize(self.cfg.beta * self.engine.rules.membership_price.to_fraction()))
                self.engine.set_membership_price(new_price)
                self.receive_external(agent.agent_id, round(self.cfg.gamma * self.cfg.counterfeit_sales * D))

    # -- response and vote passes ---------------------------------------

    def _respond(self, agent: AgentState) -> None:
        if isinstance(agent.spec.strategy, SybilDuplicator):
            return
        for p in self.engine.open_polls():
            if p.kind is not PollKind.LIVENESS or p.proof_response is not None:
                continue
            if self.engine.td.metadata[p.element_id].proposer in agent.identities:
                try:
                    self.engine.respond_from_store(p.poll_id)
                except TDMError:
                    pass

    def _vote(self, agent: AgentState) -> None:
        s = agent.spec.strategy
        if isinstance(s, HonestVoter):
            for p in self.engine.open_polls():
                if p.kind not in (PollKind.CANDIDACY, PollKind.CHALLENGE) or agent.agent_id in p.votes:
                    continue
                if self.econ.balance(agent.agent_id) <= 0:
                    return
                correct = self.rng.random() < s.accuracy
                valid = self.valid.get(p.element_id, True)
                right = Choice.YES if valid == (p.kind is PollKind.CANDIDACY) else Choice.NO
                choice = right if correct else (Choice.NO if right is Choice.YES else Choice.YES)
                self.engine.cast_vote(p.poll_id, agent.agent_id, choice)
        elif isinstance(s, Madman):
            own = agent.memory.get("own_polls", set())
            for p in self.engine.open_polls():
                if p.poll_id in own and agent.agent_id not in p.votes and self.econ.balance(agent.agent_id) > 0:
                    self.engine.cast_vote(p.poll_id, agent.agent_id, Choice.YES)

    # -- results ---------------------------------------------------------

    def check_invariants(self) -> None:
        econ = self.econ
        econ.check_conservation()
        self.engine.td.validate()
        if econ.total_supply != self.initial_supply + econ.minted - econ.burned:
            raise InvariantViolation("supply does not match initial + minted - burned")
        delta = sum(self.cash.values()) - sum(a.cash for a in self.cfg.agents)
        if delta != self.external_in - self.external_out:
            raise InvariantViolation(
                f"cash deltas {delta} != external inflow {self.external_in} - outflow {self.external_out}"
            )
        if self.cfg.issuance is Issuance.PREDETERMINED and econ.minted:
            raise InvariantViolation("predetermined economy minted tokens")

    def observations(self) -> Dict[str, Tuple[int, Fraction, int]]:
        """Per-theorem (realized value, closed form, payment count), all in micro-units."""
        obs = {}
        cfg = self.cfg
        for a in self.agents:
            s = a.spec.strategy
            # the contribution formula values returns through payments only
            if isinstance(s, HonestMaker) and a.agent_id in self.payments and not cfg.unit_value.micro:
                pays = self.payments[a.agent_id]
                spent = s.acquisition_cost.micro * a.memory.get("made", 0)
                if len(set(pays)) == 1:
                    alpha, D = pays[0]
                    cf = contribution_ev(alpha, len(pays), D, spent)
                else:
                    cf = sum(alpha * D for alpha, D in pays) - spent
                obs[f"theorem3/{a.agent_id}"] = (self.net(a), cf, len(pays))
            elif isinstance(s, Leaker):
                info = self.leak_info.get(a.agent_id, {})
                if "detected" not in info:
                    continue
                k = sum(1 for b in self.agents if isinstance(b.spec.strategy, MembershipBuyer)
                        and s.leak_tick < b.spec.strategy.arrival_tick <= cfg.horizon)
                p = Fraction(int(self.force_detection)) if self.force_detection is not None else cfg.p_detect
                cf = dishonest_ev(p, cfg.beta, cfg.gamma, info["alpha"], k, cfg.counterfeit_sales, info["price"])
                obs[f"theorem2/{a.agent_id}"] = (self.net(a), cf, k + 1)
        return obs


def run_replicate(cfg: ScenarioConfig, index: int, force_detection: Optional[bool] = None,
                  trace: bool = False) -> ReplicateResult:
    """Run one replicate to the horizon and check the accounting invariants."""
    world = World(cfg, index, force_detection)
    world.run()
    world.check_invariants()
    econ = world.econ
    counts = dict(world.counts)
    counts["minted"] = econ.minted
    counts["burned"] = econ.burned
    return ReplicateResult(
        index=index,
        nets={a.agent_id: world.net(a) for a in world.agents},
        observations=world.observations(),
        counts=counts,
        snapshot_digest=world.engine.snapshot_digest(),
        log=world.engine.log_lines() if trace else None,
    )


def _run_one(args):
    cfg, index = args
    return run_replicate(cfg, index, trace=index == 0)


# -- reports ------------------------------------------------------------

@dataclass
class SimReport:
    """Report document plus the event log of the primary engine run."""

    document: dict
    events_log: List[str] = field(default_factory=list)

    def to_json(self) -> str:
        return canon.dumps(self.document) + "\n"

    @property
    def comparisons(self) -> List[dict]:
        return self.document["comparisons"]


def _base_document(cfg: ScenarioConfig) -> dict:
    return {
        "schema": REPORT_SCHEMA_ID,
        "kind": cfg.kind,
        "config_digest": cfg.digest(),
        "master_seed": cfg.master_seed,
        "replicates": cfg.replicates,
        "agents": {},
        "comparisons": [],
        "events": {},
    }


def run_scenario(cfg: ScenarioConfig, workers: int = 1) -> SimReport:
    """Run a scenario of any kind; the report is a pure function of the config."""
    if cfg.kind == "theorem2_grid":
        rows, log, digest, all_digest = estimate_theorem2(cfg)
        doc = _base_document(cfg)
        doc["replicates"] = cfg.grid.replicates
        doc["comparisons"] = rows
        doc["snapshot_digest"] = digest
        doc["replicate_digests"] = all_digest
        return SimReport(doc, log)
    if cfg.kind == "depth_dilution":
        rows, log, digest = depth_dilution_scan(cfg, cfg.depth.max_depth)
        doc = _base_document(cfg)
        doc["depth"] = rows
        doc["snapshot_digest"] = digest
        return SimReport(doc, log)

    jobs = [(cfg, i) for i in range(cfg.replicates)]
    if workers > 1 and cfg.replicates > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_run_one(j) for j in jobs]
    results.sort(key=lambda r: r.index)
    return aggregate(cfg, results)


def aggregate(cfg: ScenarioConfig, results: List[ReplicateResult]) -> SimReport:
    doc = _base_document(cfg)
    for agent_id in sorted(results[0].nets):
        values = [r.nets[agent_id] for r in results]
        mean, se = mean_stderr(values)
        doc["agents"][agent_id] = {
            "net_mean": format_fixed(round(mean)),
            "net_stderr": format_fixed(se),
            "net_min": format_fixed(min(values)),
            "net_max": format_fixed(max(values)),
        }
    names = sorted({n for r in results for n in r.observations})
    for name in names:
        obs = [r.observations[name] for r in results if name in r.observations]
        mean, se = mean_stderr([o[0] for o in obs])
        cf = sum((o[1] for o in obs), Fraction(0)) / len(obs)
        slack = max(o[2] for o in obs)
        doc["comparisons"].append(comparison_row(name, cf, mean, se, len(obs), slack))
    events: Counter = Counter()
    for r in results:
        events.update(r.counts)
    doc["events"] = dict(sorted(events.items()))
    doc["snapshot_digest"] = results[0].snapshot_digest
    doc["replicate_digests"] = canon.digest([r.snapshot_digest for r in results])
    return SimReport(doc, results[0].log or [])


# -- Theorem 2 grid -----------------------------------------------------

def theorem2_cell_config(cell: GridCell, base: ScenarioConfig, supply: int) -> ScenarioConfig:
    """Leaker scenario for one grid cell: buy at tick 0, leak at tick 1, k buyers after."""
    stake = round(cell.alpha * supply)
    params = replace(base.params, candidate_reward=0, challenge_reward=0, query_stake=stake)
    agents = [AgentSpec("founder", LazyHolder(), supply, 0), AgentSpec("leaker", Leaker(leak_tick=1, arrival_tick=0))]
    agents += [AgentSpec(f"buyer-{i:02d}", MembershipBuyer(arrival_tick=2 + i)) for i in range(cell.k)]
    rules = replace(base.rules, steady_state=True, membership_price=Money(quantize(cell.D)))
    return replace(
        base,
        kind="agents",
        params=params,
        rules=rules,
        issuance=Issuance.PREDETERMINED,
        agents=tuple(agents),
        horizon=cell.k + 2,
        replicates=1,
        access_mode="membership",
        p_detect=cell.p_detect,
        beta=cell.beta,
        gamma=cell.gamma,
        counterfeit_sales=cell.ell,
        unit_value=Money(),
        drop_probability=Fraction(0),
        grid=None,
        document={"cell": cell.to_dict(), "supply": supply},
    )


def grid_cells(cfg: ScenarioConfig) -> List[GridCell]:
    """Explicit cells first; otherwise a certain-detection cell, the EV-zero
    boundary cell, then random cells up to the requested count."""
    grid = cfg.grid
    cells = list(grid.explicit)
    if not cells:
        half, tenth = Fraction(1, 2), Fraction(1, 10)
        cells.append(GridCell(Fraction(1), Fraction(1), Fraction(0), Fraction(1, 20), 10, 0, Fraction(100)))
        cells.append(GridCell(half, Fraction(1), tenth, tenth, 5, 5, Fraction(100)))
    r = random.Random(canon.derive_seed(cfg.master_seed, "theorem2-grid"))
    while len(cells) < grid.cells:
        k = r.randint(1, 12)
        cells.append(GridCell(
            p_detect=Fraction(r.randint(5, 95), 100),
            beta=Fraction(r.randint(0, 100), 100),
            gamma=Fraction(r.randint(0, 50), 100),
            alpha=Fraction(r.randint(1, 999 // (k + 1)), 1000),
            k=k,
            ell=r.randint(0, 6),
            D=Fraction(r.randint(10, 1000)),
        ))
    return cells[:grid.cells]


def estimate_theorem2(cfg: ScenarioConfig):
    """Monte Carlo EV of the Leaker in every grid cell against the closed form.

    Each cell's two outcomes (detected, undetected) are produced by running the
    cell scenario through the engine once per branch; replicates then differ
    only in the detection draw, so the estimate uses ``replicates`` Bernoulli
    draws from a per-cell stream. Returns ``(rows, primary_log, primary_digest,
    all_digest)`` where the primary run is cell 0's detected branch.
    """
    grid = cfg.grid
    n = grid.replicates
    rows = []
    primary_log: List[str] = []
    primary_digest = ""
    digests = []
    for i, cell in enumerate(grid_cells(cfg)):
        ccfg = theorem2_cell_config(cell, cfg, grid.supply)
        det = run_replicate(ccfg, 0, force_detection=True, trace=i == 0)
        und = run_replicate(ccfg, 0, force_detection=False)
        if i == 0:
            primary_log, primary_digest = det.log, det.snapshot_digest
        digests += [det.snapshot_digest, und.snapshot_digest]
        v_det, v_und = det.nets["leaker"], und.nets["leaker"]
        draws = np.random.default_rng(canon.derive_seed(cfg.master_seed, "theorem2", i)).random(n)
        n_det = int(np.count_nonzero(draws < float(cell.p_detect)))
        mean = Fraction(n_det * v_det + (n - n_det) * v_und, n)
        q = Fraction(n_det, n)
        var_mean = q * (1 - q) * (v_und - v_det) ** 2 / (n - 1)
        se = _ceil_sqrt(var_mean)
        alpha = Fraction(ccfg.params.query_stake, grid.supply)
        cf = dishonest_ev(cell.p_detect, cell.beta, cell.gamma, alpha, cell.k, cell.ell, cell.D)
        cf_micro = cf * MICRO
        rows.append(comparison_row(
            f"theorem2/cell{i:02d}", cf_micro, mean, se, n, slack_micro=cell.k + 2,
            cell=cell.to_dict(),
            detected_net=format_fixed(v_det),
            undetected_net=format_fixed(v_und),
            detections=n_det,
            significant=abs(cf) > cell.D / 20,
            sign_agree=_sign(mean) == _sign(cf_micro),
        ))
    return rows, primary_log, primary_digest, canon.digest(digests)


# -- dilution with depth ------------------------------------------------

def flip_cost(supply: int, quorum_bp: int) -> int:
    """Fewest yes-tokens that meet ``quorum_bp`` of ``supply``: ceil(bp * S / 10^4)."""
    return -(-quorum_bp * supply // BP)


def _flip_succeeds(params: Params, supply: int, madman_tokens: int) -> Tuple[bool, Engine]:
    alloc = {"madman": madman_tokens, "rest": supply - madman_tokens}
    econ = TokenEconomy.create("T", {a: v for a, v in alloc.items() if v > 0})
    td = TokenizedDataStructure(params=params, economy=econ)
    engine = Engine(td)
    pid = engine.propose_candidate("madman", Leaf(Inline(b"garbage")))
    if madman_tokens > 0:
        engine.cast_vote(pid, "madman", Choice.YES)
    engine.advance_time(engine.poll(pid).close_tick)
    return engine.poll(pid).outcome.value == "accepted", engine


def depth_dilution_scan(cfg: ScenarioConfig, max_depth: int):
    """Token cost for a lone attacker to pass a garbage candidacy at each depth.

    Depth ``d`` holds an economy of ``base_supply * shrink^(d-1)`` micro-tokens
    (floored). Each cost is checked on a fresh engine: the attacker holding
    exactly the cost passes the vote, holding one micro-token less fails.
    Returns ``(rows, primary_log, digest)``.
    """
    spec = cfg.depth
    base = spec.base_supply if spec is not None else 1_000_000 * MICRO
    shrink = spec.shrink if spec is not None else Fraction(1, 10)
    params = replace(cfg.params, candidate_deposit=0)
    bp = params.candidate_quorum_bp
    supplies = [math.floor(base * shrink ** (d - 1)) for d in range(1, max_depth + 1)]

    # the nested chain itself: level d is an element of level d - 1
    child = None
    for d in range(max_depth, 0, -1):
        S = supplies[d - 1]
        econ = TokenEconomy.create(f"T{d}", {"holder": S} if S else {})
        td = TokenizedDataStructure(params=params, economy=econ)
        if child is not None:
            td.add_element(Element("e1", Nested(child)), ElementMetadata(ElementState.QUASI_FINALIZED, "", 0))
        child = td
    root = child
    root.validate()

    rows = []
    primary_log: List[str] = []
    level = root
    for d, S in enumerate(supplies, start=1):
        cost = flip_cost(S, bp)
        degenerate = S == 0
        verified = None
        if not degenerate:
            ok, engine = _flip_succeeds(params, S, cost)
            short, _ = _flip_succeeds(params, S, cost - 1)
            verified = ok and not short
            if d == 1:
                primary_log = engine.log_lines()
        rows.append({
            "depth": d,
            "subtree_depth": level.depth(),
            "supply": format_fixed(S),
            "flip_cost": format_fixed(cost),
            "flip_cost_value": format_fixed(quantize(Fraction(cost, MICRO) * cfg.unit_value.to_fraction())),
            "degenerate": degenerate,
            "verified": verified,
        })
        nested = [e for e in level.elements if isinstance(e.body, Nested)]
        level = nested[0].body.structure if nested else None
    if not primary_log:
        primary_log = Engine(TokenizedDataStructure(params=params)).log_lines()
    return rows, primary_log, replay([json.loads(line) for line in primary_log]).snapshot_digest()
