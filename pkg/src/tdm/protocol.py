"""Candidacy, challenge, liveness, membership and fork operations.

:class:`Engine` owns one structure, its off-chain store and a tick clock, and
applies operations strictly in sequence. Every state-changing call appends a
canonical record ``{seq, tick, op, args, result}`` to ``engine.log``;
:func:`replay` rebuilds an engine from such a log and re-checks every result.
"""

from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field, fields
from typing import Dict, FrozenSet, List, Optional, Tuple

from . import canon
from .errors import (
    AlreadyMember,
    AlreadyVoted,
    ChallengePending,
    ClockRegression,
    DataUnavailable,
    DuplicateContent,
    ElementNotLive,
    InsufficientTokens,
    InvalidPartition,
    InvalidStructure,
    NoEconomy,
    NotAMember,
    NotOffchainLeaf,
    NotTokenHolder,
    OffchainDisabled,
    PollAlreadyResolved,
    PollClosed,
    PollStillOpen,
    ReplayMismatch,
    TDMError,
    UnknownPoll,
    WrongPollKind,
    WrongPrice,
)
from .ledger import BondPurpose, BondState, Issuance, Money, TokenEconomy
from .offchain import EPOCH_TICKS, ContentStore, LivenessProof, verify
from .structure import (
    BP,
    Element,
    ElementMetadata,
    ElementState,
    Inline,
    Leaf,
    Nested,
    Offchain,
    TokenizedDataStructure,
    Visibility,
    body_from_dict,
    body_to_dict,
)


class PollKind(str, enum.Enum):
    CANDIDACY = "candidacy"
    CHALLENGE = "challenge"
    LIVENESS = "liveness"
    FORK = "fork"


class Choice(str, enum.Enum):
    YES = "yes"
    NO = "no"


class Outcome(str, enum.Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    UPHELD = "upheld"
    DISMISSED = "dismissed"
    FORKED = "forked"
    NO_FORK = "no_fork"
    CANCELLED = "cancelled"


def quorum_met(yes_weight: int, supply: int, quorum_bp: int) -> bool:
    """``yes/supply >= quorum`` in exact integer basis points."""
    return supply > 0 and yes_weight * BP >= quorum_bp * supply


@dataclass(frozen=True)
class Partition:
    elements_1: FrozenSet[str]
    elements_2: FrozenSet[str]
    holders_1: FrozenSet[str]
    holders_2: FrozenSet[str]

    @classmethod
    def of(cls, elements_1, elements_2, holders_1, holders_2) -> "Partition":
        return cls(frozenset(elements_1), frozenset(elements_2),
                   frozenset(holders_1), frozenset(holders_2))

    def to_dict(self) -> dict:
        return {k.name: sorted(getattr(self, k.name)) for k in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "Partition":
        return cls.of(d["elements_1"], d["elements_2"], d["holders_1"], d["holders_2"])


@dataclass
class Vote:
    choice: Choice
    weight: int


@dataclass
class Poll:
    poll_id: int
    kind: PollKind
    proposer: str
    deposit_bond: Optional[int]
    open_tick: int
    close_tick: int
    element_id: Optional[str] = None
    nonce: Optional[bytes] = None
    partition: Optional[Partition] = None
    votes: Dict[str, Vote] = field(default_factory=dict)
    adoption: Dict[str, int] = field(default_factory=dict)
    proof_response: Optional[bytes] = None
    outcome: Optional[Outcome] = None
    resolved_tick: Optional[int] = None

    @property
    def resolved(self) -> bool:
        return self.outcome is not None

    def is_open(self, now: int) -> bool:
        return not self.resolved and self.open_tick <= now < self.close_tick

    def weight(self, choice: Choice) -> int:
        return sum(v.weight for v in self.votes.values() if v.choice is choice)

    def to_dict(self) -> dict:
        return {
            "poll_id": self.poll_id,
            "kind": self.kind.value,
            "proposer": self.proposer,
            "deposit_bond": self.deposit_bond,
            "open_tick": self.open_tick,
            "close_tick": self.close_tick,
            "element_id": self.element_id,
            "nonce": None if self.nonce is None else self.nonce.hex(),
            "partition": None if self.partition is None else self.partition.to_dict(),
            "votes": {a: [v.choice.value, v.weight] for a, v in sorted(self.votes.items())},
            "adoption": dict(sorted(self.adoption.items())),
            "proof_response": None if self.proof_response is None else self.proof_response.hex(),
            "outcome": None if self.outcome is None else self.outcome.value,
            "resolved_tick": self.resolved_tick,
        }


@dataclass
class MembershipRecord:
    agent: str
    stake_bond: int
    acquired_tick: int
    price: Money

    def to_dict(self) -> dict:
        return {
            "agent": self.agent,
            "stake_bond": self.stake_bond,
            "acquired_tick": self.acquired_tick,
            "price": str(self.price),
        }


@dataclass
class Rules:
    """Engine policy switches that are not part of the parameter table."""

    dedup: bool = True
    seizure_to_challenger: bool = False
    forfeit_rejected_deposit: bool = False
    steady_state: bool = False
    membership_price: Money = field(default_factory=Money)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["membership_price"] = str(self.membership_price)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Rules":
        d = dict(d)
        if "membership_price" in d:
            d["membership_price"] = Money.of(d["membership_price"])
        return cls(**d)


_PENDING_STATES = (ElementState.CANDIDATE, ElementState.QUASI_FINALIZED)


def _next_seq(td: TokenizedDataStructure) -> int:
    seqs = [int(e.element_id[1:]) for e in td.elements
            if e.element_id.startswith("e") and e.element_id[1:].isdigit()]
    return max(seqs, default=0) + 1


class Engine:
    """Sequential protocol state machine over one tokenized data structure."""

    def __init__(
        self,
        td: TokenizedDataStructure,
        rules: Optional[Rules] = None,
        store: Optional[ContentStore] = None,
        now: int = 0,
    ):
        self.td = td
        self.rules = rules or Rules()
        self.store = store if store is not None else ContentStore()
        self.now = now
        self.polls: Dict[int, Poll] = {}
        self.next_poll_id = 1
        self.next_element_seq = _next_seq(td)
        self.memberships: Dict[str, MembershipRecord] = {}
        self.detached: Dict[int, TokenizedDataStructure] = {}
        # trusted verifier copy of every payload ever stored through the engine
        self.ground_truth: Dict[bytes, bytes] = dict(self.store.blobs)
        self.parent: Optional[Tuple["Engine", str]] = None
        self.log: List[dict] = []
        self._epochs_done = now // EPOCH_TICKS
        self._append("genesis", self._genesis_args(), None)

    # -- logging ---------------------------------------------------------

    def _genesis_args(self) -> dict:
        return {
            "structure": self.td.to_dict(),
            "rules": self.rules.to_dict(),
            "store": {
                "drop_probability": str(self.store.drop_probability),
                "rng_seed": self.store.rng_seed,
                "blobs": [p.hex() for _, p in sorted(self.store.blobs.items())],
            },
            "now": self.now,
        }

    def _append(self, op: str, args: dict, result, tick: Optional[int] = None) -> None:
        tick = self.now if tick is None else tick
        self.log.append({"seq": len(self.log), "tick": tick, "op": op, "args": args, "result": result})

    def _run(self, op: str, args: dict, fn, encode=lambda r: r):
        # records carry the tick the op was applied at, before any clock move
        tick = self.now
        try:
            result = fn()
        except TDMError as exc:
            self._append(op, args, {"error": type(exc).__name__}, tick)
            raise
        self._append(op, args, encode(result), tick)
        return result

    def log_lines(self) -> List[str]:
        return [canon.dumps(r) for r in self.log]

    # -- queries ---------------------------------------------------------

    @property
    def economy(self) -> TokenEconomy:
        if self.td.economy is None:
            raise NoEconomy("token-free structure has no staking operations")
        return self.td.economy

    def poll(self, poll_id: int) -> Poll:
        try:
            return self.polls[poll_id]
        except KeyError:
            raise UnknownPoll(f"no poll {poll_id}") from None

    def open_polls(self) -> List[Poll]:
        return [p for _, p in sorted(self.polls.items()) if not p.resolved]

    def is_member(self, agent: str) -> bool:
        rec = self.memberships.get(agent)
        if rec is None or self.td.economy is None:
            return False
        bond = self.td.economy.bonds.get(rec.stake_bond)
        return bond is not None and bond.owner == agent and bond.state is BondState.ACTIVE

    def next_event_tick(self) -> Optional[int]:
        """Earliest future tick at which a poll closes or a reward bond releases."""
        ticks = [p.close_tick for p in self.polls.values() if not p.resolved]
        if self.td.economy is not None:
            ticks += [
                b.release_tick for b in self.td.economy.active_bonds()
                if b.purpose is BondPurpose.CANDIDATE_REWARD
            ]
        ticks = [t for t in ticks if t > self.now]
        return min(ticks) if ticks else None

    def snapshot(self) -> dict:
        return {
            "now": self.now,
            "structure": self.td.to_dict(),
            "polls": [p.to_dict() for _, p in sorted(self.polls.items())],
            "memberships": [m.to_dict() for _, m in sorted(self.memberships.items())],
            "detached": {str(k): v.digest() for k, v in sorted(self.detached.items())},
            "next_poll_id": self.next_poll_id,
            "next_element_seq": self.next_element_seq,
        }

    def snapshot_digest(self) -> str:
        return canon.digest(self.snapshot())

    def _live_hashes(self) -> set:
        hashes = set()
        for e in self.td.elements:
            if isinstance(e.body, Leaf) and self.td.metadata[e.element_id].state in _PENDING_STATES:
                ref = e.body.ref
                hashes.add(ref.content_hash)
        return hashes

    def _open_challenge_on(self, element_id: str) -> bool:
        return any(
            p.element_id == element_id and p.kind in (PollKind.CHALLENGE, PollKind.LIVENESS)
            for p in self.open_polls()
        )

    def _new_poll(self, kind, proposer, bond, period, **kw) -> Poll:
        poll = Poll(self.next_poll_id, kind, proposer, bond, self.now, self.now + period, **kw)
        self.polls[poll.poll_id] = poll
        self.next_poll_id += 1
        return poll

    def _seize(self, bond_id: Optional[int], recipient: Optional[str] = None) -> int:
        """Seize a bond if it is still Active here; returns the amount seized."""
        econ = self.economy
        bond = econ.bonds.get(bond_id) if bond_id is not None else None
        if bond is None or bond.state is not BondState.ACTIVE:
            return 0
        if recipient is not None:
            econ.seize_to(bond_id, recipient)
        else:
            econ.burn(bond_id)
        return bond.amount

    # -- off-chain storage ----------------------------------------------

    def store_blob(self, agent: str, payload: bytes) -> bytes:
        def op():
            h = self.store.put(payload)
            self.ground_truth[h] = bytes(payload)
            return h

        return self._run("store_blob", {"agent": agent, "payload": payload.hex()}, op, bytes.hex)

    # -- token-free insertion -------------------------------------------

    def insert(self, body) -> str:
        """Add an element directly to a token-free structure (no curation)."""

        def op():
            if self.td.economy is not None:
                raise InvalidStructure("tokenized structures admit elements only via candidacy")
            self._check_body(body)
            eid = self._next_element_id()
            self.td.add_element(Element(eid, body), ElementMetadata(ElementState.QUASI_FINALIZED, "", self.now))
            return eid

        return self._run("insert", {"body": body_to_dict(body)}, op)

    def _next_element_id(self) -> str:
        eid = f"e{self.next_element_seq}"
        self.next_element_seq += 1
        return eid

    def _check_body(self, body) -> None:
        if isinstance(body, Leaf) and isinstance(body.ref, Offchain):
            if not self.td.params.offchain:
                raise OffchainDisabled("structure stores leaves on-chain only")
            if body.ref.content_hash not in self.store:
                raise DataUnavailable("store the payload before proposing it")
        if isinstance(body, Nested):
            body.structure.validate()

    # -- candidacy -------------------------------------------------------

    def propose_candidate(self, agent: str, body) -> int:
        def op():
            econ = self.economy
            params = self.td.params
            self._check_body(body)
            if self.rules.dedup and isinstance(body, Leaf):
                if body.ref.content_hash in self._live_hashes():
                    raise DuplicateContent("identical content is already live")
            if econ.balance(agent) < params.candidate_deposit:
                raise InsufficientTokens(f"{agent} cannot cover the candidate deposit")
            close = self.now + params.candidate_vote_period
            bond = econ.bond_stake(agent, params.candidate_deposit, BondPurpose.CANDIDATE_DEPOSIT, close)
            eid = self._next_element_id()
            self.td.add_element(Element(eid, body), ElementMetadata(ElementState.CANDIDATE, agent, self.now))
            return self._new_poll(PollKind.CANDIDACY, agent, bond, params.candidate_vote_period,
                                  element_id=eid).poll_id

        return self._run("propose_candidate", {"agent": agent, "body": body_to_dict(body)}, op)

    def cast_vote(self, poll_id: int, agent: str, choice: Choice) -> int:
        """Record a vote; returns the weight (the voter's unbonded balance now)."""

        def op():
            poll = self.poll(poll_id)
            if poll.kind is PollKind.LIVENESS:
                raise WrongPollKind("liveness challenges are settled by proof, not vote")
            if not poll.is_open(self.now):
                raise PollClosed(f"poll {poll_id} is not open at tick {self.now}")
            if agent in poll.votes:
                raise AlreadyVoted(f"{agent} already voted on poll {poll_id}")
            weight = self.economy.balance(agent)
            if weight <= 0:
                raise NotTokenHolder(f"{agent} holds no unbonded tokens")
            poll.votes[agent] = Vote(Choice(choice), weight)
            return weight

        return self._run("cast_vote", {"poll_id": poll_id, "agent": agent, "choice": Choice(choice).value}, op)

    def _check_resolvable(self, poll_id: int, kind: PollKind) -> Poll:
        poll = self.poll(poll_id)
        if poll.kind is not kind:
            raise WrongPollKind(f"poll {poll_id} is a {poll.kind.value} poll")
        if poll.resolved:
            raise PollAlreadyResolved(f"poll {poll_id} already resolved")
        if self.now < poll.close_tick:
            raise PollStillOpen(f"poll {poll_id} closes at {poll.close_tick}")
        return poll

    def _finish(self, poll: Poll, outcome: Outcome) -> Outcome:
        poll.outcome = outcome
        poll.resolved_tick = self.now
        return outcome

    def resolve_candidacy(self, poll_id: int) -> Outcome:
        return self._run("resolve_candidacy", {"poll_id": poll_id},
                         lambda: self._resolve_candidacy(poll_id), lambda o: o.value)

    def _resolve_candidacy(self, poll_id: int) -> Outcome:
        poll = self._check_resolvable(poll_id, PollKind.CANDIDACY)
        econ = self.economy
        params = self.td.params
        meta = self.td.metadata[poll.element_id]
        if quorum_met(poll.weight(Choice.YES), econ.total_supply, params.candidate_quorum_bp):
            meta.transition(ElementState.QUASI_FINALIZED)
            if params.candidate_reward > 0:
                release = self.now + params.reward_stake_period
                meta.reward_bond = econ.mint_bonded(
                    poll.proposer, params.candidate_reward, BondPurpose.CANDIDATE_REWARD, release
                )
                if release <= self.now:
                    econ.release_bond(meta.reward_bond, self.now)
            econ.refund_bond(poll.deposit_bond)
            return self._finish(poll, Outcome.ACCEPTED)
        meta.transition(ElementState.REMOVED)
        if self.rules.forfeit_rejected_deposit:
            econ.burn(poll.deposit_bond)
        else:
            econ.refund_bond(poll.deposit_bond)
        return self._finish(poll, Outcome.REJECTED)

    # -- challenges ------------------------------------------------------

    def _challengeable(self, element_id: str) -> None:
        if not self.td.has_element(element_id) or self.td.state_of(element_id) is not ElementState.QUASI_FINALIZED:
            raise ElementNotLive(f"{element_id} is not quasi-finalized")
        if self._open_challenge_on(element_id):
            raise ChallengePending(f"{element_id} already has an open challenge")

    def issue_challenge(self, agent: str, element_id: str) -> int:
        def op():
            econ = self.economy
            params = self.td.params
            self._challengeable(element_id)
            if econ.balance(agent) < params.challenge_deposit:
                raise InsufficientTokens(f"{agent} cannot cover the challenge deposit")
            close = self.now + params.challenge_vote_period
            bond = econ.bond_stake(agent, params.challenge_deposit, BondPurpose.CHALLENGE_DEPOSIT, close)
            return self._new_poll(PollKind.CHALLENGE, agent, bond, params.challenge_vote_period,
                                  element_id=element_id).poll_id

        return self._run("issue_challenge", {"agent": agent, "element_id": element_id}, op)

    def resolve_challenge(self, poll_id: int) -> Outcome:
        return self._run("resolve_challenge", {"poll_id": poll_id},
                         lambda: self._resolve_challenge(poll_id), lambda o: o.value)

    def _resolve_challenge(self, poll_id: int) -> Outcome:
        poll = self._check_resolvable(poll_id, PollKind.CHALLENGE)
        econ = self.economy
        params = self.td.params
        if quorum_met(poll.weight(Choice.YES), econ.total_supply, params.challenge_quorum_bp):
            meta = self.td.metadata[poll.element_id]
            meta.transition(ElementState.CHALLENGED)
            # past the statute of limitations the bond is gone and this is a no-op
            recipient = poll.proposer if self.rules.seizure_to_challenger else None
            self._seize(meta.reward_bond, recipient)
            econ.refund_bond(poll.deposit_bond)
            if params.challenge_reward > 0:
                econ.mint(poll.proposer, params.challenge_reward)
            return self._finish(poll, Outcome.UPHELD)
        econ.burn(poll.deposit_bond)
        return self._finish(poll, Outcome.DISMISSED)

    def liveness_challenge(self, agent: str, element_id: str, nonce: bytes) -> int:
        def op():
            econ = self.economy
            params = self.td.params
            if not self.td.has_element(element_id):
                raise ElementNotLive(f"no element {element_id}")
            body = self.td.element(element_id).body
            if not (isinstance(body, Leaf) and isinstance(body.ref, Offchain)):
                raise NotOffchainLeaf(f"{element_id} is not an off-chain leaf")
            if len(nonce) != 32:
                raise ValueError("nonce must be 32 bytes")
            self._challengeable(element_id)
            if econ.balance(agent) < params.challenge_deposit:
                raise InsufficientTokens(f"{agent} cannot cover the challenge deposit")
            close = self.now + params.challenge_vote_period
            bond = econ.bond_stake(agent, params.challenge_deposit, BondPurpose.CHALLENGE_DEPOSIT, close)
            return self._new_poll(PollKind.LIVENESS, agent, bond, params.challenge_vote_period,
                                  element_id=element_id, nonce=bytes(nonce)).poll_id

        return self._run("liveness_challenge",
                         {"agent": agent, "element_id": element_id, "nonce": bytes(nonce).hex()}, op)

    def submit_proof(self, poll_id: int, response: bytes) -> bool:
        """Attach the owner's response to an open liveness poll; returns validity."""

        def op():
            poll = self.poll(poll_id)
            if poll.kind is not PollKind.LIVENESS:
                raise WrongPollKind(f"poll {poll_id} is not a liveness challenge")
            if not poll.is_open(self.now):
                raise PollClosed(f"poll {poll_id} is not open at tick {self.now}")
            poll.proof_response = bytes(response)
            return self._proof_valid(poll)

        return self._run("submit_proof", {"poll_id": poll_id, "response": bytes(response).hex()}, op)

    def respond_from_store(self, poll_id: int) -> bool:
        """Convenience for honest owners: prove from the engine's store if possible."""
        poll = self.poll(poll_id)
        ref = self.td.element(poll.element_id).body.ref
        proof = self.store.prove(ref.content_hash, poll.nonce)
        if proof is None:
            return False
        return self.submit_proof(poll_id, proof.response)

    def _proof_valid(self, poll: Poll) -> bool:
        ref = self.td.element(poll.element_id).body.ref
        payload = self.ground_truth.get(ref.content_hash)
        if payload is None or poll.proof_response is None:
            return False
        return verify(payload, LivenessProof(ref.content_hash, poll.nonce, poll.proof_response))

    def resolve_liveness(self, poll_id: int) -> Outcome:
        return self._run("resolve_liveness", {"poll_id": poll_id},
                         lambda: self._resolve_liveness(poll_id), lambda o: o.value)

    def _resolve_liveness(self, poll_id: int) -> Outcome:
        poll = self._check_resolvable(poll_id, PollKind.LIVENESS)
        econ = self.economy
        econ.refund_bond(poll.deposit_bond)
        if self._proof_valid(poll):
            return self._finish(poll, Outcome.DISMISSED)
        meta = self.td.metadata[poll.element_id]
        meta.transition(ElementState.CHALLENGED)
        self._seize(meta.reward_bond)
        return self._finish(poll, Outcome.UPHELD)

    # -- membership and queries -----------------------------------------

    def set_membership_price(self, price: Money) -> None:
        def op():
            self.rules.membership_price = price

        self._run("set_membership_price", {"price": str(price)}, op)

    def acquire_membership(self, agent: str, payment: Money) -> Tuple[MembershipRecord, Dict[str, Money]]:
        """Buy ``query_stake`` bonded tokens; the payment is split pro-rata over owners.

        Returns the membership record and the payment split. Stake tokens are
        minted under mining issuance, or bought pro-rata from unbonded holders
        when the economy is in steady state (or has a predetermined supply).
        """

        def op():
            econ = self.economy
            stake = self.td.params.query_stake
            if payment != self.rules.membership_price:
                raise WrongPrice(f"membership costs {self.rules.membership_price}, got {payment}")
            if self.is_member(agent):
                raise AlreadyMember(f"{agent} is already a member")
            split = econ.distribute_pro_rata(payment)
            buy_from_holders = self.rules.steady_state or econ.issuance is Issuance.PREDETERMINED
            if stake:
                if buy_from_holders:
                    econ.transfer_pro_rata(agent, stake)
                else:
                    econ.mint(agent, stake)
            bond = econ.bond_stake(agent, stake, BondPurpose.QUERY_STAKE, self.now)
            rec = MembershipRecord(agent, bond, self.now, payment)
            self.memberships[agent] = rec
            return rec, split

        def encode(result):
            rec, split = result
            return {"membership": rec.to_dict(), "split": {a: str(m) for a, m in sorted(split.items())}}

        return self._run("acquire_membership", {"agent": agent, "payment": str(payment)}, op, encode)

    def slash_membership(self, agent: str, challenger: Optional[str] = None) -> int:
        """Upheld challenge against a member caught leaking: the query stake is seized."""

        def op():
            if not self.is_member(agent):
                raise NotAMember(f"{agent} holds no active membership")
            recipient = challenger if self.rules.seizure_to_challenger else None
            return self._seize(self.memberships[agent].stake_bond, recipient)

        return self._run("slash_membership", {"agent": agent, "challenger": challenger}, op)

    def query_element(self, agent: str, element_id: str) -> bytes:
        if not self.td.has_element(element_id) or self.td.state_of(element_id) is not ElementState.QUASI_FINALIZED:
            raise ElementNotLive(f"{element_id} is not live")
        body = self.td.element(element_id).body
        if isinstance(body, Nested):
            return canon.dump_bytes(body.structure.to_dict())
        if body.visibility is Visibility.PRIVATE and not self.is_member(agent):
            raise NotAMember(f"{agent} needs membership to read {element_id}")
        if isinstance(body.ref, Inline):
            return body.ref.payload
        payload = self.store.get(body.ref.content_hash)
        if payload is None:
            raise DataUnavailable(f"{element_id} payload missing from the store")
        return payload

    # -- forks -----------------------------------------------------------

    def propose_fork(self, agent: str, partition: Partition) -> int:
        def op():
            econ = self.economy
            params = self.td.params
            ids = set(self.td.metadata)
            owners = set(econ.owners())
            if partition.elements_1 & partition.elements_2 or partition.elements_1 | partition.elements_2 != ids:
                raise InvalidPartition("element sets must cover every element exactly once")
            if partition.holders_1 & partition.holders_2 or partition.holders_1 | partition.holders_2 != owners:
                raise InvalidPartition("holder sets must cover every holder exactly once")
            if econ.balance(agent) < params.fork_deposit:
                raise InsufficientTokens(f"{agent} cannot cover the fork deposit")
            close = self.now + params.fork_vote_period
            bond = econ.bond_stake(agent, params.fork_deposit, BondPurpose.FORK_DEPOSIT, close)
            return self._new_poll(PollKind.FORK, agent, bond, params.fork_vote_period,
                                  partition=partition).poll_id

        return self._run("propose_fork", {"agent": agent, "partition": partition.to_dict()}, op)

    def adopt_side(self, poll_id: int, agent: str, side: int) -> None:
        """Register which child a holder keeps tokens in; non-adopters stay on side 1."""

        def op():
            poll = self.poll(poll_id)
            if poll.kind is not PollKind.FORK:
                raise WrongPollKind(f"poll {poll_id} is not a fork")
            if not poll.is_open(self.now):
                raise PollClosed(f"poll {poll_id} is not open at tick {self.now}")
            if side not in (1, 2):
                raise ValueError("side must be 1 or 2")
            if agent in poll.adoption:
                raise AlreadyVoted(f"{agent} already adopted a side")
            if self.economy.owned(agent) <= 0:
                raise NotTokenHolder(f"{agent} owns no tokens")
            poll.adoption[agent] = side

        self._run("adopt_side", {"poll_id": poll_id, "agent": agent, "side": side}, op)

    def resolve_fork(self, poll_id: int):
        """Returns ``(outcome, children)``; children is ``(td_1, td_2)`` or ``None``."""

        def encode(result):
            outcome, children = result
            out = {"outcome": outcome.value}
            if children:
                out["children"] = [c.digest() for c in children]
            return out

        return self._run("resolve_fork", {"poll_id": poll_id}, lambda: self._resolve_fork(poll_id), encode)

    def _resolve_fork(self, poll_id: int):
        poll = self._check_resolvable(poll_id, PollKind.FORK)
        econ = self.economy
        params = self.td.params
        if not quorum_met(poll.weight(Choice.YES), econ.total_supply, params.fork_threshold_bp):
            econ.burn(poll.deposit_bond)
            return self._finish(poll, Outcome.NO_FORK), None

        # governance restarts in both children: cancel every other open poll
        for other in self.open_polls():
            if other.poll_id == poll_id:
                continue
            econ.refund_bond(other.deposit_bond)
            if other.kind is PollKind.CANDIDACY:
                self.td.metadata[other.element_id].transition(ElementState.REMOVED)
            self._finish(other, Outcome.CANCELLED)
        econ.refund_bond(poll.deposit_bond)

        side_of = {a: poll.adoption.get(a, 1) for a in econ.owners()}
        td1 = self._fork_child(poll.partition.elements_1, side_of, 1, econ.token_id)
        td2 = self._fork_child(poll.partition.elements_2, side_of, 2, f"{econ.token_id}/fork{poll_id}")
        self._finish(poll, Outcome.FORKED)

        self.td = td1
        self.detached[poll_id] = td2
        if self.parent is not None:
            parent, eid = self.parent
            parent.td.element(eid).body = Nested(td1)
        return Outcome.FORKED, (td1, td2)

    def _fork_child(self, element_ids, side_of, side, token_id) -> TokenizedDataStructure:
        src = self.td.economy
        holdings = {a: v for a, v in src.holdings.items() if side_of.get(a, 1) == side}
        bonds = {i: copy.copy(b) for i, b in src.bonds.items() if side_of.get(b.owner, 1) == side}
        supply = sum(holdings.values()) + sum(b.amount for b in bonds.values() if b.state is BondState.ACTIVE)
        # tokens left on the other side count as burned here
        econ = TokenEconomy(token_id, src.issuance, dict(sorted(holdings.items())), bonds, supply,
                            src.next_bond_id, src.minted, src.burned + src.total_supply - supply)
        elements = [copy.deepcopy(e) for e in self.td.elements if e.element_id in element_ids]
        metadata = {e.element_id: copy.copy(self.td.metadata[e.element_id]) for e in elements}
        return TokenizedDataStructure(self.td.params, econ, elements, metadata)

    def attach_child(self, element_id: str) -> "Engine":
        """Engine for a nested element; a fork there re-points this element to the offshoot."""
        body = self.td.element(element_id).body
        if not isinstance(body, Nested):
            raise InvalidStructure(f"{element_id} is not a nested structure")
        child = Engine(body.structure, Rules(), self.store, now=self.now)
        child.parent = (self, element_id)
        return child

    # -- clock -----------------------------------------------------------

    def resolve(self, poll_id: int):
        kind = self.poll(poll_id).kind
        return {
            PollKind.CANDIDACY: self._resolve_candidacy,
            PollKind.CHALLENGE: self._resolve_challenge,
            PollKind.LIVENESS: self._resolve_liveness,
            PollKind.FORK: lambda pid: self._resolve_fork(pid)[0],
        }[kind](poll_id)

    def advance_time(self, to_tick: int) -> List[dict]:
        """Move the clock, resolving polls and releasing reward bonds on the way.

        Work is done tick by tick in order of occurrence. Within one tick: store
        fault epochs first, then polls closing at that tick in poll-id order,
        then reward bonds whose release tick has arrived. A challenge that
        closes on the release tick therefore still seizes the reward.
        """

        def op():
            if to_tick < self.now:
                raise ClockRegression(f"cannot move from {self.now} back to {to_tick}")
            results = []
            while True:
                t = self._next_tick(to_tick)
                if t is None:
                    break
                self.now = t
                due_epochs = t // EPOCH_TICKS - self._epochs_done
                for _ in range(due_epochs):
                    self.store.advance_epoch()
                self._epochs_done += due_epochs
                for poll in self.open_polls():
                    if poll.close_tick <= t:
                        outcome = self.resolve(poll.poll_id)
                        results.append({"tick": t, "poll_id": poll.poll_id,
                                         "kind": poll.kind.value, "outcome": outcome.value})
                if self.td.economy is not None:
                    for b in self.td.economy.active_bonds():
                        if b.purpose is BondPurpose.CANDIDATE_REWARD and b.release_tick <= t:
                            self.td.economy.release_bond(b.bond_id, t)
            self.now = to_tick
            return results

        return self._run("advance_time", {"to_tick": to_tick}, op)

    def _next_tick(self, limit: int) -> Optional[int]:
        ticks = [p.close_tick for p in self.open_polls()]
        if self.td.economy is not None:
            ticks += [b.release_tick for b in self.td.economy.active_bonds()
                      if b.purpose is BondPurpose.CANDIDATE_REWARD]
        ticks.append((self._epochs_done + 1) * EPOCH_TICKS)
        ticks = [max(t, self.now) for t in ticks]
        t = min(ticks)
        return t if t <= limit else None


# -- replay -------------------------------------------------------------

def _payment(args):
    return Money.of(args["payment"])


_REPLAY = {
    "store_blob": lambda e, a: e.store_blob(a["agent"], bytes.fromhex(a["payload"])),
    "insert": lambda e, a: e.insert(body_from_dict(a["body"])),
    "propose_candidate": lambda e, a: e.propose_candidate(a["agent"], body_from_dict(a["body"])),
    "cast_vote": lambda e, a: e.cast_vote(a["poll_id"], a["agent"], Choice(a["choice"])),
    "resolve_candidacy": lambda e, a: e.resolve_candidacy(a["poll_id"]),
    "issue_challenge": lambda e, a: e.issue_challenge(a["agent"], a["element_id"]),
    "resolve_challenge": lambda e, a: e.resolve_challenge(a["poll_id"]),
    "liveness_challenge": lambda e, a: e.liveness_challenge(a["agent"], a["element_id"], bytes.fromhex(a["nonce"])),
    "submit_proof": lambda e, a: e.submit_proof(a["poll_id"], bytes.fromhex(a["response"])),
    "resolve_liveness": lambda e, a: e.resolve_liveness(a["poll_id"]),
    "set_membership_price": lambda e, a: e.set_membership_price(Money.of(a["price"])),
    "acquire_membership": lambda e, a: e.acquire_membership(a["agent"], _payment(a)),
    "slash_membership": lambda e, a: e.slash_membership(a["agent"], a["challenger"]),
    "propose_fork": lambda e, a: e.propose_fork(a["agent"], Partition.from_dict(a["partition"])),
    "adopt_side": lambda e, a: e.adopt_side(a["poll_id"], a["agent"], a["side"]),
    "resolve_fork": lambda e, a: e.resolve_fork(a["poll_id"]),
    "advance_time": lambda e, a: e.advance_time(a["to_tick"]),
}


def engine_from_genesis(args: dict) -> Engine:
    s = args["store"]
    store = ContentStore(s["drop_probability"], s["rng_seed"])
    for hexpayload in s["blobs"]:
        store.put(bytes.fromhex(hexpayload))
    td = TokenizedDataStructure.from_dict(args["structure"])
    return Engine(td, Rules.from_dict(args["rules"]), store, now=args["now"])


def replay(records: List[dict]) -> Engine:
    """Re-apply a logged operation sequence, checking every tick and result.

    Raises :class:`ReplayMismatch` at the first divergence.
    """
    if not records or records[0]["op"] != "genesis":
        raise ReplayMismatch("log does not start with a genesis record")
    engine = engine_from_genesis(records[0]["args"])
    if engine.log[0] != records[0]:
        raise ReplayMismatch("genesis record does not round-trip")
    for rec in records[1:]:
        fn = _REPLAY.get(rec["op"])
        if fn is None:
            raise ReplayMismatch(f"seq {rec.get('seq')}: unknown op {rec['op']!r}")
        if rec["tick"] != engine.now:
            raise ReplayMismatch(f"seq {rec['seq']}: logged tick {rec['tick']} != engine tick {engine.now}")
        try:
            fn(engine, rec["args"])
        except TDMError:
            pass
        except (KeyError, ValueError, TypeError) as exc:
            raise ReplayMismatch(f"seq {rec.get('seq')}: malformed record ({exc})") from None
        if engine.log[-1] != rec:
            raise ReplayMismatch(
                f"seq {rec['seq']} ({rec['op']}): logged {rec['result']!r}, replay gave {engine.log[-1]['result']!r}"
            )
    return engine
