"""The recursive tokenized data structure and its per-element metadata."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields
from fractions import Fraction
from typing import Dict, List, Optional, Union

from . import canon
from .errors import IllegalTransition, InvalidParams, InvalidStructure
from .ledger import MICRO, Issuance, TokenEconomy, to_fraction
from .offchain import content_hash

HOURS_PER_DAY = 24
BP = 10_000


def fraction_to_bp(value) -> int:
    """Exact basis points from a fraction such as ``"0.6667"``."""
    bp = to_fraction(value) * BP
    if bp.denominator != 1:
        raise InvalidParams(f"{value!r} is finer than one basis point")
    return int(bp)


@dataclass(frozen=True)
class Params:
    """Protocol parameters. Token amounts are micro-tokens, periods are ticks
    (one tick = one hour) and fractions are integer basis points."""

    candidate_deposit: int = 0
    candidate_vote_period: int = 3 * HOURS_PER_DAY
    candidate_reward: int = 1 * MICRO
    candidate_quorum_bp: int = 6667
    reward_stake_period: int = 30 * HOURS_PER_DAY
    challenge_deposit: int = 0
    challenge_vote_period: int = 5 * HOURS_PER_DAY
    challenge_reward: int = 0
    challenge_quorum_bp: int = 6667
    fork_deposit: int = 0
    fork_vote_period: int = 30 * HOURS_PER_DAY
    fork_threshold_bp: int = 5000
    query_stake: int = 0
    offchain: bool = False

    def validate(self) -> "Params":
        for name in ("candidate_quorum_bp", "challenge_quorum_bp", "fork_threshold_bp"):
            v = getattr(self, name)
            if not 0 < v <= BP:
                raise InvalidParams(f"{name}={v} outside (0, {BP}]")
        for name in ("candidate_vote_period", "challenge_vote_period", "fork_vote_period"):
            if getattr(self, name) < 1:
                raise InvalidParams(f"{name} must be at least 1 tick")
        # zero means rewards are never bonded (no statute period at all)
        if self.reward_stake_period < 0:
            raise InvalidParams("reward_stake_period must be >= 0")
        for name in ("candidate_deposit", "candidate_reward", "challenge_deposit",
                     "challenge_reward", "fork_deposit", "query_stake"):
            if getattr(self, name) < 0:
                raise InvalidParams(f"{name} must be >= 0")
        return self

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "Params":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidParams(f"unknown params: {sorted(unknown)}")
        return cls(**d).validate()


class Visibility(str, enum.Enum):
    PUBLIC = "public"
    PRIVATE = "private"


class ElementState(str, enum.Enum):
    CANDIDATE = "candidate"
    QUASI_FINALIZED = "quasi_finalized"
    CHALLENGED = "challenged"
    REMOVED = "removed"


_TRANSITIONS = {
    ElementState.CANDIDATE: {ElementState.QUASI_FINALIZED, ElementState.REMOVED},
    ElementState.QUASI_FINALIZED: {ElementState.CHALLENGED},
    ElementState.CHALLENGED: set(),
    ElementState.REMOVED: set(),
}


@dataclass(frozen=True)
class Inline:
    payload: bytes

    @property
    def content_hash(self) -> bytes:
        return content_hash(self.payload)


@dataclass(frozen=True)
class Offchain:
    content_hash: bytes
    owner: str


DataRef = Union[Inline, Offchain]


@dataclass(frozen=True)
class Leaf:
    ref: DataRef
    visibility: Visibility = Visibility.PUBLIC


@dataclass
class Nested:
    structure: "TokenizedDataStructure"


@dataclass
class Element:
    element_id: str
    body: Union[Leaf, Nested]

    @property
    def is_leaf(self) -> bool:
        return isinstance(self.body, Leaf)


@dataclass
class ElementMetadata:
    state: ElementState
    proposer: str
    added_tick: int
    reward_bond: Optional[int] = None

    def transition(self, new_state: ElementState) -> None:
        if new_state not in _TRANSITIONS[self.state]:
            raise IllegalTransition(f"{self.state.value} -> {new_state.value}")
        self.state = new_state


@dataclass
class TokenizedDataStructure:
    """The tuple (elements, token economy, metadata) plus its parameters.

    A structure without an economy is the token-free degenerate case: a plain
    distributed hash table that admits no staking operation.
    """

    params: Params = field(default_factory=Params)
    economy: Optional[TokenEconomy] = None
    elements: List[Element] = field(default_factory=list)
    metadata: Dict[str, ElementMetadata] = field(default_factory=dict)

    def element(self, element_id: str) -> Element:
        for e in self.elements:
            if e.element_id == element_id:
                return e
        raise KeyError(element_id)

    def has_element(self, element_id: str) -> bool:
        return element_id in self.metadata

    def state_of(self, element_id: str) -> ElementState:
        return self.metadata[element_id].state

    def depth(self) -> int:
        nested = [e.body.structure.depth() for e in self.elements if isinstance(e.body, Nested)]
        return 1 + max(nested, default=0)

    def live_elements(self) -> List[str]:
        return [
            e.element_id for e in self.elements
            if self.metadata[e.element_id].state is ElementState.QUASI_FINALIZED
        ]

    def add_element(self, element: Element, meta: ElementMetadata) -> None:
        if element.element_id in self.metadata:
            raise InvalidStructure(f"duplicate element id {element.element_id}")
        self.elements.append(element)
        self.metadata[element.element_id] = meta

    def validate(self) -> None:
        """Check id uniqueness, metadata completeness and offchain consistency, recursively."""
        ids = [e.element_id for e in self.elements]
        if len(ids) != len(set(ids)):
            raise InvalidStructure("element ids are not unique")
        if set(ids) != set(self.metadata):
            raise InvalidStructure("metadata does not match elements one-to-one")
        self.params.validate()
        for e in self.elements:
            if isinstance(e.body, Leaf):
                if isinstance(e.body.ref, Offchain) and not self.params.offchain:
                    raise InvalidStructure(f"{e.element_id}: offchain leaf in on-chain structure")
            else:
                e.body.structure.validate()
        if self.economy is not None:
            self.economy.check_conservation()

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "economy": None if self.economy is None else self.economy.to_dict(),
            "elements": [element_to_dict(e) for e in self.elements],
            "metadata": {
                k: {
                    "state": m.state.value,
                    "proposer": m.proposer,
                    "added_tick": m.added_tick,
                    "reward_bond": m.reward_bond,
                }
                for k, m in sorted(self.metadata.items())
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TokenizedDataStructure":
        return cls(
            params=Params.from_dict(d["params"]),
            economy=None if d["economy"] is None else TokenEconomy.from_dict(d["economy"]),
            elements=[element_from_dict(e) for e in d["elements"]],
            metadata={
                k: ElementMetadata(
                    state=ElementState(m["state"]),
                    proposer=m["proposer"],
                    added_tick=m["added_tick"],
                    reward_bond=m["reward_bond"],
                )
                for k, m in d["metadata"].items()
            },
        )

    def digest(self) -> str:
        return canon.digest(self.to_dict())


def body_to_dict(body) -> dict:
    if isinstance(body, Leaf):
        if isinstance(body.ref, Inline):
            ref = {"inline": body.ref.payload.hex()}
        else:
            ref = {"offchain": body.ref.content_hash.hex(), "owner": body.ref.owner}
        return {"kind": "leaf", "ref": ref, "visibility": body.visibility.value}
    return {"kind": "nested", "structure": body.structure.to_dict()}


def body_from_dict(d: dict):
    if d["kind"] == "leaf":
        r = d["ref"]
        if "inline" in r:
            ref = Inline(bytes.fromhex(r["inline"]))
        else:
            ref = Offchain(bytes.fromhex(r["offchain"]), r["owner"])
        return Leaf(ref, Visibility(d["visibility"]))
    if d["kind"] == "nested":
        return Nested(TokenizedDataStructure.from_dict(d["structure"]))
    raise ValueError(f"unknown element kind {d['kind']!r}")


def element_to_dict(e: Element) -> dict:
    return {"element_id": e.element_id, "body": body_to_dict(e.body)}


def element_from_dict(d: dict) -> Element:
    return Element(d["element_id"], body_from_dict(d["body"]))


def new_structure(
    params: Optional[Params] = None,
    initial_allocation: Optional[Dict[str, int]] = None,
    issuance: Issuance = Issuance.MINING,
    token_id: str = "T",
    with_economy: Optional[bool] = None,
) -> TokenizedDataStructure:
    """Fresh structure with no elements.

    An economy is created whenever an allocation is given (or ``with_economy``
    is set); with neither, the result is the token-free DHT case.
    """
    params = (params or Params()).validate()
    issuance = Issuance(issuance)
    if with_economy is None:
        with_economy = initial_allocation is not None
    if not with_economy:
        if initial_allocation:
            raise InvalidParams("allocation given for a token-free structure")
        return TokenizedDataStructure(params=params)
    if not initial_allocation:
        raise InvalidParams("an economy needs a non-empty initial allocation")
    if issuance is Issuance.PREDETERMINED and (params.candidate_reward or params.challenge_reward):
        raise InvalidParams("predetermined issuance cannot pay minted rewards; set rewards to 0")
    economy = TokenEconomy.create(token_id, initial_allocation, issuance)
    return TokenizedDataStructure(params=params, economy=economy)


def ownership_fraction(td: TokenizedDataStructure, agent: str) -> Fraction:
    return Fraction(0) if td.economy is None else td.economy.ownership(agent)
