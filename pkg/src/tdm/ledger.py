"""Token accounting: holdings, bonded stakes, issuance and pro-rata payouts.

Token quantities are integer micro-tokens (``MICRO`` per display token) and
monetary quantities are :class:`Money`, a non-negative fixed-point number with
six fractional digits. Nothing on a ledger path touches floating point.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from typing import Dict, NewType, Union

from .errors import (
    BondNotActive,
    BondStillLocked,
    EmptyEconomy,
    InsufficientTokens,
    IssuanceForbidden,
    InvariantViolation,
)

MICRO = 10**6

TokenAmount = NewType("TokenAmount", int)

Number = Union[int, str, Fraction, Decimal]


def to_fraction(value: Number) -> Fraction:
    """Exact rational from an int, decimal string, Decimal or Fraction (floats refused)."""
    if isinstance(value, bool) or isinstance(value, float):
        raise TypeError(f"refusing inexact value {value!r}")
    if isinstance(value, (int, Fraction)):
        return Fraction(value)
    if isinstance(value, Decimal):
        return Fraction(value)
    try:
        return Fraction(Decimal(str(value).strip()))
    except (InvalidOperation, ValueError):
        raise ValueError(f"not a decimal number: {value!r}") from None


def quantize(value: Fraction) -> int:
    """Round an exact value to integer micro-units (half-even)."""
    return round(value * MICRO)


def tokens(display: Number) -> TokenAmount:
    """Display tokens (``"2.5"``) to micro-tokens; must be exact at 6 digits."""
    micro = to_fraction(display) * MICRO
    if micro.denominator != 1:
        raise ValueError(f"{display!r} has more than 6 fractional digits")
    if micro < 0:
        raise ValueError("token amounts are non-negative")
    return TokenAmount(int(micro))


def format_fixed(micro: int) -> str:
    """Render signed micro-units as a 6-digit fixed-point string."""
    sign = "-" if micro < 0 else ""
    whole, frac = divmod(abs(micro), MICRO)
    return f"{sign}{whole}.{frac:06d}"


def parse_fixed(text: Number) -> int:
    """Inverse of :func:`format_fixed`; rejects values finer than 1e-6."""
    micro = to_fraction(text) * MICRO
    if micro.denominator != 1:
        raise ValueError(f"{text!r} has more than 6 fractional digits")
    return int(micro)


@dataclass(frozen=True, order=True)
class Money:
    """Non-negative monetary amount held as integer micro-units."""

    micro: int = 0

    def __post_init__(self):
        if not isinstance(self.micro, int) or isinstance(self.micro, bool):
            raise TypeError("Money.micro must be an int")
        if self.micro < 0:
            raise ValueError("Money is never negative")

    @classmethod
    def of(cls, value: Number) -> "Money":
        return cls(parse_fixed(value))

    def __add__(self, other: "Money") -> "Money":
        return Money(self.micro + other.micro)

    def __sub__(self, other: "Money") -> "Money":
        return Money(self.micro - other.micro)

    def to_fraction(self) -> Fraction:
        return Fraction(self.micro, MICRO)

    def __str__(self) -> str:
        return format_fixed(self.micro)


class Issuance(str, enum.Enum):
    PREDETERMINED = "predetermined"
    MINING = "mining"


class BondPurpose(str, enum.Enum):
    CANDIDATE_DEPOSIT = "candidate_deposit"
    CANDIDATE_REWARD = "candidate_reward"
    CHALLENGE_DEPOSIT = "challenge_deposit"
    FORK_DEPOSIT = "fork_deposit"
    QUERY_STAKE = "query_stake"


class BondState(str, enum.Enum):
    ACTIVE = "active"
    RELEASED = "released"
    SEIZED = "seized"


@dataclass
class BondRecord:
    bond_id: int
    owner: str
    amount: int
    purpose: BondPurpose
    release_tick: int
    state: BondState = BondState.ACTIVE

    def to_dict(self) -> dict:
        return {
            "bond_id": self.bond_id,
            "owner": self.owner,
            "amount": self.amount,
            "purpose": self.purpose.value,
            "release_tick": self.release_tick,
            "state": self.state.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BondRecord":
        return cls(
            bond_id=d["bond_id"],
            owner=d["owner"],
            amount=d["amount"],
            purpose=BondPurpose(d["purpose"]),
            release_tick=d["release_tick"],
            state=BondState(d["state"]),
        )


def largest_remainder(total: int, weights: Dict[str, int]) -> Dict[str, int]:
    """Split integer ``total`` proportionally to ``weights``.

    Floors every exact share, then hands the leftover units one each to the
    largest remainders; ties go to the lexicographically smallest key.
    Zero-weight keys are omitted from the result.
    """
    live = {k: w for k, w in weights.items() if w > 0}
    denom = sum(live.values())
    if denom == 0:
        raise EmptyEconomy("no positive weights to distribute over")
    shares = {}
    remainders = []
    for key in sorted(live):
        q, r = divmod(total * live[key], denom)
        shares[key] = q
        remainders.append((-r, key))
    leftover = total - sum(shares.values())
    for _, key in sorted(remainders)[:leftover]:
        shares[key] += 1
    return shares


@dataclass
class TokenEconomy:
    """A token type together with its ledger of holdings and bonds.

    ``holdings`` are unbonded balances; tokens inside Active bonds still
    count toward ``total_supply`` and toward the owner's ownership share.
    """

    token_id: str
    issuance: Issuance = Issuance.MINING
    holdings: Dict[str, int] = field(default_factory=dict)
    bonds: Dict[int, BondRecord] = field(default_factory=dict)
    total_supply: int = 0
    next_bond_id: int = 1
    minted: int = 0
    burned: int = 0

    @classmethod
    def create(cls, token_id: str, allocation: Dict[str, int], issuance=Issuance.MINING) -> "TokenEconomy":
        if any(v < 0 for v in allocation.values()):
            raise ValueError("allocations are non-negative")
        holdings = {a: int(v) for a, v in sorted(allocation.items()) if v > 0}
        return cls(
            token_id=token_id,
            issuance=Issuance(issuance),
            holdings=holdings,
            total_supply=sum(holdings.values()),
        )

    # -- queries ---------------------------------------------------------

    def balance(self, agent: str) -> int:
        return self.holdings.get(agent, 0)

    def bonded(self, agent: str) -> int:
        return sum(b.amount for b in self.active_bonds() if b.owner == agent)

    def owned(self, agent: str) -> int:
        return self.balance(agent) + self.bonded(agent)

    def ownership(self, agent: str) -> Fraction:
        if self.total_supply == 0:
            return Fraction(0)
        return Fraction(self.owned(agent), self.total_supply)

    def owners(self) -> Dict[str, int]:
        out: Dict[str, int] = dict(self.holdings)
        for b in self.active_bonds():
            out[b.owner] = out.get(b.owner, 0) + b.amount
        return {a: out[a] for a in sorted(out) if out[a] > 0}

    def active_bonds(self):
        return [b for _, b in sorted(self.bonds.items()) if b.state is BondState.ACTIVE]

    def bond(self, bond_id: int) -> BondRecord:
        try:
            return self.bonds[bond_id]
        except KeyError:
            raise BondNotActive(f"unknown bond {bond_id}") from None

    # -- mutations -------------------------------------------------------

    def _credit(self, agent: str, amount: int) -> None:
        if amount:
            self.holdings[agent] = self.holdings.get(agent, 0) + amount

    def _debit(self, agent: str, amount: int) -> None:
        have = self.balance(agent)
        if have < amount:
            raise InsufficientTokens(f"{agent} holds {have}, needs {amount}")
        if have == amount:
            self.holdings.pop(agent, None)
        else:
            self.holdings[agent] = have - amount

    def mint(self, agent: str, amount: int) -> None:
        if self.issuance is not Issuance.MINING:
            raise IssuanceForbidden("predetermined economies have a fixed supply")
        if amount <= 0:
            raise ValueError("mint amount must be positive")
        self._credit(agent, amount)
        self.total_supply += amount
        self.minted += amount

    def transfer(self, src: str, dst: str, amount: int) -> None:
        if amount < 0:
            raise ValueError("transfer amount must be non-negative")
        self._debit(src, amount)
        self._credit(dst, amount)

    def bond_stake(self, agent: str, amount: int, purpose: BondPurpose, release_tick: int) -> int:
        if amount < 0:
            raise ValueError("bond amount must be non-negative")
        self._debit(agent, amount)
        bond_id = self.next_bond_id
        self.next_bond_id += 1
        self.bonds[bond_id] = BondRecord(bond_id, agent, amount, BondPurpose(purpose), release_tick)
        return bond_id

    def mint_bonded(self, agent: str, amount: int, purpose: BondPurpose, release_tick: int) -> int:
        """Mint straight into a new Active bond (candidacy rewards)."""
        self.mint(agent, amount)
        return self.bond_stake(agent, amount, purpose, release_tick)

    def release_bond(self, bond_id: int, current_tick: int) -> None:
        b = self.bond(bond_id)
        if b.state is not BondState.ACTIVE:
            raise BondNotActive(f"bond {bond_id} is {b.state.value}")
        if current_tick < b.release_tick:
            raise BondStillLocked(f"bond {bond_id} locked until tick {b.release_tick}")
        b.state = BondState.RELEASED
        self._credit(b.owner, b.amount)

    def refund_bond(self, bond_id: int) -> None:
        """Return a deposit regardless of its release tick (poll resolution path)."""
        b = self.bond(bond_id)
        if b.state is not BondState.ACTIVE:
            raise BondNotActive(f"bond {bond_id} is {b.state.value}")
        b.state = BondState.RELEASED
        self._credit(b.owner, b.amount)

    def burn(self, bond_id: int) -> None:
        b = self.bond(bond_id)
        if b.state is not BondState.ACTIVE:
            raise BondNotActive(f"bond {bond_id} is {b.state.value}")
        b.state = BondState.SEIZED
        self.total_supply -= b.amount
        self.burned += b.amount

    def seize_to(self, bond_id: int, recipient: str) -> None:
        """Seize a bond and hand its tokens to ``recipient``; supply unchanged."""
        b = self.bond(bond_id)
        if b.state is not BondState.ACTIVE:
            raise BondNotActive(f"bond {bond_id} is {b.state.value}")
        b.state = BondState.SEIZED
        self._credit(recipient, b.amount)

    def transfer_pro_rata(self, recipient: str, amount: int, exclude=()) -> Dict[str, int]:
        """Move ``amount`` unbonded tokens to ``recipient``, taken from holders pro-rata."""
        weights = {a: v for a, v in self.holdings.items() if a != recipient and a not in exclude}
        if sum(weights.values()) < amount:
            raise InsufficientTokens(f"only {sum(weights.values())} unbonded tokens available")
        if amount == 0:
            return {}
        taken = largest_remainder(amount, weights)
        for agent, n in taken.items():
            self._debit(agent, n)
        self._credit(recipient, amount)
        return taken

    def distribute_pro_rata(self, payment: Money, include_bonded: bool = True) -> Dict[str, Money]:
        """Split ``payment`` over owners by token count; the shares sum to it exactly."""
        weights = self.owners() if include_bonded else dict(self.holdings)
        if not any(weights.values()):
            raise EmptyEconomy("no token holders to pay")
        shares = largest_remainder(payment.micro, weights)
        return {a: Money(v) for a, v in shares.items()}

    def economy_size(self, unit_value: Money) -> Money:
        return Money(quantize(unit_value.to_fraction() * Fraction(self.total_supply, MICRO)))

    # -- checks and serialization ---------------------------------------

    def check_conservation(self) -> None:
        held = sum(self.holdings.values()) + sum(b.amount for b in self.active_bonds())
        if held != self.total_supply:
            raise InvariantViolation(
                f"{self.token_id}: holdings+bonds={held} != supply={self.total_supply}"
            )

    def balances_dict(self) -> dict:
        """Holdings, supply and token-carrying active bonds; the part a challenge may amend.

        Zero-amount bonds (free deposits) hold no tokens and are left out.
        """
        return {
            "total_supply": self.total_supply,
            "holdings": dict(sorted(self.holdings.items())),
            "active_bonds": [b.to_dict() for b in self.active_bonds() if b.amount],
        }

    def to_dict(self) -> dict:
        return {
            "token_id": self.token_id,
            "issuance": self.issuance.value,
            "total_supply": self.total_supply,
            "holdings": dict(sorted(self.holdings.items())),
            "bonds": [b.to_dict() for _, b in sorted(self.bonds.items())],
            "next_bond_id": self.next_bond_id,
            "minted": self.minted,
            "burned": self.burned,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TokenEconomy":
        bonds = {b["bond_id"]: BondRecord.from_dict(b) for b in d["bonds"]}
        return cls(
            token_id=d["token_id"],
            issuance=Issuance(d["issuance"]),
            holdings=dict(d["holdings"]),
            bonds=bonds,
            total_supply=d["total_supply"],
            next_bond_id=d["next_bond_id"],
            minted=d.get("minted", 0),
            burned=d.get("burned", 0),
        )
