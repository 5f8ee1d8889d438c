"""Closed-form incentive calculators.

Everything is computed on exact rationals; callers render to fixed point at
the boundary with :func:`to_fixed`. Arguments accept ints, decimal strings,
``Decimal`` or ``Fraction`` (floats are refused to keep results exact).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Union

from .errors import DomainError
from .ledger import Number, format_fixed, quantize, to_fraction


class _Unbounded:
    """Threshold sentinel: every non-negative alpha deters dishonesty."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Unbounded"

    def __str__(self):
        return "unbounded"

    def __gt__(self, other):
        return True

    def __lt__(self, other):
        return False


Unbounded = _Unbounded()

Threshold = Union[Fraction, _Unbounded]


def _f(x: Number) -> Fraction:
    return to_fraction(x)


def _unit(name: str, x: Fraction) -> Fraction:
    if not 0 <= x <= 1:
        raise DomainError(f"{name}={x} must lie in [0, 1]")
    return x


def liveness_budget(k: Number, D: Number, c: Number, N: Number) -> Fraction:
    """Liveness checks per element worth paying for: kD / (cN)."""
    k, D, c, N = map(_f, (k, D, c, N))
    if c <= 0 or N <= 0:
        raise DomainError("check cost and element count must be positive")
    return k * D / (c * N)


def honest_ev(alpha: Number, k: Number, D: Number) -> Fraction:
    return _f(alpha) * _f(k) * _f(D)


def dishonest_ev(p_detect, beta, gamma, alpha, k, ell, D) -> Fraction:
    """-p D + (1 - p)(beta alpha k + gamma ell) D."""
    p = _unit("p_detect", _f(p_detect))
    beta = _unit("beta", _f(beta))
    gamma, alpha, k, ell, D = map(_f, (gamma, alpha, k, ell, D))
    return -p * D + (1 - p) * (beta * alpha * k + gamma * ell) * D


def dishonest_alpha_threshold(p_detect, beta, gamma, k, ell) -> Threshold:
    """Largest alpha (exclusive) for which leaking has negative expected value.

    Solving ``dishonest_ev < 0`` for alpha gives
    ``alpha < (p - (1 - p) gamma ell) / ((1 - p) beta k)``. When the
    denominator vanishes alpha drops out: the result is ``Unbounded`` if the
    remaining terms are negative, else ``Fraction(0)`` (no alpha >= 0 deters).
    """
    p = _unit("p_detect", _f(p_detect))
    beta = _unit("beta", _f(beta))
    gamma, k, ell = map(_f, (gamma, k, ell))
    numerator = p - (1 - p) * gamma * ell
    denominator = (1 - p) * beta * k
    if denominator == 0:
        return Unbounded if numerator > 0 else Fraction(0)
    return numerator / denominator


def contribution_ev(alpha: Number, k: Number, D: Number, E_cost: Number) -> Fraction:
    """Expected return of contributing one element: alpha k D - E."""
    return honest_ev(alpha, k, D) - _f(E_cost)


def min_data_price(E_cost: Number, supply: Number, k: Number, reward: Number) -> Fraction:
    """Break-even price E #(T) / (k reward); contributions pay only above it."""
    E, supply, k, reward = map(_f, (E_cost, supply, k, reward))
    if k <= 0 or reward <= 0:
        raise DomainError("k and reward must be positive")
    return E * supply / (k * reward)


def token_unit_value(R_total: Number, supply: Number) -> Fraction:
    R, supply = _f(R_total), _f(supply)
    if supply <= 0:
        raise DomainError("supply must be positive")
    return R / supply


@dataclass(frozen=True)
class IncentiveParams:
    """Bundle of the symbols shared by the calculators above."""

    D: Fraction = Fraction(0)
    k: int = 0
    ell_counterfeit: int = 0
    c: Fraction = Fraction(1)
    N: int = 1
    alpha: Fraction = Fraction(0)
    beta: Fraction = Fraction(1)
    gamma: Fraction = Fraction(0)
    p_detect: Fraction = Fraction(0)
    E_cost: Fraction = Fraction(0)
    supply: Fraction = Fraction(1)
    reward: Fraction = Fraction(1)
    R_total: Fraction = Fraction(0)

    def __post_init__(self):
        _unit("beta", Fraction(self.beta))
        _unit("p_detect", Fraction(self.p_detect))
        for name in ("k", "ell_counterfeit", "N"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")

    def honest_ev(self):
        return honest_ev(self.alpha, self.k, self.D)

    def dishonest_ev(self):
        return dishonest_ev(self.p_detect, self.beta, self.gamma, self.alpha, self.k, self.ell_counterfeit, self.D)

    def dishonest_alpha_threshold(self):
        return dishonest_alpha_threshold(self.p_detect, self.beta, self.gamma, self.k, self.ell_counterfeit)

    def liveness_budget(self):
        return liveness_budget(self.k, self.D, self.c, self.N)

    def contribution_ev(self):
        return contribution_ev(self.alpha, self.k, self.D, self.E_cost)

    def min_data_price(self):
        return min_data_price(self.E_cost, self.supply, self.k, self.reward)

    def token_unit_value(self):
        return token_unit_value(self.R_total, self.supply)


def to_fixed(value: Threshold) -> str:
    """Six-digit fixed-point rendering (half-even); ``unbounded`` for the sentinel."""
    if value is Unbounded:
        return "unbounded"
    return format_fixed(quantize(Fraction(value)))


def render(value: Threshold) -> str:
    """Integers print bare (``10``), other rationals as fixed point."""
    if value is Unbounded:
        return "unbounded"
    value = Fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    return to_fixed(value)
