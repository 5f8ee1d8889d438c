import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tdm.economics import (
    IncentiveParams,
    Unbounded,
    contribution_ev,
    dishonest_alpha_threshold,
    dishonest_ev,
    honest_ev,
    liveness_budget,
    min_data_price,
    render,
    to_fixed,
    token_unit_value,
)
from tdm.errors import DomainError

F = Fraction


def test_liveness_worked_example():
    assert liveness_budget(10, 1000, "0.1", 10000) == 10


def test_liveness_values():
    assert liveness_budget(0, 1000, "0.1", 10) == 0
    assert liveness_budget(3, 700, "0.05", 400) == 105


def test_liveness_domain():
    with pytest.raises(DomainError):
        liveness_budget(1, 1, 0, 1)
    with pytest.raises(ZeroDivisionError):
        liveness_budget(1, 1, 1, 0)


def test_honest_ev():
    assert honest_ev(0, 10, 1000) == 0
    assert honest_ev("0.01", 10, 1000) == 100
    assert honest_ev("0.5", 0, 1000) == 0


def test_dishonest_ev_examples():
    assert dishonest_ev(1, "0.3", "0.2", "0.1", 5, 3, 100) == -100
    assert dishonest_ev("0.5", 1, 0, "0.1", 10, 0, 100) == 0
    assert dishonest_ev(0, 1, 0, "0.05", 10, 0, 100) == 50


def test_threshold_examples():
    assert dishonest_alpha_threshold("0.5", 1, 0, 10, 0) == F(1, 10)
    assert dishonest_alpha_threshold(1, 1, 0, 10, 0) is Unbounded
    assert dishonest_alpha_threshold(0, 1, "0.1", 0, 5) == 0


def test_threshold_counterfeit_term_lowers_bound():
    # counterfeit revenue makes leaking more attractive, so fewer alphas deter it
    assert dishonest_alpha_threshold("0.5", 1, "0.1", 10, 2) < dishonest_alpha_threshold("0.5", 1, 0, 10, 2)


def test_threshold_sign_sweep():
    rng = random.Random(1)
    for _ in range(200):
        p = F(rng.randint(0, 100), 100)
        beta = F(rng.randint(0, 100), 100)
        gamma = F(rng.randint(0, 50), 100)
        k, ell = rng.randint(0, 12), rng.randint(0, 6)
        alpha = F(rng.randint(0, 1000), 1000)
        D = rng.randint(1, 1000)
        t = dishonest_alpha_threshold(p, beta, gamma, k, ell)
        ev = dishonest_ev(p, beta, gamma, alpha, k, ell, D)
        assert (ev < 0) == (alpha < t)


def test_contribution_and_price():
    assert contribution_ev("0.1", 10, 100, 100) == 0
    assert contribution_ev(F(1, 100), 10, 1000, 50) == 50
    assert contribution_ev("0.1", 0, 100, 7) == -7
    assert min_data_price(10, 1000, 10, 1) == 1000
    assert min_data_price(0, 1000, 10, 1) == 0
    with pytest.raises(DomainError):
        min_data_price(1, 1, 0, 1)


def test_unit_value():
    assert token_unit_value(200, 200) == 1
    assert token_unit_value(0, 200) == 0
    assert token_unit_value(5000, 200) == 25


def test_floats_refused():
    with pytest.raises(TypeError):
        honest_ev(0.1, 1, 1)


def test_rendering():
    assert render(F(10)) == "10"
    assert render(F(1, 3)) == "0.333333"
    assert render(Unbounded) == to_fixed(Unbounded) == "unbounded"
    assert to_fixed(F(-5, 2)) == "-2.500000"


def test_incentive_params_bundle():
    ip = IncentiveParams(D=F(1000), k=10, c=F(1, 10), N=10000, alpha=F(1, 100))
    assert ip.liveness_budget() == 10
    assert ip.honest_ev() == 100
    with pytest.raises(DomainError):
        IncentiveParams(beta=F(2))


fracs = st.fractions(min_value=0, max_value=1, max_denominator=1000)
pos = st.fractions(min_value=F(1, 100), max_value=1000, max_denominator=100)
counts = st.integers(0, 50)


@given(fracs, fracs, st.fractions(0, 1, max_denominator=100), fracs, counts, counts, pos)
def test_threshold_consistency(p, beta, gamma, alpha, k, ell, D):
    t = dishonest_alpha_threshold(p, beta, gamma, k, ell)
    ev = dishonest_ev(p, beta, gamma, alpha, k, ell, D)
    assert (ev < 0) == (alpha < t)
    if t is not Unbounded and alpha == t:
        assert ev == 0 or t == 0


@given(fracs, fracs, counts, pos, st.fractions(0, 1, max_denominator=100))
def test_honest_monotone(alpha, da, k, D, dd):
    assert honest_ev(alpha + da, k, D) >= honest_ev(alpha, k, D)
    assert honest_ev(alpha, k + 1, D) >= honest_ev(alpha, k, D)
    assert honest_ev(alpha, k, D + dd) >= honest_ev(alpha, k, D)


@given(fracs, fracs, fracs, fracs, st.fractions(0, 1, max_denominator=100), counts, counts, pos)
def test_dishonest_non_increasing_in_detection(p1, p2, beta, alpha, gamma, k, ell, D):
    lo, hi = sorted((p1, p2))
    assert dishonest_ev(hi, beta, gamma, alpha, k, ell, D) <= dishonest_ev(lo, beta, gamma, alpha, k, ell, D)


@given(st.integers(1, 50), pos, pos, st.integers(1, 10**4), pos)
def test_liveness_decreasing_in_cost_and_count(k, D, c, N, dc):
    assert liveness_budget(k, D, c + dc, N) < liveness_budget(k, D, c, N)
    assert liveness_budget(k, D, c, N + 1) < liveness_budget(k, D, c, N)


@given(pos, st.integers(1, 10**6), st.integers(1, 100), st.integers(1, 10**3))
def test_price_is_the_zero_of_contribution(E, supply, k, reward):
    D = min_data_price(E, supply, k, reward)
    assert contribution_ev(F(reward, supply), k, D, E) == 0
    eps = F(1, 10**9)
    assert contribution_ev(F(reward, supply), k, D + eps, E) > 0
