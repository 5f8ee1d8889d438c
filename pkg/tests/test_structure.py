import pytest
from hypothesis import given
from hypothesis import strategies as st

from tdm.errors import IllegalTransition, InvalidParams, InvalidStructure
from tdm.ledger import MICRO, Issuance
from tdm.structure import (
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


def leaf(n: int) -> Element:
    return Element(f"e{n}", Leaf(Inline(f"payload-{n}".encode())))


def meta(state=ElementState.QUASI_FINALIZED):
    return ElementMetadata(state, "alice", 0)


def test_defaults_match_parameter_table():
    p = Params()
    assert p.candidate_vote_period == 72
    assert p.challenge_vote_period == 120
    assert p.fork_vote_period == 720
    assert p.reward_stake_period == 720
    assert p.candidate_reward == 1 * MICRO
    assert p.candidate_quorum_bp == p.challenge_quorum_bp == 6667
    assert p.fork_threshold_bp == 5000
    assert p.challenge_reward == 0


def test_new_structure_with_founder():
    td = new_structure(Params(), {"founder": 100 * MICRO})
    assert td.economy.total_supply == 100 * MICRO
    assert td.elements == [] and td.metadata == {}


def test_token_free_structure():
    td = new_structure(Params())
    assert td.economy is None


def test_quorum_out_of_range():
    with pytest.raises(InvalidParams):
        new_structure(Params(candidate_quorum_bp=15000), {"a": 1})


def test_period_must_be_positive():
    with pytest.raises(InvalidParams):
        Params(candidate_vote_period=0).validate()


def test_predetermined_with_rewards_is_rejected():
    with pytest.raises(InvalidParams):
        new_structure(Params(), {"a": 1}, Issuance.PREDETERMINED)


def test_depth_flat_and_nested():
    flat = TokenizedDataStructure()
    for i in range(3):
        flat.add_element(leaf(i), meta())
    assert flat.depth() == 1

    registry = TokenizedDataStructure()
    registry.add_element(Element("d", Nested(flat)), meta())
    assert registry.depth() == 2

    # registry -> dataset -> leaves, nested twice below the registry
    outer = TokenizedDataStructure()
    outer.add_element(Element("r", Nested(registry)), meta())
    outer.add_element(leaf(9), meta())
    assert outer.depth() == 3


def test_live_elements():
    td = TokenizedDataStructure()
    td.add_element(leaf(1), meta(ElementState.CANDIDATE))
    td.add_element(leaf(2), meta(ElementState.CANDIDATE))
    assert td.live_elements() == []
    td.metadata["e1"].transition(ElementState.QUASI_FINALIZED)
    td.metadata["e1"].transition(ElementState.CHALLENGED)
    td.metadata["e2"].transition(ElementState.QUASI_FINALIZED)
    assert td.live_elements() == ["e2"]


def test_illegal_transitions():
    m = meta(ElementState.CANDIDATE)
    with pytest.raises(IllegalTransition):
        m.transition(ElementState.CHALLENGED)
    m.transition(ElementState.REMOVED)
    with pytest.raises(IllegalTransition):
        m.transition(ElementState.QUASI_FINALIZED)


def test_duplicate_ids_rejected():
    td = TokenizedDataStructure()
    td.add_element(leaf(1), meta())
    with pytest.raises(InvalidStructure):
        td.add_element(leaf(1), meta())


def test_validate_catches_offchain_in_onchain_structure():
    td = TokenizedDataStructure()
    td.add_element(Element("x", Leaf(Offchain(b"\0" * 32, "a"))), meta())
    with pytest.raises(InvalidStructure):
        td.validate()


def test_validate_recurses():
    child = TokenizedDataStructure()
    child.add_element(leaf(1), meta())
    child.metadata.pop("e1")
    parent = TokenizedDataStructure()
    parent.add_element(Element("c", Nested(child)), meta())
    with pytest.raises(InvalidStructure):
        parent.validate()


def test_round_trip_nested():
    child = new_structure(Params(offchain=True), {"b": 7})
    child.add_element(Element("o", Leaf(Offchain(b"\1" * 32, "b"), Visibility.PRIVATE)), meta())
    parent = new_structure(Params(), {"a": 5})
    parent.add_element(Element("c", Nested(child)), meta())
    parent.add_element(leaf(2), meta(ElementState.REMOVED))
    again = TokenizedDataStructure.from_dict(parent.to_dict())
    assert again == parent
    assert again.digest() == parent.digest()


_ORDER = [ElementState.CANDIDATE, ElementState.QUASI_FINALIZED, ElementState.CHALLENGED, ElementState.REMOVED]


@given(st.lists(st.tuples(st.integers(0, 4), st.sampled_from(_ORDER)), max_size=60))
def test_fuzzed_lifecycles_never_break_the_state_machine(steps):
    legal = {
        ElementState.CANDIDATE: {ElementState.QUASI_FINALIZED, ElementState.REMOVED},
        ElementState.QUASI_FINALIZED: {ElementState.CHALLENGED},
    }
    td = TokenizedDataStructure()
    shadow = {}
    for i in range(5):
        td.add_element(leaf(i), meta(ElementState.CANDIDATE))
        shadow[f"e{i}"] = ElementState.CANDIDATE
    for idx, target in steps:
        eid = f"e{idx}"
        if target in legal.get(shadow[eid], set()):
            td.metadata[eid].transition(target)
            shadow[eid] = target
        else:
            with pytest.raises(IllegalTransition):
                td.metadata[eid].transition(target)
    assert td.live_elements() == [e for e, s in shadow.items() if s is ElementState.QUASI_FINALIZED]
    td.validate()
