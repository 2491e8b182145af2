from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from iiab.model import (
    LAMBDA,
    NoSendersHeard,
    ParticipationSchedule,
    ReceiveView,
    SignedMessage,
    Tagged,
    is_growing,
    majority_value,
    payload_from_json,
    payload_to_json,
    plurality_unique,
    strict_majority,
    validate_schedule,
)

V, W = b"v", b"w"


def view(delivery):
    return ReceiveView.noeq(1, 1, delivery)


def test_valid_schedule_has_no_violations():
    assert validate_schedule(ParticipationSchedule.constant({1, 2, 3}, {1}, 4)) == []


def test_equal_sizes_break_strictness():
    (v,) = validate_schedule(ParticipationSchedule.from_sets([({1, 2}, {1})]))
    assert "not < |W|" in v.message


def test_impersonated_must_be_online():
    msgs = [v.message for v in validate_schedule(ParticipationSchedule.from_sets([({1, 2, 3}, {4})]))]
    assert any("F ⊄ O" in m for m in msgs)


def test_growing():
    assert is_growing(ParticipationSchedule.from_sets([({1, 2, 3}, ()), ({1, 2, 3}, {1}), ({1, 2, 3}, {1})]))
    assert not is_growing(ParticipationSchedule.from_sets([({1, 2, 3}, {1}), ({1, 2, 3}, ())]))
    assert is_growing(ParticipationSchedule.constant({1, 2, 3}, {1}, 5))


def test_strict_majority_examples():
    assert strict_majority(view({1: V, 2: V, 3: W}), V)
    assert not strict_majority(view({1: LAMBDA, 2: V}), V)
    # heard-of counts, not the online set: p1 hears 3 of 4 online processors
    assert strict_majority(view({1: V, 2: V, 3: W}), V)
    assert not strict_majority(view({1: V, 2: V, 3: W}), LAMBDA)


def test_strict_majority_needs_someone_heard():
    with pytest.raises(NoSendersHeard):
        strict_majority(view({}), V)


def test_plurality():
    assert plurality_unique(view({1: V, 2: V, 3: W})) == V
    assert plurality_unique(view({1: V, 2: W})) is None
    assert plurality_unique(view({1: LAMBDA})) is None


def test_schedule_json_roundtrip():
    s = ParticipationSchedule.from_sets([({1, 2, 3}, ()), ({2, 3, 4}, {4})])
    assert ParticipationSchedule.from_json(s.to_json()) == s
    assert s.universe() == {1, 2, 3, 4}
    assert s[2].well_behaved == {2, 3}


payloads = st.recursive(
    st.binary(max_size=3),
    lambda inner: st.one_of(
        st.builds(SignedMessage, st.integers(1, 5), st.integers(1, 9), inner),
        st.builds(Tagged, st.sampled_from(["commit", "adopt"]), inner),
        st.frozensets(inner, max_size=3),
    ),
    max_leaves=6,
)


@given(payloads)
def test_payload_json_roundtrip(p):
    assert payload_from_json(payload_to_json(p)) == p


deliveries = st.dictionaries(st.integers(1, 7), st.one_of(st.sampled_from([V, W, b"x"]), st.just(LAMBDA)),
                             min_size=1)


@given(deliveries)
def test_at_most_one_strict_majority(d):
    vw = view(d)
    winners = [m for m in (V, W, b"x") if strict_majority(vw, m)]
    assert len(winners) <= 1
    assert majority_value(vw) == (winners[0] if winners else None)


@given(deliveries)
def test_majority_is_plurality(d):
    vw = view(d)
    m = majority_value(vw)
    if m is not None:
        assert plurality_unique(vw) == m
