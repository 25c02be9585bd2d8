import pytest
from hypothesis import given, strategies as st

from protolab.clocks import (
    CausalOrder, ClockError, LogicalTimestamp, VectorTimestamp, lamport_receive,
    lamport_tick, vc_compare, vector_local_event, vector_receive,
)


def test_lamport_tick_examples():
    assert lamport_tick(LogicalTimestamp(0, 0)).value == 1
    assert lamport_tick(LogicalTimestamp(2, 0)).value == 3
    c = LogicalTimestamp(0, 4)
    for _ in range(7):
        c = lamport_tick(c)
    assert c == LogicalTimestamp(7, 4)


@pytest.mark.parametrize("local,received,rule,want", [
    (0, 3, "no-bump", 3),
    (1, 5, "no-bump", 5),
    (5, 3, "standard", 6),
    (0, 3, "standard", 4),
])
def test_lamport_receive_rules(local, received, rule, want):
    assert lamport_receive(LogicalTimestamp(local, 1), received, rule).value == want


def test_lamport_receive_rejects_bad_input():
    with pytest.raises(ValueError):
        lamport_receive(LogicalTimestamp(0, 0), -1)
    with pytest.raises(ValueError):
        lamport_receive(LogicalTimestamp(0, 0), 1, "other")


def test_lamport_total_order_breaks_ties_by_owner():
    assert LogicalTimestamp(5, 0) < LogicalTimestamp(5, 2) < LogicalTimestamp(6, 0)


@pytest.mark.parametrize("start,owner,want", [
    ((0, 0, 0), 0, (1, 0, 0)),
    ((4, 0, 0), 1, (4, 1, 0)),
    ((4, 2, 1), 2, (4, 2, 2)),
])
def test_vector_local_event(start, owner, want):
    assert vector_local_event(VectorTimestamp(start, owner)).components == want


@pytest.mark.parametrize("local,owner,received,want", [
    ((0, 0, 0), 1, (3, 0, 0), (3, 1, 0)),
    ((0, 0, 1), 2, (4, 2, 0), (4, 2, 2)),
    ((0, 0, 0), 0, (0, 0, 0), (1, 0, 0)),
])
def test_vector_receive(local, owner, received, want):
    out = vector_receive(VectorTimestamp(local, owner), VectorTimestamp(received, 0))
    assert out.components == want and out.owner_index == owner


def test_vector_length_mismatch():
    with pytest.raises(ClockError):
        vector_receive(VectorTimestamp((0, 0), 0), VectorTimestamp((0, 0, 0), 0))
    with pytest.raises(ClockError):
        vc_compare((0, 0), (0, 0, 0))


@pytest.mark.parametrize("a,b,want", [
    ((0, 0, 0), (0, 0, 0), CausalOrder.EQUAL),
    ((3, 0, 0), (4, 2, 0), CausalOrder.BEFORE),
    ((4, 2, 0), (3, 0, 0), CausalOrder.AFTER),
    ((4, 0, 0), (0, 0, 1), CausalOrder.CONCURRENT),
])
def test_vc_compare(a, b, want):
    assert vc_compare(a, b) is want


vectors = st.integers(1, 5).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 6), min_size=n, max_size=n),
                        st.lists(st.integers(0, 6), min_size=n, max_size=n)))


@given(vectors)
def test_vc_compare_antisymmetric(pair):
    a, b = pair
    flip = {CausalOrder.BEFORE: CausalOrder.AFTER, CausalOrder.AFTER: CausalOrder.BEFORE,
            CausalOrder.EQUAL: CausalOrder.EQUAL, CausalOrder.CONCURRENT: CausalOrder.CONCURRENT}
    assert vc_compare(b, a) is flip[vc_compare(a, b)]


@given(vectors, st.integers(0, 4))
def test_vector_receive_monotone(pair, owner):
    a, b = pair
    owner %= len(a)
    out = vector_receive(VectorTimestamp(a, owner), VectorTimestamp(b, 0))
    assert all(o >= x and o >= y for o, x, y in zip(out.components, a, b))
    assert out.components[owner] == max(a[owner], b[owner]) + 1
