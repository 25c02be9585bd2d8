import itertools
import random

from hypothesis import given, settings, strategies as st

from protolab.antientropy.lww import (
    LwwEntry, LwwMap, lww_delete, lww_dump, lww_from_puts, lww_majority_read, lww_merge, lww_put,
)
from protolab.clocks import LogicalTimestamp as TS


def test_put_examples():
    m = lww_put(LwwMap(), "k", "a", TS(1, 0))
    assert m.entries == {"k": LwwEntry("a", TS(1, 0))}
    m5 = lww_put(LwwMap(), "k", "a", TS(5, 0))
    assert lww_put(m5, "k", "b", TS(7, 1)).get("k") == "b"
    assert lww_put(m5, "k", "b", TS(5, 2)).get("k") == "b"
    assert lww_put(m5, "k", "b", TS(4, 9)).get("k") == "a"


def test_put_matches_sort_oracle():
    rng = random.Random(1)
    for _ in range(200):
        puts = [("k", rng.choice("abc"), TS(rng.randint(0, 5), rng.randint(0, 3))) for _ in range(6)]
        got = lww_from_puts(puts).entries["k"]
        want = max(puts, key=lambda p: (p[2].value, p[2].owner, f'"{p[1]}"'))
        assert (got.value, got.ts) == (want[1], want[2])


def test_merge_union_and_idempotent():
    a = lww_put(LwwMap(), "x", 1, TS(1, 0))
    b = lww_put(LwwMap(), "y", 2, TS(1, 1))
    assert set(lww_merge(a, b).entries) == {"x", "y"}
    assert lww_merge(a, a) == a


def test_tombstone_beats_older_put():
    m = lww_put(LwwMap(), "x", 1, TS(1, 0))
    m = lww_delete(m, "x", TS(2, 1))
    assert m.get("x") is None and m.live_keys() == []
    assert lww_merge(m, lww_put(LwwMap(), "x", 5, TS(1, 3))).get("x") is None


def test_majority_read():
    same = [lww_put(LwwMap(), "k", "a", TS(5, 0))] * 3
    assert lww_majority_read(same, "k") == "a"
    mixed = same[:2] + [lww_put(LwwMap(), "k", "b", TS(7, 0))]
    assert lww_majority_read(mixed, "k") == "a"
    split = [lww_put(LwwMap(), "k", v, TS(i, 0)) for i, v in enumerate("abc")]
    assert lww_majority_read(split, "k") is None


def test_dump_lines_sorted():
    m = lww_put(lww_put(LwwMap(), "b", [1], TS(2, 1)), "a", "x", TS(1, 0))
    assert lww_dump(m) == ['a\t"x"\t1\t0', "b\t[1]\t2\t1"]


puts = st.lists(st.tuples(st.sampled_from("abcd"), st.integers(0, 3) | st.none(),
                          st.integers(0, 6), st.integers(0, 3)), max_size=8)


def build(ps):
    return lww_from_puts((k, v, TS(t, o)) for k, v, t, o in ps)


@settings(max_examples=200)
@given(puts, puts)
def test_merge_commutative(a, b):
    assert lww_merge(build(a), build(b)) == lww_merge(build(b), build(a))


def test_convergence_all_permutations():
    ops = [("k", "a", TS(1, 0)), ("k", "b", TS(1, 1)), ("j", "c", TS(2, 0)),
           ("k", None, TS(3, 2)), ("j", "d", TS(2, 3))]
    results = {tuple(lww_dump(lww_from_puts(p))) for p in itertools.permutations(ops)}
    assert len(results) == 1
