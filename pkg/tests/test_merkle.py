import hashlib
import random

import pytest

from protolab.antientropy.merkle import (
    AuditPath, leaf_hash, merkle_audit_proof, merkle_build, merkle_build_over,
    merkle_consistency_proof, merkle_diff, merkle_from_leaf_hashes, merkle_root,
    merkle_verify_audit, merkle_verify_consistency,
)


def oracle_root(leaves):
    """Plain recursive definition of the tree head."""
    if not leaves:
        return hashlib.sha256(b"").digest()
    if len(leaves) == 1:
        return leaves[0]
    k = 1
    while k * 2 < len(leaves):
        k *= 2
    return hashlib.sha256(b"\x01" + oracle_root(leaves[:k]) + oracle_root(leaves[k:])).digest()


def test_single_item_root_is_prefixed_leaf_hash():
    t = merkle_build([("a", 1)])
    payload = b'["a",1]'
    assert merkle_root(t) == hashlib.sha256(b"\x00" + payload).digest()


@pytest.mark.parametrize("n", range(0, 20))
def test_root_matches_oracle(n):
    items = [(f"k{i:02d}", i) for i in range(n)]
    t = merkle_build(items)
    assert t.root == oracle_root([leaf_hash(k, v) for k, v in items])


def test_determinism_and_sensitivity():
    items = [(f"k{i}", i) for i in range(9)]
    assert merkle_build(items).root == merkle_build(list(reversed(items))).root
    changed = items[:4] + [("k4", 99)] + items[5:]
    assert merkle_build(changed).root != merkle_build(items).root


def test_duplicate_keys_rejected():
    with pytest.raises(ValueError):
        merkle_build([("a", 1), ("a", 2)])


def test_audit_proof_cases():
    items = [(f"k{i}", i) for i in range(7)]
    t = merkle_build(items)
    p = merkle_audit_proof(t, "k3")
    assert merkle_verify_audit(t.root, "k3", 3, p)
    assert not merkle_verify_audit(t.root, "k3", 4, p)
    bad = AuditPath(p.index, p.size, (b"\x00" * 32,) + p.hashes[1:])
    assert not merkle_verify_audit(t.root, "k3", 3, bad)
    with pytest.raises(KeyError):
        merkle_audit_proof(t, "zz")


def test_diff_examples():
    universe = [f"k{i}" for i in range(10)]
    a = merkle_build_over(universe, {k: 1 for k in universe})
    assert merkle_diff(a, a) == set()
    b = merkle_build_over(universe, {**{k: 1 for k in universe}, "k6": 2})
    stats = {}
    assert merkle_diff(a, b, stats) == {"k6"}
    assert stats["comparisons"] <= 2 * 1 * a.depth + 2
    c = merkle_build_over(universe, {k: 1 for k in universe[:-1]})
    assert merkle_diff(a, c) == {"k9"}
    with pytest.raises(ValueError):
        merkle_diff(a, merkle_build_over(universe[:3], {}))


def test_consistency_cases():
    leaves = [leaf_hash(i, i) for i in range(10)]
    new = merkle_from_leaf_hashes(leaves)
    same = merkle_consistency_proof(new, 10)
    assert same.hashes == () and merkle_verify_consistency(new.root, new.root, same)
    old = merkle_from_leaf_hashes(leaves[:7])
    assert merkle_verify_consistency(old.root, new.root, merkle_consistency_proof(new, 7))
    mutated = merkle_from_leaf_hashes([leaf_hash("x", 0)] + leaves[1:7])
    assert not merkle_verify_consistency(mutated.root, new.root, merkle_consistency_proof(new, 7))
    with pytest.raises(ValueError):
        merkle_consistency_proof(new, 11)
