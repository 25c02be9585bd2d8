"""Merkle trees over sorted key/value items, with audit and consistency proofs.

The tree shape and proof formats follow the Certificate Transparency
construction: SHA-256, a 0x00 prefix on leaf hashes and 0x01 on interior
nodes, and a left subtree holding the largest power of two strictly below the
leaf count.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any, Hashable, Iterable, Mapping, Sequence

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"
ABSENT = {"absent": True}


def _h(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def leaf_hash(key: Hashable, value: Any) -> bytes:
    payload = json.dumps([key, value], sort_keys=True, separators=(",", ":")).encode()
    return _h(LEAF_PREFIX + payload)


def node_hash(left: bytes, right: bytes) -> bytes:
    return _h(NODE_PREFIX + left + right)


def _split(n: int) -> int:
    """Largest power of two strictly smaller than ``n`` (n >= 2)."""
    k = 1
    while k << 1 < n:
        k <<= 1
    return k


@dataclass(frozen=True)
class Node:
    hash: bytes
    lo: int
    hi: int  # leaf range [lo, hi)
    left: "Node | None" = None
    right: "Node | None" = None


def _build(leaves: Sequence[bytes], lo: int, hi: int) -> Node:
    if hi - lo == 1:
        return Node(leaves[lo], lo, hi)
    k = _split(hi - lo)
    left = _build(leaves, lo, lo + k)
    right = _build(leaves, lo + k, hi)
    return Node(node_hash(left.hash, right.hash), lo, hi, left, right)


@dataclass(frozen=True)
class MerkleTree:
    keys: tuple
    leaves: tuple[bytes, ...]
    root_node: Node | None

    @property
    def root(self) -> bytes:
        return merkle_root(self)

    @property
    def size(self) -> int:
        return len(self.leaves)

    @property
    def depth(self) -> int:
        return max(0, (self.size - 1).bit_length())


def merkle_from_leaf_hashes(leaves: Sequence[bytes], keys: Sequence[Hashable] | None = None) -> MerkleTree:
    leaves = tuple(leaves)
    keys = tuple(range(len(leaves))) if keys is None else tuple(keys)
    if len(keys) != len(leaves):
        raise ValueError("one key per leaf hash is required")
    root = _build(leaves, 0, len(leaves)) if leaves else None
    return MerkleTree(keys, leaves, root)


def merkle_build(items: Iterable[tuple[Hashable, Any]]) -> MerkleTree:
    """Tree over ``(key, value)`` pairs, ordered by key. Duplicate keys raise ValueError."""
    items = sorted(items, key=lambda kv: kv[0])
    keys = [k for k, _ in items]
    for a, b in zip(keys, keys[1:]):
        if a == b:
            raise ValueError(f"duplicate key {a!r}")
    return merkle_from_leaf_hashes([leaf_hash(k, v) for k, v in items], keys)


def merkle_build_over(universe: Iterable[Hashable], mapping: Mapping[Hashable, Any]) -> MerkleTree:
    """Tree over a fixed key universe; keys missing from ``mapping`` get the absent marker."""
    return merkle_build((k, mapping[k] if k in mapping else ABSENT) for k in set(universe))


def merkle_root(tree: MerkleTree) -> bytes:
    return tree.root_node.hash if tree.root_node is not None else _h(b"")


# -- audit proofs -----------------------------------------------------------

@dataclass(frozen=True)
class AuditPath:
    index: int
    size: int
    hashes: tuple[bytes, ...]


def _path(node: Node, m: int) -> list[bytes]:
    if node.left is None:
        return []
    if m < node.right.lo:
        return _path(node.left, m) + [node.right.hash]
    return _path(node.right, m) + [node.left.hash]


def merkle_audit_proof(tree: MerkleTree, key: Hashable) -> AuditPath:
    try:
        index = tree.keys.index(key)
    except ValueError:
        raise KeyError(f"key {key!r} is not in the tree") from None
    return AuditPath(index, tree.size, tuple(_path(tree.root_node, index)))


def verify_inclusion(root: bytes, leaf: bytes, path: AuditPath) -> bool:
    if not 0 <= path.index < path.size:
        return False
    fn, sn, r = path.index, path.size - 1, leaf
    for p in path.hashes:
        if sn == 0:
            return False
        if fn & 1 or fn == sn:
            r = node_hash(p, r)
            while not fn & 1 and fn != 0:
                fn >>= 1
                sn >>= 1
        else:
            r = node_hash(r, p)
        fn >>= 1
        sn >>= 1
    return sn == 0 and r == root


def merkle_verify_audit(root: bytes, key: Hashable, value: Any, path: AuditPath) -> bool:
    return verify_inclusion(root, leaf_hash(key, value), path)


# -- diff -------------------------------------------------------------------

def merkle_diff(a: MerkleTree, b: MerkleTree, stats: dict | None = None) -> set:
    """Keys whose leaves differ. Equal subtrees are pruned.

    Both trees must cover the same key universe. When ``stats`` is given its
    ``"comparisons"`` entry receives the number of hash comparisons made.
    """
    if a.keys != b.keys:
        raise ValueError("merkle_diff needs trees over the same key universe")
    out: set = set()
    count = 0

    def walk(x: Node | None, y: Node | None) -> None:
        nonlocal count
        if x is None:
            return
        count += 1
        if x.hash == y.hash:
            return
        if x.left is None:
            out.add(a.keys[x.lo])
            return
        walk(x.left, y.left)
        walk(x.right, y.right)

    walk(a.root_node, b.root_node)
    if stats is not None:
        stats["comparisons"] = count
    return out


# -- consistency proofs -----------------------------------------------------

@dataclass(frozen=True)
class ConsistencyProof:
    old_size: int
    new_size: int
    hashes: tuple[bytes, ...]


def _mth(leaves: Sequence[bytes]) -> bytes:
    return _build(leaves, 0, len(leaves)).hash


def _subproof(m: int, leaves: Sequence[bytes], complete: bool) -> list[bytes]:
    n = len(leaves)
    if m == n:
        return [] if complete else [_mth(leaves)]
    k = _split(n)
    if m <= k:
        return _subproof(m, leaves[:k], complete) + [_mth(leaves[k:])]
    return _subproof(m - k, leaves[k:], False) + [_mth(leaves[:k])]


def merkle_consistency_proof(tree: MerkleTree, old_leaf_count: int) -> ConsistencyProof:
    if old_leaf_count > tree.size:
        raise ValueError(f"old size {old_leaf_count} exceeds current size {tree.size}")
    if old_leaf_count < 1:
        raise ValueError("consistency proofs start from a non-empty tree")
    return ConsistencyProof(old_leaf_count, tree.size,
                            tuple(_subproof(old_leaf_count, tree.leaves, True)))


def merkle_verify_consistency(old_root: bytes, new_root: bytes, proof: ConsistencyProof) -> bool:
    m, n, path = proof.old_size, proof.new_size, list(proof.hashes)
    if not 1 <= m <= n:
        return False
    if m == n:
        return not path and old_root == new_root
    if m & (m - 1) == 0:
        path = [old_root] + path
    if not path:
        return False
    fn, sn = m - 1, n - 1
    while fn & 1:
        fn >>= 1
        sn >>= 1
    fr = sr = path[0]
    for c in path[1:]:
        if sn == 0:
            return False
        if fn & 1 or fn == sn:
            fr = node_hash(c, fr)
            sr = node_hash(c, sr)
            while not fn & 1 and fn != 0:
                fn >>= 1
                sn >>= 1
        else:
            sr = node_hash(sr, c)
        fn >>= 1
        sn >>= 1
    return fr == old_root and sr == new_root and sn == 0
