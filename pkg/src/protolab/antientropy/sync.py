"""Replicas that converge an LWW map by periodic anti-entropy.

``lww-sync`` pushes the whole map to one random peer per interval. ``merkle-diff``
first ships leaf hashes over a fixed key universe, so only the diverging keys
travel in either direction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Hashable, Literal

from protolab.antientropy.lww import LwwEntry, LwwMap, lww_merge, lww_put
from protolab.antientropy.merkle import (
    MerkleTree, merkle_build_over, merkle_diff, merkle_from_leaf_hashes,
)
from protolab.clocks import LogicalTimestamp, lamport_receive, lamport_tick
from protolab.errors import ConfigError
from protolab.simnet import Machine, Simulator


class Write(tuple):
    """``(time, pid, key, value)``; a ``None`` value deletes."""

    __slots__ = ()

    def __new__(cls, time: int, pid: int, key: Hashable, value: Any = None):
        return super().__new__(cls, (int(time), int(pid), key, value))


@dataclass(frozen=True)
class SyncParams:
    writes: tuple[tuple, ...] = ()
    interval: int = 5
    mode: Literal["push", "merkle"] = "push"
    # key universe for merkle mode; None means every key named by a write
    keys: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "writes", tuple(Write(*w) for w in self.writes))
        if self.interval < 1:
            raise ConfigError("anti-entropy interval must be >= 1")
        if self.mode not in ("push", "merkle"):
            raise ConfigError(f"unknown sync mode {self.mode!r}")
        if self.keys is not None:
            missing = {w[2] for w in self.writes} - set(self.keys)
            if missing:
                raise ConfigError(f"writes use keys outside the universe: {sorted(missing)}")

    @property
    def universe(self) -> tuple:
        keys = self.keys if self.keys is not None else {w[2] for w in self.writes}
        return tuple(sorted(set(keys)))


def _wire(m: LwwMap, keys=None) -> tuple:
    keys = sorted(m.entries) if keys is None else sorted(k for k in keys if k in m.entries)
    return tuple((k, m.entries[k].value, m.entries[k].ts.value, m.entries[k].ts.owner) for k in keys)


def _unwire(rows) -> LwwMap:
    return LwwMap({k: LwwEntry(v, LogicalTimestamp(t, o)) for k, v, t, o in rows})


@dataclass(frozen=True)
class MapPush:
    rows: tuple


@dataclass(frozen=True)
class HashOffer:
    leaves: tuple[str, ...]


@dataclass(frozen=True)
class Repair:
    rows: tuple
    want: tuple


def replica_tree(m: LwwMap, universe) -> MerkleTree:
    view = {k: [e.value, e.ts.value, e.ts.owner] for k, e in m.entries.items()}
    return merkle_build_over(universe, view)


class SyncMachine(Machine):
    TIMER = "ae.sync"

    def __init__(self, pid: int, n: int, params: SyncParams):
        self.pid = pid
        self.n = n
        self.params = params
        self.map = LwwMap()
        self.clock = LogicalTimestamp(0, pid)
        self.pending = sum(1 for w in params.writes if w[1] == pid)

    def start(self, ctx):
        for i, (t, pid, key, value) in enumerate(self.params.writes):
            if pid == self.pid:
                ctx.set_timer(f"ae.write.{i}", t, (key, value))
        if self.n > 1:
            ctx.set_timer(self.TIMER, self.params.interval)

    def _merge(self, ctx, incoming: LwwMap):
        top = incoming.max_ts()
        if top is not None:
            self.clock = lamport_receive(self.clock, top.value)
        before = self.map
        self.map = lww_merge(self.map, incoming)
        if self.map != before:
            ctx.note(ae="merged", keys=len(incoming.entries))

    def on_timer(self, ctx, name, data):
        if name.startswith("ae.write."):
            key, value = data
            self.clock = lamport_tick(self.clock)
            self.map = lww_put(self.map, key, value, self.clock)
            self.pending -= 1
            ctx.note(ae="write", key=key, value=value, ts=self.clock.value)
            return
        if name != self.TIMER:
            return
        peer = ctx.rng.choice([p for p in range(self.n) if p != self.pid])
        if self.params.mode == "push":
            ctx.send(peer, MapPush(_wire(self.map)))
        else:
            tree = replica_tree(self.map, self.params.universe)
            ctx.send(peer, HashOffer(tuple(h.hex() for h in tree.leaves)))
        ctx.set_timer(self.TIMER, self.params.interval)

    def on_message(self, ctx, src, msg):
        if isinstance(msg, MapPush):
            self._merge(ctx, _unwire(msg.rows))
        elif isinstance(msg, HashOffer):
            universe = self.params.universe
            mine = replica_tree(self.map, universe)
            theirs = merkle_from_leaf_hashes([bytes.fromhex(h) for h in msg.leaves], universe)
            stats: dict = {}
            diff = merkle_diff(mine, theirs, stats)
            ctx.note(ae="diff", keys=sorted(diff), comparisons=stats["comparisons"])
            if diff:
                ctx.send(src, Repair(_wire(self.map, diff), tuple(sorted(diff))))
        elif isinstance(msg, Repair):
            self._merge(ctx, _unwire(msg.rows))
            if msg.want:
                ctx.send(src, Repair(_wire(self.map, msg.want), ()))


def sync_machines(n: int, params: SyncParams) -> list[SyncMachine]:
    for w in params.writes:
        if not 0 <= w[1] < n:
            raise ConfigError(f"write names unknown process {w[1]}")
    return [SyncMachine(p, n, params) for p in range(n)]


def replicas_converged(sim: Simulator) -> bool:
    live = [sim.machines[p] for p in sim.correct_pids()]
    if any(m.pending for m in live):
        return False
    return all(m.map == live[0].map for m in live)
