"""Last-writer-wins map keyed by Lamport timestamps.

A delete is a write of ``None`` (a tombstone), so put/delete races merge the
same way puts do. Two writes with an identical timestamp but different values
cannot come from a well-behaved clock; they are still ordered (by the JSON
form of the value) so that merge stays a total, commutative join.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable, Mapping, Sequence

from protolab.clocks import LogicalTimestamp
from protolab.election import quorum_size

TOMBSTONE = None


@dataclass(frozen=True)
class LwwEntry:
    value: Any
    ts: LogicalTimestamp

    def rank(self) -> tuple:
        return (self.ts.value, self.ts.owner, json.dumps(self.value, sort_keys=True))


@dataclass(frozen=True)
class LwwMap:
    entries: Mapping[Hashable, LwwEntry] = field(default_factory=dict)

    def get(self, key: Hashable) -> Any:
        """Live value for ``key``; None when absent or deleted."""
        e = self.entries.get(key)
        return None if e is None else e.value

    def live_keys(self) -> list:
        return sorted(k for k, e in self.entries.items() if e.value is not TOMBSTONE)

    def max_ts(self) -> LogicalTimestamp | None:
        return max((e.ts for e in self.entries.values()), default=None)


def _wins(new: LwwEntry, old: LwwEntry | None) -> bool:
    return old is None or new.rank() > old.rank()


def lww_put(m: LwwMap, key: Hashable, value: Any, ts: LogicalTimestamp) -> LwwMap:
    entry = LwwEntry(value, ts)
    if not _wins(entry, m.entries.get(key)):
        return m
    entries = dict(m.entries)
    entries[key] = entry
    return LwwMap(entries)


def lww_delete(m: LwwMap, key: Hashable, ts: LogicalTimestamp) -> LwwMap:
    return lww_put(m, key, TOMBSTONE, ts)


def lww_merge(a: LwwMap, b: LwwMap) -> LwwMap:
    entries = dict(a.entries)
    for k, e in b.entries.items():
        if _wins(e, entries.get(k)):
            entries[k] = e
    return LwwMap(entries)


def lww_majority_read(replicas: Sequence[LwwMap], key: Hashable) -> Any:
    """Newest value for ``key`` that a majority of replicas hold identically."""
    if not replicas:
        raise ValueError("majority read over zero replicas")
    q = quorum_size(len(replicas))
    held = Counter(r.entries[key] for r in replicas if key in r.entries)
    winners = [e for e, c in held.items() if c >= q]
    if not winners:
        return None
    return max(winners, key=LwwEntry.rank).value


def lww_dump(m: LwwMap) -> list[str]:
    """One ``key<TAB>value<TAB>ts.value<TAB>ts.owner`` line per entry, sorted by key."""
    return [
        f"{k}\t{json.dumps(e.value, sort_keys=True)}\t{e.ts.value}\t{e.ts.owner}"
        for k, e in sorted(m.entries.items(), key=lambda kv: str(kv[0]))
    ]


def lww_from_puts(puts: Iterable[tuple[Hashable, Any, LogicalTimestamp]]) -> LwwMap:
    m = LwwMap()
    for key, value, ts in puts:
        m = lww_put(m, key, value, ts)
    return m
