"""Lamport and vector logical clocks.

Clock values are immutable; every operation returns a new timestamp.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Literal, Sequence

MergeRule = Literal["no-bump", "standard"]


class ClockError(ValueError):
    """Raised when two vector timestamps come from differently sized clusters."""


class CausalOrder(enum.Enum):
    BEFORE = "Before"
    AFTER = "After"
    EQUAL = "Equal"
    CONCURRENT = "Concurrent"


@dataclass(frozen=True, order=True)
class LogicalTimestamp:
    """A Lamport timestamp. Ordering is lexicographic on (value, owner)."""

    value: int = 0
    owner: int = 0

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("Lamport value must be non-negative")


@dataclass(frozen=True)
class VectorTimestamp:
    components: tuple[int, ...]
    owner_index: int

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not 0 <= self.owner_index < len(self.components):
            raise ValueError(
                f"owner_index {self.owner_index} outside cluster of {len(self.components)}"
            )
        if any(c < 0 for c in self.components):
            raise ValueError("vector components must be non-negative")

    @classmethod
    def zero(cls, n: int, owner_index: int) -> "VectorTimestamp":
        return cls((0,) * n, owner_index)

    def __len__(self):
        return len(self.components)


def lamport_tick(clock: LogicalTimestamp) -> LogicalTimestamp:
    return LogicalTimestamp(clock.value + 1, clock.owner)


def lamport_receive(
    clock: LogicalTimestamp, received: int, rule: MergeRule = "standard"
) -> LogicalTimestamp:
    """Merge a received Lamport value into ``clock``.

    ``standard`` computes ``max(local, received) + 1``. ``no-bump`` computes
    ``max(local + 1, received)``, which can leave the receive event with the
    same value as its send event.
    """
    if received < 0:
        raise ValueError("received timestamp must be non-negative")
    if rule == "standard":
        value = max(clock.value, received) + 1
    elif rule == "no-bump":
        value = max(clock.value + 1, received)
    else:
        raise ValueError(f"unknown Lamport merge rule {rule!r}")
    return LogicalTimestamp(value, clock.owner)


def vector_local_event(clock: VectorTimestamp) -> VectorTimestamp:
    comps = list(clock.components)
    comps[clock.owner_index] += 1
    return VectorTimestamp(tuple(comps), clock.owner_index)


def _check_lengths(a: Sequence[int], b: Sequence[int]) -> None:
    if len(a) != len(b):
        raise ClockError(
            f"vector length mismatch ({len(a)} vs {len(b)}): cluster size misconfigured"
        )


def vector_receive(clock: VectorTimestamp, received: VectorTimestamp) -> VectorTimestamp:
    _check_lengths(clock.components, received.components)
    merged = [max(x, y) for x, y in zip(clock.components, received.components)]
    merged[clock.owner_index] += 1
    return VectorTimestamp(tuple(merged), clock.owner_index)


def vc_compare(a: VectorTimestamp | Sequence[int], b: VectorTimestamp | Sequence[int]) -> CausalOrder:
    ca = a.components if isinstance(a, VectorTimestamp) else tuple(a)
    cb = b.components if isinstance(b, VectorTimestamp) else tuple(b)
    _check_lengths(ca, cb)
    le = all(x <= y for x, y in zip(ca, cb))
    ge = all(x >= y for x, y in zip(ca, cb))
    if le and ge:
        return CausalOrder.EQUAL
    if le:
        return CausalOrder.BEFORE
    if ge:
        return CausalOrder.AFTER
    return CausalOrder.CONCURRENT
