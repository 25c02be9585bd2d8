"""Heartbeat failure detector with per-peer adaptive timeouts.

Every process starts out believing all peers are alive. A peer whose last
heartbeat is older than its timeout becomes suspected; a heartbeat from a
suspected peer clears the suspicion and grows that peer's timeout, so false
suspicions caused by slow links die out once delays are bounded.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Callable

from protolab.errors import ProtocolError
from protolab.simnet import Context, Machine


@dataclass(frozen=True)
class Heartbeat:
    sender: int


@dataclass(frozen=True)
class DetectorConfig:
    heartbeat_interval: int = 10
    initial_timeout: int = 30
    # None means half of the initial timeout.
    increment: int | None = None

    @property
    def timeout_increment(self) -> int:
        if self.increment is not None:
            return self.increment
        return max(1, self.initial_timeout // 2)


@dataclass(frozen=True)
class DetectorState:
    owner: int
    alive_view: frozenset[int]
    suspected: frozenset[int]
    timeout_of: dict[int, int]
    heartbeat_interval: int
    last_heard: dict[int, int]
    increment: int

    @property
    def peers(self) -> frozenset[int]:
        return self.alive_view | self.suspected


def detector_init(owner: int, n: int, config: DetectorConfig = DetectorConfig(),
                  now: int = 0) -> DetectorState:
    peers = frozenset(p for p in range(n) if p != owner)
    return DetectorState(
        owner=owner,
        alive_view=peers,
        suspected=frozenset(),
        timeout_of={p: config.initial_timeout for p in peers},
        heartbeat_interval=config.heartbeat_interval,
        last_heard={p: now for p in peers},
        increment=config.timeout_increment,
    )


def fd_on_interval(state: DetectorState, now: int):
    """Heartbeat every peer and suspect the ones that have gone quiet.

    Returns ``(state, outbox, newly_suspected)``; the outbox is a list of
    ``(destination, Heartbeat)`` pairs.
    """
    outbox = [(p, Heartbeat(state.owner)) for p in sorted(state.peers)]
    newly = frozenset(
        p for p in state.alive_view if now - state.last_heard[p] > state.timeout_of[p]
    )
    if newly:
        state = replace(state, alive_view=state.alive_view - newly,
                        suspected=state.suspected | newly)
    return state, outbox, newly


def fd_on_heartbeat(state: DetectorState, sender: int, now: int) -> DetectorState:
    if sender == state.owner:
        raise ProtocolError(f"process {sender} received its own heartbeat")
    if sender not in state.peers:
        raise ProtocolError(f"heartbeat from unknown process {sender}")
    last_heard = dict(state.last_heard)
    last_heard[sender] = max(last_heard[sender], now)
    if sender not in state.suspected:
        return replace(state, last_heard=last_heard)
    timeout_of = dict(state.timeout_of)
    timeout_of[sender] += state.increment
    return replace(
        state,
        last_heard=last_heard,
        timeout_of=timeout_of,
        alive_view=state.alive_view | {sender},
        suspected=state.suspected - {sender},
    )


SuspicionListener = Callable[[Context, int, bool], None]


class FailureDetector:
    """Hosts a :class:`DetectorState` inside a composite machine.

    The host forwards timers and messages; ``listener(ctx, peer, suspected)``
    is called on every change of opinion.
    """

    TIMER = "fd.heartbeat"

    def __init__(self, pid: int, n: int, config: DetectorConfig = DetectorConfig(),
                 listener: SuspicionListener | None = None):
        self.config = config
        self.state = detector_init(pid, n, config)
        self.listener = listener

    @property
    def suspected(self) -> frozenset[int]:
        return self.state.suspected

    def is_suspected(self, pid: int) -> bool:
        return pid in self.state.suspected

    def start(self, ctx: Context) -> None:
        ctx.set_timer(self.TIMER, self.config.heartbeat_interval)

    def handle_timer(self, ctx: Context, name: str) -> bool:
        if name != self.TIMER:
            return False
        self.state, outbox, newly = fd_on_interval(self.state, ctx.now)
        for dst, hb in outbox:
            ctx.send(dst, hb)
        for p in sorted(newly):
            ctx.note(fd="suspect", peer=p, timeout=self.state.timeout_of[p])
            if self.listener:
                self.listener(ctx, p, True)
        ctx.set_timer(self.TIMER, self.config.heartbeat_interval)
        return True

    def handle_message(self, ctx: Context, src: int, msg: Any) -> bool:
        if not isinstance(msg, Heartbeat):
            return False
        was_suspected = msg.sender in self.state.suspected
        self.state = fd_on_heartbeat(self.state, msg.sender, ctx.now)
        if was_suspected:
            ctx.note(fd="restore", peer=msg.sender, timeout=self.state.timeout_of[msg.sender])
            if self.listener:
                self.listener(ctx, msg.sender, False)
        return True


class DetectorMachine(Machine):
    """A process that runs nothing but the failure detector."""

    def __init__(self, pid: int, n: int, config: DetectorConfig = DetectorConfig()):
        self.fd = FailureDetector(pid, n, config)

    def start(self, ctx):
        self.fd.start(ctx)

    def on_timer(self, ctx, name, data):
        self.fd.handle_timer(ctx, name)

    def on_message(self, ctx, src, msg):
        self.fd.handle_message(ctx, src, msg)
