"""Random send/local-event workloads that stamp every event with both clocks.

Each process keeps an event log of :class:`ClockEvent`. Send and receive
events carry the envelope id, which is all a happens-before oracle needs to
rebuild the causal graph.
"""

from __future__ import annotations

from dataclasses import dataclass

from protolab.clocks import (
    LogicalTimestamp, MergeRule, VectorTimestamp, lamport_receive, lamport_tick,
    vector_local_event, vector_receive,
)
from protolab.errors import ConfigError
from protolab.simnet import Machine, Simulator


@dataclass(frozen=True)
class Stamped:
    lamport: int
    vector: tuple[int, ...]


@dataclass(frozen=True)
class ClockEvent:
    pid: int
    index: int  # position in the owner's local history
    kind: str  # "local" | "send" | "receive"
    lamport: LogicalTimestamp
    vector: VectorTimestamp
    env: int | None = None


@dataclass(frozen=True)
class ClockDemoParams:
    events_per_process: int = 4
    send_probability: float = 0.5
    rule: MergeRule = "standard"
    max_gap: int = 3

    def __post_init__(self):
        if self.events_per_process < 0:
            raise ConfigError("events_per_process must be >= 0")
        if not 0.0 <= self.send_probability <= 1.0:
            raise ConfigError("send_probability must lie in [0, 1]")
        if self.rule not in ("no-bump", "standard"):
            raise ConfigError(f"unknown Lamport rule {self.rule!r}")
        if self.max_gap < 1:
            raise ConfigError("max_gap must be >= 1")


class ClockDemoMachine(Machine):
    TIMER = "clock.event"

    def __init__(self, pid: int, n: int, params: ClockDemoParams):
        self.pid = pid
        self.n = n
        self.params = params
        self.lamport = LogicalTimestamp(0, pid)
        self.vector = VectorTimestamp.zero(n, pid)
        self.events: list[ClockEvent] = []
        self.remaining = params.events_per_process

    def _log(self, ctx, kind, env=None):
        ev = ClockEvent(self.pid, len(self.events), kind, self.lamport, self.vector, env)
        self.events.append(ev)
        ctx.note(event=kind, index=ev.index, env=env,
                 lamport=self.lamport.value, vector=list(self.vector.components))

    def _schedule(self, ctx):
        if self.remaining > 0:
            ctx.set_timer(self.TIMER, ctx.rng.randint(1, self.params.max_gap))

    def start(self, ctx):
        self._schedule(ctx)

    def on_timer(self, ctx, name, data):
        if name != self.TIMER:
            return
        self.remaining -= 1
        self.lamport = lamport_tick(self.lamport)
        self.vector = vector_local_event(self.vector)
        peers = [p for p in range(self.n) if p != self.pid]
        if peers and ctx.rng.random() < self.params.send_probability:
            dst = ctx.rng.choice(peers)
            env = ctx.send(dst, Stamped(self.lamport.value, self.vector.components))
            self._log(ctx, "send", env)
        else:
            self._log(ctx, "local")
        self._schedule(ctx)

    def on_message(self, ctx, src, msg):
        if not isinstance(msg, Stamped):
            return
        self.lamport = lamport_receive(self.lamport, msg.lamport, self.params.rule)
        self.vector = vector_receive(self.vector, VectorTimestamp(msg.vector, src))
        self._log(ctx, "receive", ctx.cause)


def clock_machines(n: int, params: ClockDemoParams = ClockDemoParams()) -> list[ClockDemoMachine]:
    return [ClockDemoMachine(p, n, params) for p in range(n)]


def all_events(sim: Simulator) -> list[ClockEvent]:
    return [e for m in sim.machines for e in m.events]


def clocks_run(config, params: ClockDemoParams = ClockDemoParams(), max_steps: int = 10_000):
    sim = Simulator(config, clock_machines(config.n_processes, params))
    outcome = sim.run_until(lambda s: False, max_steps)
    return sim, outcome
