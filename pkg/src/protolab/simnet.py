"""Seeded discrete-event network simulator.

Protocols are written as :class:`Machine` subclasses, one instance per process.
Handlers never touch the network directly; they emit effects through a
:class:`Context` (sends, timers, notes, decisions). Every effect becomes an
event in a single priority queue ordered by ``(time, sequence, actor)``, and
every call to :meth:`Simulator.step` pops events until one of them produces a
:class:`TraceRecord`, so one step always appends exactly one record.

Channel semantics follow the fair-loss / stubborn / perfect link taxonomy.
Virtual time is an integer tick counter and all randomness comes from one
``random.Random`` seeded from the configuration.
"""

from __future__ import annotations

import dataclasses
import enum
import heapq
import itertools
import json
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Literal, NamedTuple, Sequence

from protolab.errors import ConfigError, InvariantViolation

SIM_ACTOR = -1

ChannelKind = Literal["FairLoss", "Stubborn", "Perfect"]


class Kind(str, enum.Enum):
    SEND = "Send"
    DELIVER = "Deliver"
    DROP = "Drop"
    DUPLICATE = "Duplicate"
    CRASH = "Crash"
    TIMER_FIRE = "TimerFire"
    DECIDE = "Decide"
    STATE_NOTE = "StateNote"


class HaltCause(str, enum.Enum):
    PREDICATE = "Predicate"
    EXHAUSTED = "Exhausted"
    BUDGET = "Budget"


class SimulationExhausted(Exception):
    """The event queue is empty; the run terminated normally."""


def to_jsonable(obj: Any) -> Any:
    """Convert protocol payloads into plain JSON values, deterministically."""
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, bytes):
        return obj.hex()
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        out = {"type": type(obj).__name__}
        for f in dataclasses.fields(obj):
            out[f.name] = to_jsonable(getattr(obj, f.name))
        return out
    if isinstance(obj, tuple):  # includes NamedTuple such as Ballot
        return [to_jsonable(x) for x in obj]
    if isinstance(obj, list):
        return [to_jsonable(x) for x in obj]
    if isinstance(obj, (set, frozenset)):
        items = [to_jsonable(x) for x in obj]
        return sorted(items, key=lambda x: json.dumps(x, sort_keys=True))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    return repr(obj)


@dataclass(frozen=True)
class TraceRecord:
    time: int
    kind: Kind
    actor: int
    detail: dict = field(default_factory=dict)

    def to_json(self) -> str:
        detail = json.dumps(to_jsonable(self.detail), sort_keys=True, separators=(",", ":"))
        return (
            f'{{"time":{self.time},"kind":"{self.kind.value}",'
            f'"actor":{self.actor},"detail":{detail}}}'
        )

    @classmethod
    def from_json(cls, line: str) -> "TraceRecord":
        raw = json.loads(line)
        return cls(raw["time"], Kind(raw["kind"]), raw["actor"], raw["detail"])


def dump_trace(trace: Iterable[TraceRecord]) -> str:
    return "".join(rec.to_json() + "\n" for rec in trace)


@dataclass(frozen=True)
class ChannelSpec:
    kind: ChannelKind = "Perfect"
    drop_probability: float = 0.0
    max_delay: int = 1
    duplicate_probability: float = 0.0
    retransmit_interval: int = 1

    def __post_init__(self):
        if self.kind not in ("FairLoss", "Stubborn", "Perfect"):
            raise ConfigError(f"unknown channel kind {self.kind!r}")
        for name in ("drop_probability", "duplicate_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {p}")
        if self.max_delay < 1:
            raise ConfigError("max_delay must be >= 1")
        if self.kind == "Perfect" and (self.drop_probability or self.duplicate_probability):
            raise ConfigError("a Perfect channel cannot drop or duplicate")
        if self.kind == "Stubborn" and self.retransmit_interval < 1:
            raise ConfigError("Stubborn channels need retransmit_interval >= 1")


class PartitionWindow(NamedTuple):
    start: int
    end: int
    groups: tuple[tuple[int, ...], ...]


class DelaySpike(NamedTuple):
    start: int
    end: int
    extra: int


def _check_groups(groups: Sequence[Iterable[int]], n: int) -> tuple[frozenset[int], ...]:
    sets = tuple(frozenset(g) for g in groups)
    seen: set[int] = set()
    for g in sets:
        if seen & g:
            raise ConfigError(f"partition groups overlap on {sorted(seen & g)}")
        seen |= g
    if seen != set(range(n)):
        raise ConfigError(f"partition groups must cover processes 0..{n - 1} exactly")
    return sets


@dataclass(frozen=True)
class SimConfig:
    n_processes: int
    seed: int = 0
    channel: ChannelSpec = ChannelSpec()
    crash_schedule: dict[int, int] = field(default_factory=dict)
    partition_schedule: tuple[PartitionWindow, ...] = ()
    # Messages sent inside a spike window get ``extra`` ticks of added delay.
    delay_spikes: tuple[DelaySpike, ...] = ()

    def __post_init__(self):
        if self.n_processes < 1:
            raise ConfigError("n_processes must be >= 1")
        object.__setattr__(
            self, "partition_schedule",
            tuple(PartitionWindow(s, e, tuple(tuple(g) for g in gs))
                  for s, e, gs in self.partition_schedule),
        )
        object.__setattr__(
            self, "delay_spikes", tuple(DelaySpike(*s) for s in self.delay_spikes)
        )
        for pid, t in self.crash_schedule.items():
            if not 0 <= pid < self.n_processes:
                raise ConfigError(f"crash_schedule names unknown process {pid}")
            if t < 0:
                raise ConfigError("crash times must be non-negative")
        for w in self.partition_schedule:
            if w.start < 0 or w.end < w.start:
                raise ConfigError(f"bad partition window {w.start}..{w.end}")
            _check_groups(w.groups, self.n_processes)
        for s in self.delay_spikes:
            if s.start < 0 or s.end < s.start or s.extra < 0:
                raise ConfigError(f"bad delay spike {tuple(s)}")


@dataclass(frozen=True)
class ProcessStatus:
    crashed_at: int | None = None

    @property
    def correct(self) -> bool:
        return self.crashed_at is None

    def __str__(self):
        return "Correct" if self.correct else f"Crashed(at={self.crashed_at})"


@dataclass
class Envelope:
    id: int
    src: int
    dst: int
    payload: Any
    sent_at: int
    deliver_at: int | None = None
    cause: int | None = None
    # For stubborn retransmissions: id of the first envelope of the logical message.
    original: int | None = None


class RunOutcome(NamedTuple):
    steps: int
    halted_by: HaltCause


class Machine:
    """Base class for per-process protocol state machines."""

    def start(self, ctx: "Context") -> None:
        pass

    def on_message(self, ctx: "Context", src: int, msg: Any) -> None:
        pass

    def on_timer(self, ctx: "Context", name: str, data: Any) -> None:
        pass


class Context:
    """Effect interface handed to machine handlers for one process."""

    def __init__(self, sim: "Simulator", pid: int, cause: int | None = None):
        self._sim = sim
        self.pid = pid
        self.cause = cause

    @property
    def n(self) -> int:
        return self._sim.config.n_processes

    @property
    def now(self) -> int:
        return self._sim.now

    @property
    def rng(self) -> random.Random:
        return self._sim.rng

    @property
    def alive(self) -> bool:
        return self.pid not in self._sim._crashed

    def send(self, dst: int, payload: Any) -> int | None:
        if not self.alive:
            return None
        if not 0 <= dst < self.n:
            raise ConfigError(f"process {self.pid} sent to unknown process {dst}")
        return self._sim._emit_send(self.pid, dst, payload, self.cause)

    def broadcast(self, payload: Any, to: Iterable[int] | None = None) -> list[int]:
        targets = range(self.n) if to is None else to
        return [e for e in (self.send(d, payload) for d in targets) if e is not None]

    def set_timer(self, name: str, delay: int, data: Any = None) -> None:
        """Arm (or re-arm) the named timer; an older pending one is replaced."""
        if self.alive:
            self._sim._set_timer(self.pid, name, delay, data)

    def cancel_timer(self, name: str) -> None:
        self._sim._timers.pop((self.pid, name), None)

    def note(self, **detail: Any) -> None:
        if self.alive:
            self._sim._push(self.now, self.pid, "record", (Kind.STATE_NOTE, detail))

    def decide(self, **detail: Any) -> None:
        if self.alive:
            self._sim._push(self.now, self.pid, "record", (Kind.DECIDE, detail))

    def crash(self) -> None:
        """Crash this process now (scripted fault injection)."""
        self._sim._crash_now(self.pid)


class Simulator:
    """One deterministic run: configuration, machines, queue and trace."""

    def __init__(self, config: SimConfig, machines: Sequence[Machine]):
        if len(machines) != config.n_processes:
            raise ConfigError(
                f"expected {config.n_processes} machines, got {len(machines)}"
            )
        self.config = config
        self.machines = list(machines)
        self.rng = random.Random(config.seed)
        self.now = 0
        self.trace: list[TraceRecord] = []
        self.decisions: dict[int, list[dict]] = {}
        self._queue: list[tuple[int, int, int, str, Any]] = []
        self._seq = itertools.count()
        self._env_ids = itertools.count()
        self._crashed: dict[int, int] = {}
        self._crash_seq: dict[int, int] = {}
        self._crash_recorded: set[int] = set()
        self._groups: tuple[frozenset[int], ...] | None = None
        self._timers: dict[tuple[int, str], int] = {}
        self._fifo: dict[tuple[int, int], int] = {}
        self._acked: set[int] = set()

        for pid, at in sorted(config.crash_schedule.items()):
            self.crash(pid, at)
        for w in config.partition_schedule:
            self._push(w.start, SIM_ACTOR, "partition", w.groups)
            self._push(w.end, SIM_ACTOR, "heal", None)
        for pid, m in enumerate(self.machines):
            m.start(Context(self, pid))

    # -- inspection -------------------------------------------------------

    def status(self, pid: int) -> ProcessStatus:
        self._check_pid(pid)
        return ProcessStatus(self._crashed.get(pid))

    def correct_pids(self) -> list[int]:
        return [p for p in range(self.config.n_processes) if p not in self._crashed]

    @property
    def pending(self) -> int:
        return len(self._queue)

    # -- fault injection --------------------------------------------------

    def crash(self, pid: int, at: int) -> None:
        self._check_pid(pid)
        if at < self.now:
            raise ConfigError(f"cannot crash process {pid} in the past (t={at} < {self.now})")
        self._push(at, pid, "crash", None)

    def partition(self, groups: Sequence[Iterable[int]]) -> None:
        self._groups = _check_groups(groups, self.config.n_processes)
        self._push(self.now, SIM_ACTOR, "record",
                   (Kind.STATE_NOTE, {"partition": [sorted(g) for g in self._groups]}))

    def heal(self) -> None:
        self._groups = None
        self._push(self.now, SIM_ACTOR, "record", (Kind.STATE_NOTE, {"heal": True}))

    # -- execution --------------------------------------------------------

    def step(self) -> TraceRecord:
        """Process events until one produces a trace record; return it."""
        while self._queue:
            time, seq, actor, kind, data = heapq.heappop(self._queue)
            self.now = time
            handler = getattr(self, f"_on_{kind}")
            before = len(self.trace)
            try:
                handler(seq, actor, data)
            except InvariantViolation as exc:
                if exc.record_index is None:
                    exc.record_index = len(self.trace) - 1
                raise
            if len(self.trace) > before:
                return self.trace[-1]
        raise SimulationExhausted()

    def run_until(
        self,
        predicate: Callable[["Simulator"], bool] | None = None,
        max_steps: int = 10_000,
        observer: Callable[[TraceRecord, "Simulator"], None] | None = None,
    ) -> RunOutcome:
        """Step until ``predicate`` holds, the queue empties, or the budget runs out.

        ``observer`` is called after every step; it may raise to abort the run.
        """
        if max_steps < 0:
            raise ConfigError("max_steps must be >= 0")
        steps = 0
        while True:
            if predicate is not None and predicate(self):
                return RunOutcome(steps, HaltCause.PREDICATE)
            if steps >= max_steps:
                return RunOutcome(steps, HaltCause.BUDGET)
            try:
                rec = self.step()
            except SimulationExhausted:
                return RunOutcome(steps, HaltCause.EXHAUSTED)
            steps += 1
            if observer is not None:
                observer(rec, self)

    # -- internals --------------------------------------------------------

    def _check_pid(self, pid: int) -> None:
        if not 0 <= pid < self.config.n_processes:
            raise ConfigError(f"process id {pid} out of range 0..{self.config.n_processes - 1}")

    def _push(self, time: int, actor: int, kind: str, data: Any) -> int:
        seq = next(self._seq)
        heapq.heappush(self._queue, (time, seq, actor, kind, data))
        return seq

    def _record(self, kind: Kind, actor: int, detail: dict) -> None:
        self.trace.append(TraceRecord(self.now, kind, actor, detail))

    def _emitted_before_crash(self, pid: int, seq: int) -> bool:
        return pid not in self._crash_seq or seq < self._crash_seq[pid]

    def _emit_send(self, src: int, dst: int, payload: Any, cause: int | None) -> int:
        env = Envelope(next(self._env_ids), src, dst, payload, self.now, cause=cause)
        self._push(self.now, src, "send", env)
        return env.id

    def _set_timer(self, pid: int, name: str, delay: int, data: Any) -> None:
        if delay < 0:
            raise ConfigError("timer delay must be >= 0")
        seq = self._push(self.now + delay, pid, "timer", (name, data))
        self._timers[(pid, name)] = seq

    def _crash_now(self, pid: int) -> None:
        if pid in self._crashed:
            return
        self._crashed[pid] = self.now
        self._crash_seq[pid] = next(self._seq)
        self._push(self.now, pid, "crash", None)

    def _same_side(self, a: int, b: int) -> bool:
        if self._groups is None or a == b:
            return True
        return any(a in g and b in g for g in self._groups)

    def _delay(self) -> int:
        d = self.rng.randint(1, self.config.channel.max_delay)
        for spike in self.config.delay_spikes:
            if spike.start <= self.now < spike.end:
                d += spike.extra
        return d

    def _transmit(self, env: Envelope) -> None:
        """Apply channel semantics to an envelope that was just sent."""
        ch = self.config.channel
        if not self._same_side(env.src, env.dst):
            self._push(self.now, env.dst, "drop", (env, "partition"))
            return
        if ch.kind != "Perfect" and self.rng.random() < ch.drop_probability:
            self._push(self.now, env.dst, "drop", (env, "loss"))
        else:
            at = self.now + self._delay()
            if ch.kind == "Perfect":
                at = max(at, self._fifo.get((env.src, env.dst), 0))
                self._fifo[(env.src, env.dst)] = at
            env.deliver_at = at
            self._push(at, env.dst, "deliver", env)
            if ch.kind != "Perfect" and self.rng.random() < ch.duplicate_probability:
                self._push(self.now, env.dst, "duplicate", env)
        if ch.kind == "Stubborn":
            self._push(self.now + ch.retransmit_interval, env.src, "retransmit", env)

    def _send_detail(self, env: Envelope) -> dict:
        detail = {"env": env.id, "dst": env.dst, "msg": env.payload, "cause": env.cause}
        if env.original is not None:
            detail["retransmit_of"] = env.original
        return detail

    def _on_send(self, seq: int, actor: int, env: Envelope) -> None:
        if not self._emitted_before_crash(env.src, seq):
            return
        self._record(Kind.SEND, env.src, self._send_detail(env))
        self._transmit(env)

    def _on_retransmit(self, seq: int, actor: int, env: Envelope) -> None:
        logical = env.original if env.original is not None else env.id
        if logical in self._acked or env.src in self._crashed or env.dst in self._crashed:
            return
        again = Envelope(next(self._env_ids), env.src, env.dst, env.payload, self.now,
                         cause=env.cause, original=logical)
        self._record(Kind.SEND, env.src, self._send_detail(again))
        self._transmit(again)

    def _on_duplicate(self, seq: int, actor: int, env: Envelope) -> None:
        self._record(Kind.DUPLICATE, env.dst, {"env": env.id, "src": env.src})
        at = self.now + self._delay()
        copy = dataclasses.replace(env, deliver_at=at)
        self._push(at, env.dst, "deliver", copy)

    def _on_drop(self, seq: int, actor: int, data: tuple[Envelope, str]) -> None:
        env, reason = data
        self._record(Kind.DROP, env.dst, {"env": env.id, "src": env.src, "reason": reason})

    def _on_deliver(self, seq: int, actor: int, env: Envelope) -> None:
        if env.dst in self._crashed:
            self._record(Kind.DROP, env.dst, {"env": env.id, "src": env.src, "reason": "crashed"})
            return
        if not self._same_side(env.src, env.dst):
            self._record(Kind.DROP, env.dst, {"env": env.id, "src": env.src, "reason": "partition"})
            return
        self._acked.add(env.original if env.original is not None else env.id)
        self._record(Kind.DELIVER, env.dst, {"env": env.id, "src": env.src, "msg": env.payload})
        self.machines[env.dst].on_message(Context(self, env.dst, cause=env.id), env.src, env.payload)

    def _on_timer(self, seq: int, actor: int, data: tuple[str, Any]) -> None:
        name, payload = data
        if self._timers.get((actor, name)) != seq or actor in self._crashed:
            return
        del self._timers[(actor, name)]
        self._record(Kind.TIMER_FIRE, actor, {"timer": name})
        self.machines[actor].on_timer(Context(self, actor), name, payload)

    def _on_record(self, seq: int, actor: int, data: tuple[Kind, dict]) -> None:
        if actor != SIM_ACTOR and not self._emitted_before_crash(actor, seq):
            return
        kind, detail = data
        self._record(kind, actor, detail)
        if kind is Kind.DECIDE:
            self.decisions.setdefault(actor, []).append(detail)

    def _on_crash(self, seq: int, actor: int, data: Any) -> None:
        if actor in self._crash_recorded:
            return
        self._crash_recorded.add(actor)
        if actor not in self._crashed:
            self._crashed[actor] = self.now
            self._crash_seq[actor] = seq
        for key in [k for k in self._timers if k[0] == actor]:
            del self._timers[key]
        self._record(Kind.CRASH, actor, {"at": self._crashed[actor]})

    def _on_partition(self, seq: int, actor: int, groups) -> None:
        self._groups = _check_groups(groups, self.config.n_processes)
        self._record(Kind.STATE_NOTE, SIM_ACTOR, {"partition": [sorted(g) for g in self._groups]})

    def _on_heal(self, seq: int, actor: int, data: Any) -> None:
        self._groups = None
        self._record(Kind.STATE_NOTE, SIM_ACTOR, {"heal": True})


def sim_new(config: SimConfig, machines: Sequence[Machine]) -> Simulator:
    return Simulator(config, machines)


class Metrics(NamedTuple):
    message_count: int
    communication_steps: int


def metrics(trace: Iterable[TraceRecord]) -> Metrics:
    """Message complexity and longest causal Send->Deliver chain of a trace.

    A send's depth is one more than the depth of the delivery that triggered
    it (``cause``); sends triggered by timers start a new chain at depth 1.
    """
    sends = 0
    depth: dict[int, int] = {}
    longest = 0
    for rec in trace:
        if rec.kind is Kind.SEND:
            sends += 1
            env = rec.detail["env"]
            cause = rec.detail.get("cause")
            depth[env] = 1 + (depth.get(cause, 0) if cause is not None else 0)
        elif rec.kind is Kind.DELIVER:
            longest = max(longest, depth.get(rec.detail["env"], 0))
    return Metrics(sends, longest)
