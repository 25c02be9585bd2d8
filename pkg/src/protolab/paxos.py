"""Single-decree Paxos: role transitions, a simulator host, snapshots, and an
exhaustive interleaving explorer.

The role functions are pure: each takes a frozen state and a message and
returns the new state plus whatever must be sent. :class:`PaxosMachine` wires
them to the simulator with every process acting as acceptor and learner and a
configurable subset acting as proposers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Any, Hashable, Iterable, Sequence

from protolab.election import Ballot, quorum_size
from protolab.errors import ConfigError, InvariantViolation, ProtocolError
from protolab.simnet import Context, Machine, Simulator, Kind


# -- messages ---------------------------------------------------------------

@dataclass(frozen=True)
class Prepare:
    ballot: Ballot


@dataclass(frozen=True)
class Promise:
    acceptor: int
    ballot: Ballot
    accepted: tuple[Ballot, Any] | None


@dataclass(frozen=True)
class Nack:
    acceptor: int
    ballot: Ballot
    promised: Ballot


@dataclass(frozen=True)
class Accept:
    ballot: Ballot
    value: Any


@dataclass(frozen=True)
class Accepted:
    acceptor: int
    ballot: Ballot
    value: Any


@dataclass(frozen=True)
class Learned:
    learner: int
    value: Any


# -- role states --------------------------------------------------------------

class ProposerPhase(str, enum.Enum):
    IDLE = "Idle"
    PREPARED = "Prepared"
    ACCEPTING = "Accepting"
    DONE = "Done"


@dataclass(frozen=True)
class ProposerState:
    pid: int
    acceptors: tuple[int, ...]
    ballot: Ballot | None = None
    proposed_value: Any = None
    promises: frozenset[Promise] = frozenset()
    phase: ProposerPhase = ProposerPhase.IDLE
    max_round_seen: int = 0
    chosen: Any = None

    @property
    def quorum(self) -> int:
        return quorum_size(len(self.acceptors))


@dataclass(frozen=True)
class AcceptorState:
    pid: int
    promised: Ballot | None = None
    accepted: tuple[Ballot, Any] | None = None


@dataclass(frozen=True)
class LearnerState:
    # (ballot, acceptor, value) triples; an acceptor votes once per ballot
    votes: frozenset[tuple[Ballot, int, Hashable]] = frozenset()
    decided: Any = None
    decided_ballot: Ballot | None = None

    def count(self, ballot: Ballot, value: Any) -> int:
        return sum(1 for b, _, v in self.votes if b == ballot and v == value)


# -- proposer -----------------------------------------------------------------

def px_propose(state: ProposerState, value: Any, ballot: Ballot | None = None):
    """Start a new round with a ballot above anything this proposer has seen.

    A caller holding an externally issued ballot (an elected leader's term)
    may pass it explicitly; it must still exceed the previous round.
    """
    if state.phase in (ProposerPhase.PREPARED, ProposerPhase.ACCEPTING):
        raise ProtocolError(f"proposer {state.pid} already has round {state.ballot} in flight")
    if state.phase is ProposerPhase.DONE:
        raise ProtocolError(f"proposer {state.pid} has finished")
    if ballot is None:
        last = state.ballot.round if state.ballot else 0
        ballot = Ballot(max(last, state.max_round_seen) + 1, state.pid)
    elif state.ballot is not None and ballot <= state.ballot:
        raise ProtocolError(f"ballot {ballot} does not exceed previous {state.ballot}")
    state = replace(state, ballot=ballot, proposed_value=value, promises=frozenset(),
                    phase=ProposerPhase.PREPARED, chosen=None)
    return state, [(a, Prepare(ballot)) for a in state.acceptors]


def px_on_promise(state: ProposerState, promise: Promise):
    if state.phase is not ProposerPhase.PREPARED or promise.ballot != state.ballot:
        return state, []
    if any(p.acceptor == promise.acceptor for p in state.promises):
        return state, []
    promises = state.promises | {promise}
    state = replace(state, promises=promises)
    if len(promises) < state.quorum:
        return state, []
    prior = [p.accepted for p in promises if p.accepted is not None]
    chosen = max(prior, key=lambda acc: acc[0])[1] if prior else state.proposed_value
    state = replace(state, phase=ProposerPhase.ACCEPTING, chosen=chosen)
    targets = sorted(p.acceptor for p in promises)
    return state, [(a, Accept(state.ballot, chosen)) for a in targets]


def px_on_nack(state: ProposerState, nack: Nack):
    """Abort the current round if ``nack`` rejects it. Returns ``(state, aborted)``."""
    state = replace(state, max_round_seen=max(state.max_round_seen, nack.promised.round))
    live = state.phase in (ProposerPhase.PREPARED, ProposerPhase.ACCEPTING)
    if not live or nack.ballot != state.ballot or nack.promised <= state.ballot:
        return state, False
    return px_abort(state), True


def px_abort(state: ProposerState) -> ProposerState:
    return replace(state, phase=ProposerPhase.IDLE, promises=frozenset())


# -- acceptor -----------------------------------------------------------------

def px_on_prepare(state: AcceptorState, ballot: Ballot):
    if state.promised is None or ballot > state.promised:
        state = replace(state, promised=ballot)
        return state, Promise(state.pid, ballot, state.accepted)
    return state, Nack(state.pid, ballot, state.promised)


def px_on_accept(state: AcceptorState, ballot: Ballot, value: Any):
    if state.promised is None or ballot >= state.promised:
        state = replace(state, promised=ballot, accepted=(ballot, value))
        return state, Accepted(state.pid, ballot, value)
    return state, Nack(state.pid, ballot, state.promised)


# -- learner ------------------------------------------------------------------

def px_on_accepted(state: LearnerState, msg: Accepted, n: int):
    """Record one acceptance; ``n`` is the number of acceptors.

    Returns ``(state, decided)`` where ``decided`` is the value only on the
    call that first reaches a quorum. A second value reaching quorum is a
    safety violation and raises :class:`InvariantViolation`.
    """
    if any(b == msg.ballot and a == msg.acceptor for b, a, _ in state.votes):
        return state, None
    state = replace(state, votes=state.votes | {(msg.ballot, msg.acceptor, msg.value)})
    if state.count(msg.ballot, msg.value) < quorum_size(n):
        return state, None
    if state.decided_ballot is None:
        return replace(state, decided=msg.value, decided_ballot=msg.ballot), msg.value
    if state.decided != msg.value:
        raise InvariantViolation(
            f"conflicting decision: {state.decided!r} at {state.decided_ballot} "
            f"then {msg.value!r} at {msg.ballot}"
        )
    return state, None


# -- snapshots ----------------------------------------------------------------

@dataclass(frozen=True)
class SnapshotRecord:
    round_number: int
    value: Any


class SnapshotStore:
    """In-memory change-point log; entries are mirrored into the trace by the host."""

    def __init__(self):
        self.records: list[SnapshotRecord] = []

    def __len__(self):
        return len(self.records)


def px_snapshot(store: SnapshotStore, record: SnapshotRecord) -> SnapshotRecord:
    store.records.append(record)
    return record


def px_revert(store: SnapshotStore) -> SnapshotRecord:
    if not store.records:
        raise ProtocolError("no snapshot to revert to")
    return store.records[-1]


def learner_from_snapshot(record: SnapshotRecord, pid: int = 0) -> LearnerState:
    return LearnerState(decided=record.value, decided_ballot=Ballot(record.round_number, pid))


# -- simulator host -------------------------------------------------------------

@dataclass(frozen=True)
class PaxosParams:
    proposers: tuple[int, ...] = (0,)
    # value each proposer's client submits; defaults to "v<pid>"
    values: dict[int, Any] = field(default_factory=dict)
    start_at: dict[int, int] = field(default_factory=dict)
    retry_timeout: int = 20
    backoff_max: int = 10
    snapshot: bool = False

    def value_for(self, pid: int) -> Any:
        return self.values.get(pid, f"v{pid}")


class PaxosMachine(Machine):
    """Acceptor + learner on every process, proposer where configured."""

    def __init__(self, pid: int, n: int, params: PaxosParams = PaxosParams()):
        if any(not 0 <= p < n for p in params.proposers):
            raise ConfigError(f"proposers {params.proposers} outside 0..{n - 1}")
        self.pid = pid
        self.n = n
        self.params = params
        self.acceptor = AcceptorState(pid)
        self.learner = LearnerState()
        self.proposer = ProposerState(pid, tuple(range(n))) if pid in params.proposers else None
        self.learned: set[int] = set()
        self.store = SnapshotStore()

    def start(self, ctx):
        if self.proposer is not None:
            ctx.set_timer("propose", self.params.start_at.get(self.pid, 0))

    def _backoff(self, ctx):
        ctx.cancel_timer("retry")
        ctx.set_timer("propose", ctx.rng.randint(1, self.params.backoff_max))

    def on_timer(self, ctx, name, data):
        prop = self.proposer
        if name == "propose" and prop.phase is ProposerPhase.IDLE:
            self.proposer, out = px_propose(prop, self.params.value_for(self.pid))
            for dst, msg in out:
                ctx.send(dst, msg)
            ctx.set_timer("retry", self.params.retry_timeout)
        elif name == "retry":
            if prop.phase is ProposerPhase.PREPARED:
                self.proposer = px_abort(prop)
                self._backoff(ctx)
            elif prop.phase is ProposerPhase.ACCEPTING:
                for a in prop.acceptors:
                    ctx.send(a, Accept(prop.ballot, prop.chosen))
                ctx.set_timer("retry", self.params.retry_timeout)

    def on_message(self, ctx, src, msg):
        if isinstance(msg, Prepare):
            self.acceptor, reply = px_on_prepare(self.acceptor, msg.ballot)
            ctx.send(src, reply)
        elif isinstance(msg, Accept):
            self.acceptor, reply = px_on_accept(self.acceptor, msg.ballot, msg.value)
            if isinstance(reply, Accepted):
                ctx.broadcast(reply)
            else:
                ctx.send(src, reply)
        elif isinstance(msg, Accepted):
            self._on_accepted(ctx, msg)
        elif self.proposer is None:
            return
        elif isinstance(msg, Promise):
            self.proposer, out = px_on_promise(self.proposer, msg)
            for dst, m in out:
                ctx.send(dst, m)
        elif isinstance(msg, Nack):
            self.proposer, aborted = px_on_nack(self.proposer, msg)
            if aborted:
                self._backoff(ctx)
        elif isinstance(msg, Learned):
            self.learned.add(msg.learner)
            if len(self.learned) == self.n and self.proposer.phase is not ProposerPhase.DONE:
                self.proposer = replace(self.proposer, phase=ProposerPhase.DONE)
                ctx.cancel_timer("retry")
                ctx.cancel_timer("propose")
                ctx.note(proposer="done")

    def _on_accepted(self, ctx, msg: Accepted):
        was_decided = self.learner.decided_ballot is not None
        self.learner, decided = px_on_accepted(self.learner, msg, self.n)
        if decided is not None:
            ctx.decide(value=decided, ballot=msg.ballot)
            if self.params.snapshot:
                rec = px_snapshot(self.store, SnapshotRecord(msg.ballot.round, decided))
                ctx.note(snapshot=rec)
        elif was_decided:
            # a retransmitted accept means that proposer has not heard from us
            ctx.send(msg.ballot.pid, Learned(self.pid, self.learner.decided))


def paxos_machines(n: int, params: PaxosParams = PaxosParams()) -> list[PaxosMachine]:
    return [PaxosMachine(p, n, params) for p in range(n)]


def all_correct_decided(sim: Simulator) -> bool:
    return all(p in sim.decisions for p in sim.correct_pids())


def check_decisions(sim: Simulator, proposed: Iterable[Any]) -> dict[str, bool]:
    """Agreement, validity and integrity over the Decide records of a run."""
    proposed = list(proposed)
    per_proc = sim.decisions
    values = [d["value"] for ds in per_proc.values() for d in ds]
    return {
        "agreement": len({repr(v) for v in values}) <= 1,
        "validity": all(v in proposed for v in values),
        "integrity": all(len(ds) == 1 for ds in per_proc.values()),
    }


# -- exhaustive explorer --------------------------------------------------------

@dataclass(frozen=True)
class WorldState:
    proposer: ProposerState
    acceptors: tuple[AcceptorState, ...]
    learners: tuple[LearnerState, ...]
    inflight: frozenset[tuple[int, int, Any]]
    crashed: frozenset[int] = frozenset()
    attempts: int = 1


@dataclass
class ExploreReport:
    depth: int
    states: int = 0
    transitions: int = 0
    decided_states: int = 0
    violations: list[str] = field(default_factory=list)


def _check_world(w: WorldState, proposed: Sequence[Any]) -> list[str]:
    problems = []
    decided = {l.decided for l in w.learners if l.decided_ballot is not None}
    if len(decided) > 1:
        problems.append(f"agreement broken: {sorted(map(repr, decided))}")
    bad = [v for v in decided if v not in proposed]
    if bad:
        problems.append(f"validity broken: {bad!r} never proposed")
    return problems


def _apply_delivery(w: WorldState, item: tuple[int, int, Any], consume: bool) -> WorldState:
    src, dst, msg = item
    inflight = w.inflight - {item} if consume else w.inflight
    if dst in w.crashed:
        return replace(w, inflight=inflight)
    out: list[tuple[int, Any]] = []
    acceptors, learners, prop = list(w.acceptors), list(w.learners), w.proposer
    n = len(acceptors)
    if isinstance(msg, Prepare):
        acceptors[dst], reply = px_on_prepare(acceptors[dst], msg.ballot)
        out.append((src, reply))
    elif isinstance(msg, Accept):
        acceptors[dst], reply = px_on_accept(acceptors[dst], msg.ballot, msg.value)
        if isinstance(reply, Accepted):
            out.extend((l, reply) for l in range(n))
        else:
            out.append((src, reply))
    elif isinstance(msg, Accepted):
        before = learners[dst].decided_ballot, learners[dst].decided
        learners[dst], _ = px_on_accepted(learners[dst], msg, n)
        if before[0] is not None and learners[dst].decided != before[1]:
            raise InvariantViolation(f"learner {dst} changed its decision")
    elif isinstance(msg, Promise):
        prop, sends = px_on_promise(prop, msg)
        out.extend(sends)
    elif isinstance(msg, Nack):
        prop, _ = px_on_nack(prop, msg)
    sender = dst
    new = frozenset((sender, d, m) for d, m in out)
    return replace(w, proposer=prop, acceptors=tuple(acceptors), learners=tuple(learners),
                   inflight=inflight | new)


def _successors(w: WorldState, values: Sequence[Any], max_crashes: int, duplicates: bool):
    for item in sorted(w.inflight, key=repr):
        yield f"deliver {item!r}", _apply_delivery(w, item, consume=True)
        if duplicates and item[1] not in w.crashed:
            yield f"redeliver {item!r}", _apply_delivery(w, item, consume=False)
    if len(w.crashed) < max_crashes:
        for p in range(len(w.acceptors)):
            if p not in w.crashed:
                yield f"crash {p}", replace(w, crashed=w.crashed | {p})
    prop = w.proposer
    if prop.pid not in w.crashed and w.attempts < len(values) and prop.phase is not ProposerPhase.DONE:
        aborted = px_abort(prop) if prop.phase is not ProposerPhase.IDLE else prop
        new_prop, out = px_propose(aborted, values[w.attempts])
        new = frozenset((prop.pid, d, m) for d, m in out)
        yield "retry", replace(w, proposer=new_prop, inflight=w.inflight | new,
                               attempts=w.attempts + 1)


def explore(n: int = 3, depth: int = 8, max_crashes: int = 1,
            values: Sequence[Any] = ("v1", "v2", "v3"), duplicates: bool = False) -> ExploreReport:
    """Enumerate every schedule of ``depth`` actions from a fresh proposal.

    Actions are: deliver any in-flight message, crash a process (up to
    ``max_crashes``), or let the proposer time out and retry with the next
    client value; with ``duplicates`` a message may also be delivered while
    staying in flight. Agreement, validity and integrity are checked in every
    reachable state. States already explored with at least as much remaining
    depth are pruned.
    """
    prop0 = ProposerState(0, tuple(range(n)))
    prop, out = px_propose(prop0, values[0])
    start = WorldState(
        proposer=prop,
        acceptors=tuple(AcceptorState(p) for p in range(n)),
        learners=tuple(LearnerState() for _ in range(n)),
        inflight=frozenset((0, d, m) for d, m in out),
    )
    report = ExploreReport(depth=depth)
    seen: dict[WorldState, int] = {}
    stack = [(start, depth)]
    while stack:
        w, remaining = stack.pop()
        if seen.get(w, -1) >= remaining:
            continue
        if w not in seen:
            report.states += 1
            if any(l.decided_ballot is not None for l in w.learners):
                report.decided_states += 1
            report.violations.extend(_check_world(w, values))
        seen[w] = remaining
        if remaining == 0:
            continue
        try:
            succ = list(_successors(w, values, max_crashes, duplicates))
        except InvariantViolation as exc:
            report.violations.append(str(exc))
            continue
        for _, nxt in succ:
            report.transitions += 1
            stack.append((nxt, remaining - 1))
    return report
