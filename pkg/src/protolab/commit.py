"""Two-phase and three-phase atomic commit.

Process 0 coordinates one transaction; processes ``1..P`` participate. The
pure transition functions below carry one state fragment per process; the
machines wire them into the simulator.

3PC adds a termination protocol for a silent coordinator: participants run
the failure detector and the election with the coordinator as the initial
leader. Once the coordinator is suspected a surrogate is elected, gathers
every reachable participant's phase and decides by a fixed priority: any
Committed or PreCommitted means commit, any Aborted means abort, otherwise
abort.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Literal, Mapping

from protolab.election import Ballot, ElectionConfig, LeaderElection
from protolab.errors import ConfigError, InvariantViolation, ProtocolError
from protolab.fdetect import DetectorConfig, FailureDetector
from protolab.simnet import Context, Machine, SimConfig, Simulator

COORDINATOR = 0


class CoordPhase(str, enum.Enum):
    INIT = "Init"
    VOTING = "Voting"
    PRE_COMMITTED = "PreCommitted"
    COMMITTED = "Committed"
    ABORTED = "Aborted"


class PartPhase(str, enum.Enum):
    WORKING = "Working"
    PREPARED = "Prepared"
    PRE_COMMITTED = "PreCommitted"
    COMMITTED = "Committed"
    ABORTED = "Aborted"

    @property
    def terminal(self) -> bool:
        return self in (PartPhase.COMMITTED, PartPhase.ABORTED)


class VoteValue(str, enum.Enum):
    YES = "Yes"
    NO = "No"
    MISSING = "Missing"


class Command(str, enum.Enum):
    DO_COMMIT = "doCommit"
    DO_ABORT = "doAbort"


# -- messages ---------------------------------------------------------------

@dataclass(frozen=True)
class CanCommit:
    tx: int


@dataclass(frozen=True)
class CanPreCommit:
    tx: int


@dataclass(frozen=True)
class VoteReply:
    tx: int
    participant: int
    vote: VoteValue


@dataclass(frozen=True)
class DoPreCommit:
    tx: int


@dataclass(frozen=True)
class Ack:
    tx: int
    participant: int


@dataclass(frozen=True)
class DoCommit:
    tx: int


@dataclass(frozen=True)
class DoAbort:
    tx: int


@dataclass(frozen=True)
class HaveCommitted:
    tx: int
    participant: int


@dataclass(frozen=True)
class StateReq:
    tx: int
    ballot: Ballot


@dataclass(frozen=True)
class StateReply:
    tx: int
    participant: int
    ballot: Ballot
    phase: PartPhase


# -- state fragments --------------------------------------------------------

@dataclass(frozen=True)
class CoordinatorState:
    tx_id: int = 1
    phase: CoordPhase = CoordPhase.INIT
    participants: tuple[int, ...] = ()
    votes: Mapping[int, VoteValue] = field(default_factory=dict)
    acks: frozenset[int] = frozenset()
    vote_timeout: int = 0
    three_phase: bool = False


@dataclass(frozen=True)
class ParticipantState:
    pid: int
    tx_id: int = 1
    phase: PartPhase = PartPhase.WORKING
    vote: VoteValue | None = None


@dataclass(frozen=True)
class TxState:
    """Whole-transaction view assembled from every process's fragment."""

    tx_id: int
    coordinator_phase: CoordPhase
    participant_phase: dict[int, PartPhase]
    votes: dict[int, VoteValue]


def tpc_begin(coord: CoordinatorState, participants: Iterable[int], vote_timeout: int,
              three_phase: bool = False):
    """Open voting. Returns ``(state, outbox)``; the host arms the vote timer."""
    if coord.phase is not CoordPhase.INIT:
        raise ProtocolError(f"transaction {coord.tx_id} already begun ({coord.phase.value})")
    parts = tuple(sorted(set(participants)))
    if not parts:
        raise ConfigError("a transaction needs at least one participant")
    if vote_timeout < 1:
        raise ConfigError("vote_timeout must be >= 1")
    coord = replace(coord, phase=CoordPhase.VOTING, participants=parts, votes={},
                    vote_timeout=vote_timeout, three_phase=three_phase)
    msg = CanPreCommit(coord.tx_id) if three_phase else CanCommit(coord.tx_id)
    return coord, [(p, msg) for p in parts]


def tpc_record_vote(coord: CoordinatorState, participant: int, vote: VoteValue) -> CoordinatorState:
    if participant not in coord.participants:
        raise ProtocolError(f"vote from non-participant {participant}")
    if coord.phase is not CoordPhase.VOTING:
        return coord
    votes = dict(coord.votes)
    votes[participant] = VoteValue(vote)
    return replace(coord, votes=votes)


def tpc_all_voted(coord: CoordinatorState) -> bool:
    return set(coord.votes) >= set(coord.participants)


def tpc_collect(coord: CoordinatorState, votes: Mapping[int, VoteValue] | None = None):
    """Decide on the collected votes; absent entries count as Missing.

    2PC answers with doCommit or doAbort. 3PC answers an all-Yes vote with
    doPreCommit and moves to PreCommitted.
    """
    if coord.phase is not CoordPhase.VOTING:
        raise ProtocolError(f"collect outside voting ({coord.phase.value})")
    votes = dict(coord.votes if votes is None else votes)
    full = {p: VoteValue(votes.get(p, VoteValue.MISSING)) for p in coord.participants}
    coord = replace(coord, votes=full)
    tx = coord.tx_id
    if all(v is VoteValue.YES for v in full.values()):
        if coord.three_phase:
            coord = replace(coord, phase=CoordPhase.PRE_COMMITTED, acks=frozenset())
            return coord, [(p, DoPreCommit(tx)) for p in coord.participants]
        coord = replace(coord, phase=CoordPhase.COMMITTED)
        return coord, [(p, DoCommit(tx)) for p in coord.participants]
    coord = replace(coord, phase=CoordPhase.ABORTED)
    return coord, [(p, DoAbort(tx)) for p in coord.participants]


def tpc_record_ack(coord: CoordinatorState, participant: int) -> CoordinatorState:
    if participant not in coord.participants:
        raise ProtocolError(f"ack from non-participant {participant}")
    if coord.phase is not CoordPhase.PRE_COMMITTED:
        return coord
    return replace(coord, acks=coord.acks | {participant})


def three_pc_collect_acks(coord: CoordinatorState, acks: Iterable[int] | None = None):
    """Second 3PC gate: every ACK present commits, anything missing aborts."""
    if coord.phase is not CoordPhase.PRE_COMMITTED:
        raise ProtocolError(f"ack collection outside PreCommitted ({coord.phase.value})")
    got = frozenset(coord.acks if acks is None else acks)
    tx = coord.tx_id
    if got >= set(coord.participants):
        coord = replace(coord, phase=CoordPhase.COMMITTED, acks=got)
        return coord, [(p, DoCommit(tx)) for p in coord.participants]
    coord = replace(coord, phase=CoordPhase.ABORTED, acks=got)
    return coord, [(p, DoAbort(tx)) for p in coord.participants]


def _check_tx(part: ParticipantState, tx_id: int) -> None:
    if tx_id != part.tx_id:
        raise ProtocolError(f"participant {part.pid} got tx {tx_id}, expected {part.tx_id}")


def tpc_vote(part: ParticipantState, tx_id: int, decision: VoteValue | str):
    """Cast a vote. Returns ``(state, reply)``; ``reply`` is None when ignored."""
    _check_tx(part, tx_id)
    decision = VoteValue(decision)
    if decision is VoteValue.MISSING:
        raise ProtocolError("a participant cannot vote Missing")
    if part.phase is PartPhase.WORKING:
        phase = PartPhase.PREPARED if decision is VoteValue.YES else PartPhase.ABORTED
        part = replace(part, phase=phase, vote=decision)
        return part, VoteReply(tx_id, part.pid, decision)
    if part.phase is PartPhase.PREPARED and part.vote is decision:
        # duplicate request: repeat the binding vote
        return part, VoteReply(tx_id, part.pid, decision)
    return part, None


def tpc_precommit(part: ParticipantState, tx_id: int):
    """Handle doPreCommit. Returns ``(state, ack)``."""
    _check_tx(part, tx_id)
    if part.phase in (PartPhase.PREPARED, PartPhase.PRE_COMMITTED):
        part = replace(part, phase=PartPhase.PRE_COMMITTED)
        return part, Ack(tx_id, part.pid)
    if part.phase is PartPhase.WORKING:
        raise InvariantViolation(f"participant {part.pid} got doPreCommit before voting")
    return part, None


def tpc_finalize(part: ParticipantState, command: Command | str | DoCommit | DoAbort):
    """Apply doCommit/doAbort. Returns ``(state, reply)``; reply is haveCommitted or None."""
    if isinstance(command, DoCommit):
        _check_tx(part, command.tx)
        command = Command.DO_COMMIT
    elif isinstance(command, DoAbort):
        _check_tx(part, command.tx)
        command = Command.DO_ABORT
    command = Command(command)
    ph = part.phase
    if command is Command.DO_COMMIT:
        if ph is PartPhase.COMMITTED:
            return part, None
        if ph is PartPhase.WORKING:
            raise InvariantViolation(f"participant {part.pid} got doCommit while Working")
        if ph is PartPhase.ABORTED:
            raise InvariantViolation(f"participant {part.pid} got doCommit after aborting")
        part = replace(part, phase=PartPhase.COMMITTED)
        return part, HaveCommitted(part.tx_id, part.pid)
    if ph is PartPhase.ABORTED:
        return part, None
    if ph is PartPhase.COMMITTED:
        raise InvariantViolation(f"participant {part.pid} got doAbort after committing")
    return replace(part, phase=PartPhase.ABORTED), None


def termination_decision(phases: Iterable[PartPhase]) -> Command:
    """Surrogate rule for a silent 3PC coordinator."""
    seen = {PartPhase(p) for p in phases}
    if PartPhase.COMMITTED in seen:
        return Command.DO_COMMIT
    if PartPhase.ABORTED in seen:
        return Command.DO_ABORT
    if PartPhase.PRE_COMMITTED in seen:
        return Command.DO_COMMIT
    return Command.DO_ABORT


# -- machines ---------------------------------------------------------------

CrashPoint = Literal["none", "before_votes", "after_votes", "after_decision"]
CRASH_POINTS: tuple[str, ...] = ("none", "before_votes", "after_votes", "after_decision")


@dataclass(frozen=True)
class CommitParams:
    protocol: Literal["2pc", "3pc"] = "2pc"
    # one vote per participant; shorter tuples are padded with Yes
    votes: tuple[VoteValue, ...] = ()
    coordinator_crash: CrashPoint = "none"
    # participants that crash on doPreCommit instead of acknowledging
    ack_crash: tuple[int, ...] = ()
    # None means ten times the channel's maximum delay
    vote_timeout: int | None = None
    fd: DetectorConfig = DetectorConfig(heartbeat_interval=5, initial_timeout=15)
    election: ElectionConfig = ElectionConfig()
    tx_id: int = 1

    def __post_init__(self):
        if self.protocol not in ("2pc", "3pc"):
            raise ConfigError(f"unknown commit protocol {self.protocol!r}")
        if self.coordinator_crash not in CRASH_POINTS:
            raise ConfigError(f"unknown crash point {self.coordinator_crash!r}")
        object.__setattr__(self, "votes", tuple(VoteValue(v) for v in self.votes))

    @property
    def three_phase(self) -> bool:
        return self.protocol == "3pc"

    def vote_of(self, pid: int) -> VoteValue:
        i = pid - 1
        return self.votes[i] if i < len(self.votes) else VoteValue.YES


class _CommitProcess(Machine):
    def __init__(self, pid: int, n: int, params: CommitParams):
        self.pid = pid
        self.n = n
        self.params = params
        if params.three_phase:
            self.fd = FailureDetector(pid, n, params.fd, listener=self._on_suspicion)
            self.election = LeaderElection(pid, n, self.fd, params.election,
                                           eligible=pid != COORDINATOR,
                                           on_leader=self._on_leader,
                                           initial_leader=COORDINATOR)
        else:
            self.fd = self.election = None

    def start(self, ctx):
        if self.fd is not None:
            self.fd.start(ctx)
            self.election.start(ctx)

    def _on_suspicion(self, ctx, peer, suspected):
        self.election.on_suspicion(ctx, peer, suspected)

    def _on_leader(self, ctx, leader, ballot):
        pass

    def _components(self, ctx, src, msg) -> bool:
        return self.fd is not None and (
            self.fd.handle_message(ctx, src, msg) or self.election.handle_message(ctx, src, msg)
        )

    def on_timer(self, ctx, name, data):
        if self.fd is not None:
            self.fd.handle_timer(ctx, name) or self.election.handle_timer(ctx, name)


class CoordinatorMachine(_CommitProcess):
    VOTE_TIMER = "tpc.vote"
    ACK_TIMER = "tpc.ack"

    def __init__(self, n: int, params: CommitParams, vote_timeout: int):
        super().__init__(COORDINATOR, n, params)
        self.state = CoordinatorState(tx_id=params.tx_id)
        self.vote_timeout = vote_timeout

    def start(self, ctx):
        super().start(ctx)
        self.state, out = tpc_begin(self.state, range(1, self.n), self.vote_timeout,
                                    three_phase=self.params.three_phase)
        self._send(ctx, out)
        ctx.set_timer(self.VOTE_TIMER, self.vote_timeout)
        if self.params.coordinator_crash == "before_votes":
            ctx.note(tpc="injected coordinator crash", point="before_votes")
            ctx.crash()

    def _send(self, ctx, out):
        for dst, m in out:
            ctx.send(dst, m)

    def _collect(self, ctx):
        if self.params.coordinator_crash == "after_votes":
            ctx.note(tpc="injected coordinator crash", point="after_votes")
            ctx.crash()
            return
        ctx.cancel_timer(self.VOTE_TIMER)
        self.state, out = tpc_collect(self.state)
        self._send(ctx, out)
        if self.state.phase is CoordPhase.PRE_COMMITTED:
            ctx.set_timer(self.ACK_TIMER, self.vote_timeout)
        else:
            ctx.decide(tx=self.state.tx_id, outcome=self.state.phase.value, role="coordinator")
        if self.params.coordinator_crash == "after_decision":
            ctx.note(tpc="injected coordinator crash", point="after_decision")
            ctx.crash()

    def _finish_acks(self, ctx):
        ctx.cancel_timer(self.ACK_TIMER)
        self.state, out = three_pc_collect_acks(self.state)
        self._send(ctx, out)
        ctx.decide(tx=self.state.tx_id, outcome=self.state.phase.value, role="coordinator")

    def on_timer(self, ctx, name, data):
        if name == self.VOTE_TIMER:
            if self.state.phase is CoordPhase.VOTING:
                self._collect(ctx)
        elif name == self.ACK_TIMER:
            if self.state.phase is CoordPhase.PRE_COMMITTED:
                self._finish_acks(ctx)
        else:
            super().on_timer(ctx, name, data)

    def on_message(self, ctx, src, msg):
        if isinstance(msg, VoteReply):
            self.state = tpc_record_vote(self.state, msg.participant, msg.vote)
            if self.state.phase is CoordPhase.VOTING and tpc_all_voted(self.state):
                self._collect(ctx)
        elif isinstance(msg, Ack):
            self.state = tpc_record_ack(self.state, msg.participant)
            if self.state.phase is CoordPhase.PRE_COMMITTED and self.state.acks >= set(self.state.participants):
                self._finish_acks(ctx)
        elif isinstance(msg, HaveCommitted):
            # nothing to garbage-collect in a simulation; the trace is the record
            ctx.note(tpc="haveCommitted", participant=msg.participant)
        else:
            self._components(ctx, src, msg)


class ParticipantMachine(_CommitProcess):
    def __init__(self, pid: int, n: int, params: CommitParams):
        super().__init__(pid, n, params)
        self.state = ParticipantState(pid, tx_id=params.tx_id)
        self.participants = tuple(range(1, n))
        self.surrogate_ballot: Ballot | None = None
        self.replies: dict[int, PartPhase] = {}
        self.surrogate_done = False

    def _apply(self, ctx, command):
        before = self.state.phase
        self.state, reply = tpc_finalize(self.state, command)
        if reply is not None:
            ctx.send(COORDINATOR, reply)
        if self.state.phase is not before:
            ctx.decide(tx=self.state.tx_id, outcome=self.state.phase.value)

    def on_message(self, ctx, src, msg):
        if isinstance(msg, (CanCommit, CanPreCommit)):
            before = self.state.phase
            self.state, reply = tpc_vote(self.state, msg.tx, self.params.vote_of(self.pid))
            if reply is not None:
                ctx.send(src, reply)
            if self.state.phase is PartPhase.ABORTED and before is not PartPhase.ABORTED:
                ctx.decide(tx=self.state.tx_id, outcome=self.state.phase.value)
        elif isinstance(msg, DoPreCommit):
            if self.pid in self.params.ack_crash and self.state.phase is PartPhase.PREPARED:
                ctx.note(tpc="injected participant crash", point="before_ack")
                ctx.crash()
                return
            self.state, ack = tpc_precommit(self.state, msg.tx)
            if ack is not None:
                ctx.send(src, ack)
        elif isinstance(msg, (DoCommit, DoAbort)):
            self._apply(ctx, msg)
        elif isinstance(msg, StateReq):
            ctx.send(src, StateReply(msg.tx, self.pid, msg.ballot, self.state.phase))
        elif isinstance(msg, StateReply):
            if msg.ballot == self.surrogate_ballot and not self.surrogate_done:
                self.replies[msg.participant] = msg.phase
                self._try_terminate(ctx)
        else:
            self._components(ctx, src, msg)

    # -- termination protocol (3PC only) --------------------------------------

    def _on_leader(self, ctx, leader, ballot):
        if leader != self.pid:
            self.surrogate_ballot = None
            return
        self.surrogate_ballot = ballot
        self.replies = {}
        self.surrogate_done = False
        ctx.note(tpc="surrogate", ballot=ballot)
        for p in self.participants:
            ctx.send(p, StateReq(self.state.tx_id, ballot))

    def _on_suspicion(self, ctx, peer, suspected):
        super()._on_suspicion(ctx, peer, suspected)
        if suspected and self.surrogate_ballot is not None:
            self._try_terminate(ctx)

    def _try_terminate(self, ctx):
        if self.surrogate_done:
            return
        reachable = [p for p in self.participants if not self.fd.is_suspected(p)]
        if not set(reachable) <= set(self.replies):
            return
        command = termination_decision(self.replies.values())
        self.surrogate_done = True
        ctx.note(tpc="termination", command=command.value,
                 phases={p: ph.value for p, ph in sorted(self.replies.items())})
        msg = DoCommit(self.state.tx_id) if command is Command.DO_COMMIT else DoAbort(self.state.tx_id)
        for p in self.participants:
            ctx.send(p, msg)


def commit_machines(n: int, params: CommitParams, max_delay: int = 1) -> list[Machine]:
    if n < 2:
        raise ConfigError("atomic commit needs a coordinator and at least one participant")
    timeout = params.vote_timeout if params.vote_timeout is not None else 10 * max_delay
    return [CoordinatorMachine(n, params, timeout)] + [
        ParticipantMachine(p, n, params) for p in range(1, n)
    ]


def participants_terminal(sim: Simulator) -> bool:
    return all(sim.machines[p].state.phase.terminal for p in sim.correct_pids() if p != COORDINATOR)


def tx_state(sim: Simulator) -> TxState:
    coord = sim.machines[COORDINATOR].state
    return TxState(
        tx_id=coord.tx_id,
        coordinator_phase=coord.phase,
        participant_phase={m.pid: m.state.phase for m in sim.machines[1:]},
        votes=dict(coord.votes),
    )


def atomicity_holds(sim: Simulator) -> bool:
    """No participant committed while another aborted."""
    terminal = {m.state.phase for m in sim.machines[1:] if m.state.phase.terminal}
    return len(terminal) <= 1


def commit_run(config: SimConfig, params: CommitParams, max_steps: int = 20_000):
    """Run one transaction. Returns ``(simulator, outcome)``."""
    machines = commit_machines(config.n_processes, params, config.channel.max_delay)
    sim = Simulator(config, machines)
    outcome = sim.run_until(participants_terminal, max_steps)
    return sim, outcome


def two_pc_round(n_participants: int = 3, votes: Iterable[VoteValue | str] = (),
                 crash_point: CrashPoint = "none", seed: int = 0, max_steps: int = 20_000):
    config = SimConfig(n_processes=n_participants + 1, seed=seed)
    params = CommitParams("2pc", tuple(votes), crash_point)
    return commit_run(config, params, max_steps)


def three_pc_round(n_participants: int = 3, votes: Iterable[VoteValue | str] = (),
                   crash_point: CrashPoint = "none", ack_crash: Iterable[int] = (),
                   seed: int = 0, max_steps: int = 20_000):
    config = SimConfig(n_processes=n_participants + 1, seed=seed)
    params = CommitParams("3pc", tuple(votes), crash_point, tuple(ack_crash))
    return commit_run(config, params, max_steps)
