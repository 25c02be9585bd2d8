"""Sequence Paxos replicated log and its leader-election composition.

One single-decree Paxos instance runs per log slot. The elected leader is the
only proposer, uses its election ballot as the Paxos ballot for every slot,
and submits slot ``i + 1`` only after its own learner has decided slot ``i``.
Learners buffer out-of-order slot decisions and append them contiguously, so
every replica's log is a prefix of the longest one at all times.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Literal, Sequence

from protolab.election import Ballot, ElectionConfig, LeaderElection, quorum_size
from protolab.errors import ConfigError, InvariantViolation, ProtocolError
from protolab.fdetect import DetectorConfig, FailureDetector
from protolab.paxos import (
    Accept, Accepted, AcceptorState, LearnerState, Nack, Prepare, Promise,
    ProposerPhase, ProposerState, px_on_accept, px_on_accepted, px_on_nack,
    px_on_prepare, px_on_promise, px_propose,
)
from protolab.simnet import Context, Machine, SimConfig, Simulator, TraceRecord


@dataclass(frozen=True)
class ReplicatedLog:
    entries: tuple = ()

    @property
    def decided_upto(self) -> int:
        return len(self.entries)

    def __len__(self):
        return len(self.entries)


def seq_append_decided(log: ReplicatedLog, slot: int, value: Any) -> ReplicatedLog:
    if slot != log.decided_upto:
        raise ProtocolError(
            f"slot {slot} is not the next contiguous slot ({log.decided_upto})"
        )
    return ReplicatedLog(log.entries + (value,))


def prefix_check(logs: Iterable[ReplicatedLog | Sequence[Any]]) -> bool:
    """True iff every pair of logs is prefix-comparable."""
    seqs = [tuple(l.entries) if isinstance(l, ReplicatedLog) else tuple(l) for l in logs]
    if not seqs:
        return True
    longest = max(seqs, key=len)
    return all(s == longest[: len(s)] for s in seqs)


def seq_submit(values: Sequence[Any], decided_upto: int) -> tuple[int, Any] | None:
    """Next ``(slot, value)`` a client submits once slots ``< decided_upto`` are confirmed."""
    if decided_upto >= len(values):
        return None
    return decided_upto, values[decided_upto]


class RaftRole(str, enum.Enum):
    LEADER = "Leader"
    ACCEPTOR = "Acceptor"
    LEARNER = "Learner"


RoleRule = Literal["Alg1", "Alg2"]


def raft_assign_roles(rank: int, leader: int, n: int, rule: RoleRule) -> RaftRole:
    if not 0 <= leader < n:
        raise ConfigError(f"leader {leader} outside 0..{n - 1}")
    if rank == leader:
        return RaftRole.LEADER
    if rule == "Alg1":
        return RaftRole.ACCEPTOR if rank % 2 == 0 else RaftRole.LEARNER
    if rule == "Alg2":
        return RaftRole.LEARNER if rank == (leader + 1) % n else RaftRole.ACCEPTOR
    raise ConfigError(f"unknown role rule {rule!r}")


def acceptor_set(n: int, grouping: str, designated_leader: int = 0) -> tuple[int, ...]:
    """Processes that vote on slots. ``all`` makes every process an acceptor."""
    if grouping == "all":
        return tuple(range(n))
    rule = {"alg1": "Alg1", "alg2": "Alg2"}.get(grouping)
    if rule is None:
        raise ConfigError(f"unknown role grouping {grouping!r}")
    accs = tuple(p for p in range(n)
                 if raft_assign_roles(p, designated_leader, n, rule) is RaftRole.ACCEPTOR)
    if not accs:
        raise ConfigError(f"grouping {grouping!r} leaves no acceptors for n={n}")
    return accs


@dataclass(frozen=True)
class SlotMsg:
    slot: int
    msg: Any


@dataclass(frozen=True)
class RaftParams:
    values: tuple = ()
    # None: run the election; an int pins that process as the only proposer.
    fixed_leader: int | None = None
    roles: str = "all"
    designated_leader: int = 0
    retry_timeout: int = 30
    # Crash the first leader once its log holds this many entries.
    crash_leader_after: int | None = None
    fd: DetectorConfig = DetectorConfig(heartbeat_interval=5, initial_timeout=15)
    election: ElectionConfig = ElectionConfig(jitter=10)


class RaftMachine(Machine):
    """Failure detector, election, slot acceptors/learners and (when leading) the proposer."""

    RETRY = "seq.retry"

    def __init__(self, pid: int, n: int, params: RaftParams):
        self.pid = pid
        self.n = n
        self.params = params
        self.acceptors = acceptor_set(n, params.roles, params.designated_leader)
        self.log = ReplicatedLog()
        self.pending: dict[int, Any] = {}
        self.slot_learners: dict[int, LearnerState] = {}
        self.slot_acceptors: dict[int, AcceptorState] = {}
        self.promise_floor: Ballot | None = None
        self.lead_ballot: Ballot | None = None
        self.proposal: ProposerState | None = None
        self.proposal_slot: int | None = None
        self.leaders_seen: list[int] = []
        if params.fixed_leader is None:
            self.fd = FailureDetector(pid, n, params.fd, listener=self._on_suspicion)
            self.election = LeaderElection(pid, n, self.fd, params.election,
                                           on_leader=self._on_leader)
        else:
            self.fd = self.election = None

    # -- wiring -------------------------------------------------------------

    def start(self, ctx):
        if self.election is None:
            self._on_leader(ctx, self.params.fixed_leader, Ballot(1, self.params.fixed_leader))
            return
        self.fd.start(ctx)
        self.election.start(ctx)

    def _on_suspicion(self, ctx, peer, suspected):
        self.election.on_suspicion(ctx, peer, suspected)

    def on_timer(self, ctx, name, data):
        if name == self.RETRY:
            self._retry(ctx)
        elif self.fd is not None:
            self.fd.handle_timer(ctx, name) or self.election.handle_timer(ctx, name)

    def on_message(self, ctx, src, msg):
        if isinstance(msg, SlotMsg):
            self._on_slot(ctx, src, msg.slot, msg.msg)
        elif self.fd is not None:
            self.fd.handle_message(ctx, src, msg) or self.election.handle_message(ctx, src, msg)

    # -- leadership -----------------------------------------------------------

    def _on_leader(self, ctx, leader, ballot):
        self.leaders_seen.append(leader)
        if leader == self.pid:
            self.lead_ballot = ballot
            self.proposal = ProposerState(self.pid, self.acceptors)
            self.proposal_slot = None
            self._propose_next(ctx)
        else:
            self.lead_ballot = None
            self.proposal = None
            ctx.cancel_timer(self.RETRY)

    def _propose_next(self, ctx):
        if self.lead_ballot is None:
            return
        nxt = seq_submit(self.params.values, self.log.decided_upto)
        if nxt is None or nxt[0] == self.proposal_slot:
            return
        slot, value = nxt
        fresh = ProposerState(self.pid, self.acceptors)
        self.proposal, out = px_propose(fresh, value, ballot=self.lead_ballot)
        self.proposal_slot = slot
        for dst, m in out:
            ctx.send(dst, SlotMsg(slot, m))
        ctx.set_timer(self.RETRY, self.params.retry_timeout)

    def _retry(self, ctx):
        prop, slot = self.proposal, self.proposal_slot
        if self.lead_ballot is None or prop is None or slot is None or slot < self.log.decided_upto:
            return
        if prop.phase is ProposerPhase.PREPARED:
            answered = {p.acceptor for p in prop.promises}
            for a in prop.acceptors:
                if a not in answered:
                    ctx.send(a, SlotMsg(slot, Prepare(prop.ballot)))
        elif prop.phase is ProposerPhase.ACCEPTING:
            for a in prop.acceptors:
                ctx.send(a, SlotMsg(slot, Accept(prop.ballot, prop.chosen)))
        ctx.set_timer(self.RETRY, self.params.retry_timeout)

    # -- per-slot Paxos -------------------------------------------------------

    def _acceptor_for(self, slot: int) -> AcceptorState:
        st = self.slot_acceptors.get(slot, AcceptorState(self.pid))
        if self.promise_floor is not None and (st.promised is None or st.promised < self.promise_floor):
            st = replace(st, promised=self.promise_floor)
        return st

    def _raise_floor(self, ballot: Ballot):
        if self.promise_floor is None or ballot > self.promise_floor:
            self.promise_floor = ballot

    def _on_slot(self, ctx, src, slot, msg):
        if isinstance(msg, Prepare) and self.pid in self.acceptors:
            st = self._acceptor_for(slot)
            if st.promised == msg.ballot:
                # retransmitted prepare for the ballot we already promised
                reply = Promise(self.pid, msg.ballot, st.accepted)
            else:
                st, reply = px_on_prepare(st, msg.ballot)
                if isinstance(reply, Promise):
                    self._raise_floor(msg.ballot)
            self.slot_acceptors[slot] = st
            ctx.send(src, SlotMsg(slot, reply))
        elif isinstance(msg, Accept) and self.pid in self.acceptors:
            st, reply = px_on_accept(self._acceptor_for(slot), msg.ballot, msg.value)
            self.slot_acceptors[slot] = st
            if isinstance(reply, Accepted):
                self._raise_floor(msg.ballot)
                ctx.broadcast(SlotMsg(slot, reply))
            else:
                ctx.send(src, SlotMsg(slot, reply))
        elif isinstance(msg, Accepted):
            self._learn(ctx, slot, msg)
        elif slot != self.proposal_slot or self.proposal is None:
            return
        elif isinstance(msg, Promise):
            self.proposal, out = px_on_promise(self.proposal, msg)
            for dst, m in out:
                ctx.send(dst, SlotMsg(slot, m))
        elif isinstance(msg, Nack):
            self.proposal, aborted = px_on_nack(self.proposal, msg)
            if aborted:
                # a newer leader exists; wait for the election to tell us who
                ctx.note(seq="fenced", slot=slot, by=msg.promised)
                self.lead_ballot = None
                ctx.cancel_timer(self.RETRY)

    def _learn(self, ctx, slot, msg: Accepted):
        learner = self.slot_learners.get(slot, LearnerState())
        learner, decided = px_on_accepted(learner, msg, len(self.acceptors))
        self.slot_learners[slot] = learner
        if decided is None or slot < self.log.decided_upto:
            return
        self.pending[slot] = decided
        while self.log.decided_upto in self.pending:
            at = self.log.decided_upto
            value = self.pending.pop(at)
            self.log = seq_append_decided(self.log, at, value)
            ctx.decide(slot=at, value=value)
        if (self.params.crash_leader_after is not None
                and self.lead_ballot is not None
                and self.leaders_seen == [self.pid]
                and self.log.decided_upto >= self.params.crash_leader_after):
            ctx.note(seq="injected leader crash", log_length=self.log.decided_upto)
            ctx.crash()
            return
        self._propose_next(ctx)


def raft_machines(n: int, params: RaftParams) -> list[RaftMachine]:
    return [RaftMachine(p, n, params) for p in range(n)]


def logs_of(sim: Simulator) -> list[ReplicatedLog]:
    return [m.log for m in sim.machines]


def prefix_observer(rec: TraceRecord, sim: Simulator) -> None:
    """Run-until observer asserting the prefix invariant after every step."""
    if not prefix_check(logs_of(sim)):
        raise InvariantViolation(
            "prefix invariant broken: " + "; ".join(repr(l.entries) for l in logs_of(sim))
        )


def logs_complete(sim: Simulator) -> bool:
    want = len(sim.machines[0].params.values)
    return all(sim.machines[p].log.decided_upto == want for p in sim.correct_pids())


def raft_run(config: SimConfig, params: RaftParams, max_steps: int = 50_000):
    """Run the composition to completion. Returns ``(simulator, outcome)``."""
    sim = Simulator(config, raft_machines(config.n_processes, params))
    outcome = sim.run_until(logs_complete, max_steps, observer=prefix_observer)
    return sim, outcome
