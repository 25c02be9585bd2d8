"""Ballot-based leader election driven by the failure detector.

A process whose leader is missing or suspected waits out a candidacy timer;
if no other election traffic showed up meanwhile it broadcasts a fresh ballot.
Every process answers a candidacy with a vote carrying the highest ballot it
knows of. Once a candidate holds votes from a majority *and* from every
process it does not suspect, it announces the owner of the highest ballot it
learned about. Because a racing candidate always votes with its own (higher)
ballot, the maximum ballot wins the race.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Any, Callable, Iterable, NamedTuple

from protolab.errors import ConfigError
from protolab.fdetect import DetectorConfig, FailureDetector
from protolab.simnet import Context, Machine


class Ballot(NamedTuple):
    """Proposal identifier; tuple comparison gives the (round, pid) order."""

    round: int
    pid: int


def quorum_size(n: int) -> int:
    """Strict majority of ``n`` processes."""
    if n < 1:
        raise ConfigError(f"quorum of {n} processes is undefined")
    return n // 2 + 1


class Phase(str, enum.Enum):
    IDLE = "Idle"
    CANDIDATE = "Candidate"
    SETTLED = "Settled"


@dataclass(frozen=True)
class Candidacy:
    ballot: Ballot


@dataclass(frozen=True)
class Vote:
    voter: int
    ballot: Ballot  # the candidacy being answered
    highest: Ballot  # highest ballot the voter knows of


@dataclass(frozen=True)
class SetLeader:
    leader: int
    ballot: Ballot


@dataclass(frozen=True)
class ElectionState:
    owner: int
    n: int
    leader: int | None = None
    max_ballot_seen: Ballot | None = None
    promise_count: int = 0
    phase: Phase = Phase.IDLE
    round_counter: int = 0
    own_ballot: Ballot | None = None
    voters: frozenset[int] = frozenset()
    settled_ballot: Ballot | None = None

    def highest_known(self) -> Ballot | None:
        known = [b for b in (self.max_ballot_seen, self.settled_ballot) if b is not None]
        return max(known) if known else None


def _max_ballot(a: Ballot | None, b: Ballot | None) -> Ballot | None:
    if a is None:
        return b
    if b is None:
        return a
    return max(a, b)


def el_start(state: ElectionState, now: int, leader_alive: bool = False):
    """Become a candidate with a fresh ballot unless the leader is alive."""
    if leader_alive and state.leader is not None:
        return state, []
    settled_round = state.settled_ballot.round if state.settled_ballot else 0
    seen_round = state.max_ballot_seen.round if state.max_ballot_seen else 0
    rnd = max(state.round_counter, settled_round, seen_round) + 1
    ballot = Ballot(rnd, state.owner)
    state = replace(
        state,
        phase=Phase.CANDIDATE,
        own_ballot=ballot,
        round_counter=rnd,
        max_ballot_seen=_max_ballot(state.max_ballot_seen, ballot),
        promise_count=0,
        voters=frozenset(),
    )
    return state, [(p, Candidacy(ballot)) for p in range(state.n)]


def el_observe(state: ElectionState, ballot: Ballot):
    """Voter side: remember ``ballot`` and answer with the highest one known."""
    state = replace(
        state,
        max_ballot_seen=_max_ballot(state.max_ballot_seen, ballot),
        round_counter=max(state.round_counter, ballot.round),
    )
    return state, Vote(state.owner, ballot, state.highest_known())


def el_on_ballot(state: ElectionState, ballot: Ballot, now: int = 0,
                 voter: int | None = None, alive: Iterable[int] | None = None):
    """Count one ballot response; announce the max-ballot owner at quorum.

    With ``voter`` given, repeated responses from the same voter count once.
    With ``alive`` given, the announcement also waits for a response from every
    process in ``alive``.
    """
    fresh = voter is None or voter not in state.voters
    voters = state.voters | {voter} if voter is not None else state.voters
    state = replace(
        state,
        max_ballot_seen=_max_ballot(state.max_ballot_seen, ballot),
        promise_count=state.promise_count + (1 if fresh else 0),
        voters=voters,
    )
    if state.promise_count < quorum_size(state.n):
        return state, []
    if alive is not None and not set(alive) <= state.voters:
        return state, []
    best = state.max_ballot_seen
    if state.leader == best.pid:
        return state, []
    if state.settled_ballot is not None and best < state.settled_ballot:
        return state, []
    state = replace(state, leader=best.pid)
    return state, [(p, SetLeader(best.pid, best)) for p in range(state.n)]


def el_on_set_leader(state: ElectionState, leader: int, ballot: Ballot | None = None) -> ElectionState:
    """Adopt an announced leader; announcements older than what we know are ignored."""
    if ballot is not None:
        known = state.highest_known()
        if known is not None and ballot < known:
            return state
        if state.phase is Phase.SETTLED and state.leader == leader and ballot == state.settled_ballot:
            return state
    elif state.phase is Phase.SETTLED and state.leader == leader:
        return state
    return replace(
        state,
        leader=leader,
        phase=Phase.SETTLED,
        settled_ballot=ballot if ballot is not None else state.settled_ballot,
        round_counter=max(state.round_counter, ballot.round if ballot else 0),
        promise_count=0,
        max_ballot_seen=None,
        voters=frozenset(),
        own_ballot=None,
    )


@dataclass(frozen=True)
class ElectionConfig:
    # None means four heartbeat intervals.
    candidacy_wait: int | None = None
    jitter: int = 0
    # None means twice the candidacy wait.
    retry_timeout: int | None = None

    def wait(self, fd: DetectorConfig) -> int:
        return self.candidacy_wait if self.candidacy_wait is not None else 4 * fd.heartbeat_interval

    def retry(self, fd: DetectorConfig) -> int:
        return self.retry_timeout if self.retry_timeout is not None else 2 * self.wait(fd)


LeaderListener = Callable[[Context, int, Ballot], None]


class LeaderElection:
    """Election component; the host machine forwards timers, messages and suspicions."""

    CANDIDACY = "el.candidacy"
    RETRY = "el.retry"

    def __init__(self, pid: int, n: int, fd: FailureDetector,
                 config: ElectionConfig = ElectionConfig(), eligible: bool = True,
                 on_leader: LeaderListener | None = None, initial_leader: int | None = None):
        self.state = ElectionState(owner=pid, n=n)
        if initial_leader is not None:
            self.state = replace(self.state, leader=initial_leader, phase=Phase.SETTLED)
        self.fd = fd
        self.config = config
        self.eligible = eligible
        self.on_leader = on_leader
        self._armed_at = 0
        self._last_election_msg = -1

    @property
    def leader(self) -> int | None:
        return self.state.leader

    def leader_alive(self) -> bool:
        lead = self.state.leader
        return lead is not None and (lead == self.state.owner or not self.fd.is_suspected(lead))

    def _alive(self) -> list[int]:
        return [p for p in range(self.state.n) if not self.fd.is_suspected(p)]

    def _arm(self, ctx: Context) -> None:
        if not self.eligible:
            return
        wait = self.config.wait(self.fd.config)
        if self.config.jitter:
            wait += ctx.rng.randint(0, self.config.jitter)
        self._armed_at = ctx.now
        ctx.set_timer(self.CANDIDACY, wait)

    def start(self, ctx: Context) -> None:
        if self.state.leader is None:
            self._arm(ctx)

    def on_suspicion(self, ctx: Context, peer: int, suspected: bool) -> None:
        if suspected and peer == self.state.leader:
            self._arm(ctx)
        if suspected and self.state.phase is Phase.CANDIDATE:
            self._count(ctx, None, None)

    def _count(self, ctx: Context, ballot: Ballot | None, voter: int | None) -> None:
        st = self.state
        if ballot is None:
            # re-evaluate after the alive set shrank, without a new vote
            if st.promise_count == 0:
                return
            ballot, voter = st.max_ballot_seen, next(iter(st.voters))
        self.state, outbox = el_on_ballot(st, ballot, ctx.now, voter=voter, alive=self._alive())
        for dst, msg in outbox:
            ctx.send(dst, msg)

    def handle_timer(self, ctx: Context, name: str) -> bool:
        if name == self.CANDIDACY:
            if self.leader_alive() or self.state.phase is Phase.CANDIDATE:
                return True
            if self._last_election_msg >= self._armed_at:
                self._arm(ctx)
                return True
            self._begin(ctx)
            return True
        if name == self.RETRY:
            if self.state.phase is Phase.CANDIDATE:
                self._begin(ctx)
            return True
        return False

    def _begin(self, ctx: Context) -> None:
        self.state, outbox = el_start(self.state, ctx.now, leader_alive=self.leader_alive())
        if not outbox:
            return
        ctx.note(election="candidate", ballot=self.state.own_ballot)
        for dst, msg in outbox:
            ctx.send(dst, msg)
        ctx.set_timer(self.RETRY, self.config.retry(self.fd.config))

    def handle_message(self, ctx: Context, src: int, msg: Any) -> bool:
        if isinstance(msg, Candidacy):
            self._last_election_msg = ctx.now
            self.state, vote = el_observe(self.state, msg.ballot)
            ctx.send(src, vote)
            return True
        if isinstance(msg, Vote):
            st = self.state
            if st.phase is Phase.CANDIDATE and msg.ballot == st.own_ballot:
                self._count(ctx, msg.highest, msg.voter)
            return True
        if isinstance(msg, SetLeader):
            self._last_election_msg = ctx.now
            before = (self.state.leader, self.state.settled_ballot)
            self.state = el_on_set_leader(self.state, msg.leader, msg.ballot)
            if (self.state.leader, self.state.settled_ballot) != before:
                ctx.cancel_timer(self.CANDIDACY)
                ctx.cancel_timer(self.RETRY)
                ctx.note(leader=self.state.leader, ballot=self.state.settled_ballot)
                if self.on_leader:
                    self.on_leader(ctx, self.state.leader, self.state.settled_ballot)
                if self.fd.is_suspected(self.state.leader) and self.state.leader != self.state.owner:
                    self._arm(ctx)
            return True
        return False


class ElectionMachine(Machine):
    """Failure detector plus election on one process."""

    def __init__(self, pid: int, n: int, fd_config: DetectorConfig = DetectorConfig(),
                 config: ElectionConfig = ElectionConfig(), eligible: bool = True):
        self.fd = FailureDetector(pid, n, fd_config, listener=self._on_suspicion)
        self.election = LeaderElection(pid, n, self.fd, config, eligible)

    def _on_suspicion(self, ctx, peer, suspected):
        self.election.on_suspicion(ctx, peer, suspected)

    def start(self, ctx):
        self.fd.start(ctx)
        self.election.start(ctx)

    def on_timer(self, ctx, name, data):
        self.fd.handle_timer(ctx, name) or self.election.handle_timer(ctx, name)

    def on_message(self, ctx, src, msg):
        self.fd.handle_message(ctx, src, msg) or self.election.handle_message(ctx, src, msg)
