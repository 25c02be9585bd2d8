"""Registry of runnable protocols: parameter schema, machines, halting rule, invariants."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Annotated, Any, Callable, Literal, Optional

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field

from protolab.antientropy.gossip import GossipParams, all_infected, gossip_machines, rounds_to_full_infection
from protolab.antientropy.sync import SyncParams, replicas_converged, sync_machines
from protolab.clockdemo import ClockDemoParams, all_events, clock_machines
from protolab.clocks import CausalOrder, vc_compare
from protolab.commit import (
    COORDINATOR, CommitParams, PartPhase, atomicity_holds, commit_machines, participants_terminal,
)
from protolab.election import ElectionConfig, ElectionMachine, Phase
from protolab.errors import ConfigError
from protolab.fdetect import DetectorConfig, DetectorMachine
from protolab.paxos import PaxosParams, all_correct_decided, check_decisions, paxos_machines
from protolab.seqlog import RaftParams, logs_complete, logs_of, prefix_check, prefix_observer, raft_machines
from protolab.simnet import Machine, RunOutcome, SimConfig, Simulator, TraceRecord

Check = Callable[[Simulator, RunOutcome, Any], bool]


@dataclass
class Protocol:
    name: str
    summary: str
    params_model: type[BaseModel]
    build: Callable[[SimConfig, Any], list[Machine]]
    halt: Callable[[Any], Callable[[Simulator], bool]]
    checks: dict[str, tuple[str, Check]]
    default_checks: tuple[str, ...]
    observer: Optional[Callable[[TraceRecord, Simulator], None]] = None


REGISTRY: dict[str, Protocol] = {}


def register(proto: Protocol) -> Protocol:
    REGISTRY[proto.name] = proto
    return proto


def get_protocol(name: str) -> Protocol:
    try:
        return REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown protocol {name!r}; known: {', '.join(sorted(REGISTRY))}") from None


class Params(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _halted(sim, outcome, params) -> bool:
    return outcome.halted_by.value == "Predicate"


HALTED = ("run reached its halting condition within the step budget", _halted)


# -- logical clocks ---------------------------------------------------------

class ClockParamsModel(Params):
    events_per_process: int = Field(4, ge=0)
    send_probability: float = Field(0.5, ge=0.0, le=1.0)
    rule: Literal["standard", "no-bump"] = "standard"
    max_gap: int = Field(3, ge=1)


def causal_pairs(events) -> set[tuple[tuple[int, int], tuple[int, int]]]:
    """Happens-before as the transitive closure of process order and send->receive edges."""
    succ: dict[tuple[int, int], set] = {}
    sends = {e.env: (e.pid, e.index) for e in events if e.kind == "send"}
    for e in events:
        key = (e.pid, e.index)
        succ.setdefault(key, set())
        if e.index > 0:
            succ.setdefault((e.pid, e.index - 1), set()).add(key)
        if e.kind == "receive" and e.env in sends:
            succ.setdefault(sends[e.env], set()).add(key)
    pairs = set()
    for start in succ:
        stack, seen = list(succ[start]), set()
        while stack:
            x = stack.pop()
            if x in seen:
                continue
            seen.add(x)
            stack.extend(succ.get(x, ()))
        pairs |= {(start, x) for x in seen}
    return pairs


def _vector_matches(sim, outcome, params) -> bool:
    events = all_events(sim)
    hb = causal_pairs(events)
    for a in events:
        for b in events:
            ka, kb = (a.pid, a.index), (b.pid, b.index)
            if ka == kb:
                continue
            if ((ka, kb) in hb) != (vc_compare(a.vector, b.vector) is CausalOrder.BEFORE):
                return False
    return True


def _lamport_causal(sim, outcome, params) -> bool:
    events = {(e.pid, e.index): e for e in all_events(sim)}
    for a, b in causal_pairs(events.values()):
        la, lb = events[a].lamport.value, events[b].lamport.value
        if la > lb or (params.rule == "standard" and la == lb):
            return False
    return True


def _clock_build(cfg, p):
    return clock_machines(cfg.n_processes, ClockDemoParams(
        p.events_per_process, p.send_probability, p.rule, p.max_gap))


_CLOCK_CHECKS = {
    "happens_before": ("vc_compare says Before exactly on happens-before pairs", _vector_matches),
    "lamport_causal": ("Lamport values grow along every causal edge (strictly under the standard rule)",
                       _lamport_causal),
}

register(Protocol(
    "lamport-demo", "Random sends and local events stamped with Lamport clocks.",
    ClockParamsModel, _clock_build, lambda p: lambda sim: False, _CLOCK_CHECKS,
    ("lamport_causal",),
))
register(Protocol(
    "vector-demo", "Random sends and local events stamped with vector clocks.",
    ClockParamsModel, _clock_build, lambda p: lambda sim: False, _CLOCK_CHECKS,
    ("happens_before",),
))


# -- failure detector and election ------------------------------------------

class _DetectorFields(Params):
    heartbeat_interval: int = Field(10, ge=1)
    initial_timeout: int = Field(30, ge=1)
    increment: Optional[int] = Field(None, ge=0)

    def detector(self) -> DetectorConfig:
        return DetectorConfig(self.heartbeat_interval, self.initial_timeout, self.increment)


class DetectorParamsModel(_DetectorFields):
    horizon: int = Field(400, ge=1)


def _crashed(sim) -> list[int]:
    return [p for p in range(sim.config.n_processes) if not sim.status(p).correct]


def _complete(sim, outcome, params) -> bool:
    return all(set(_crashed(sim)) <= sim.machines[p].fd.suspected for p in sim.correct_pids())


def _accurate(sim, outcome, params) -> bool:
    correct = set(sim.correct_pids())
    return all(not (sim.machines[p].fd.suspected & correct) for p in correct)


register(Protocol(
    "fdetect", "Heartbeat failure detector with adaptive timeouts.",
    DetectorParamsModel,
    lambda cfg, p: [DetectorMachine(i, cfg.n_processes, p.detector()) for i in range(cfg.n_processes)],
    lambda p: lambda sim: sim.now >= p.horizon,
    {"halted": HALTED,
     "completeness": ("every correct process suspects every crashed process", _complete),
     "eventual_accuracy": ("no correct process suspects a correct process at the end", _accurate)},
    ("halted", "completeness", "eventual_accuracy"),
))


class ElectionParamsModel(_DetectorFields):
    candidacy_wait: Optional[int] = Field(None, ge=1)
    jitter: int = Field(0, ge=0)
    retry_timeout: Optional[int] = Field(None, ge=1)
    # None lets every process stand
    candidates: Optional[list[int]] = None

    def election(self) -> ElectionConfig:
        return ElectionConfig(self.candidacy_wait, self.jitter, self.retry_timeout)


def _election_build(cfg, p):
    n = cfg.n_processes
    cands = set(range(n)) if p.candidates is None else set(p.candidates)
    if not cands or not cands <= set(range(n)):
        raise ConfigError(f"candidates {sorted(cands)} must be a non-empty subset of 0..{n - 1}")
    return [ElectionMachine(i, n, p.detector(), p.election(), eligible=i in cands) for i in range(n)]


def elected(sim) -> int | None:
    """The leader every correct process has settled on, if they agree and it is correct."""
    states = [sim.machines[p].election.state for p in sim.correct_pids()]
    leaders = {s.leader for s in states}
    if any(s.phase is not Phase.SETTLED for s in states) or len(leaders) != 1:
        return None
    (leader,) = leaders
    return leader if leader in sim.correct_pids() else None


register(Protocol(
    "election", "Ballot-based leader election on top of the failure detector.",
    ElectionParamsModel, _election_build,
    lambda p: lambda sim: elected(sim) is not None,
    {"halted": HALTED,
     "single_leader": ("all correct processes settle on one correct leader",
                       lambda sim, o, p: elected(sim) is not None)},
    ("single_leader",),
))


# -- paxos ------------------------------------------------------------------

class PaxosParamsModel(Params):
    proposers: list[int] = [0]
    values: dict[int, Any] = {}
    start_at: dict[int, int] = {}
    retry_timeout: int = Field(20, ge=1)
    backoff_max: int = Field(10, ge=1)
    snapshot: bool = False

    def core(self) -> PaxosParams:
        return PaxosParams(tuple(self.proposers), dict(self.values), dict(self.start_at),
                           self.retry_timeout, self.backoff_max, self.snapshot)


def _paxos_check(name):
    def check(sim, outcome, p):
        core = p.core()
        return check_decisions(sim, [core.value_for(x) for x in core.proposers])[name]
    return check


register(Protocol(
    "paxos", "Single-decree Paxos; every process is acceptor and learner.",
    PaxosParamsModel, lambda cfg, p: paxos_machines(cfg.n_processes, p.core()),
    lambda p: all_correct_decided,
    {"halted": HALTED,
     "decided": ("every correct process decided", lambda sim, o, p: all_correct_decided(sim)),
     "agreement": ("no two processes decide different values", _paxos_check("agreement")),
     "validity": ("only proposed values are decided", _paxos_check("validity")),
     "integrity": ("each process decides at most once", _paxos_check("integrity"))},
    ("decided", "agreement", "validity", "integrity"),
))


# -- replicated log ---------------------------------------------------------

class SeqPaxosParamsModel(Params):
    values: list[Any] = ["a", "b", "c"]
    leader: int = Field(0, ge=0)
    roles: Literal["all", "alg1", "alg2"] = "all"
    retry_timeout: int = Field(30, ge=1)

    def core(self) -> RaftParams:
        return RaftParams(tuple(self.values), fixed_leader=self.leader, roles=self.roles,
                          designated_leader=self.leader, retry_timeout=self.retry_timeout)


class RaftParamsModel(Params):
    values: list[Any] = ["a", "b", "c"]
    roles: Literal["all", "alg1", "alg2"] = "all"
    designated_leader: int = Field(0, ge=0)
    retry_timeout: int = Field(30, ge=1)
    crash_leader_after: Optional[int] = Field(None, ge=0)
    heartbeat_interval: int = Field(5, ge=1)
    initial_timeout: int = Field(15, ge=1)
    jitter: int = Field(10, ge=0)
    candidacy_wait: Optional[int] = Field(None, ge=1)

    def core(self) -> RaftParams:
        return RaftParams(
            tuple(self.values), roles=self.roles, designated_leader=self.designated_leader,
            retry_timeout=self.retry_timeout, crash_leader_after=self.crash_leader_after,
            fd=DetectorConfig(self.heartbeat_interval, self.initial_timeout),
            election=ElectionConfig(self.candidacy_wait, self.jitter),
        )


def _identical(sim, outcome, p) -> bool:
    logs = {sim.machines[q].log for q in sim.correct_pids()}
    return len(logs) == 1


_LOG_CHECKS = {
    "halted": HALTED,
    "prefix": ("every pair of logs is prefix-comparable (also checked after every step)",
               lambda sim, o, p: prefix_check(logs_of(sim))),
    "complete": ("every correct replica holds the full log", lambda sim, o, p: logs_complete(sim)),
    "identical": ("all correct replicas hold identical logs", _identical),
}

register(Protocol(
    "seq-paxos", "Per-slot Paxos replicated log with a fixed leader.",
    SeqPaxosParamsModel, lambda cfg, p: raft_machines(cfg.n_processes, p.core()),
    lambda p: logs_complete, _LOG_CHECKS, ("prefix", "complete", "identical"),
    observer=prefix_observer,
))
register(Protocol(
    "raft", "Replicated log whose leader comes from the election module.",
    RaftParamsModel, lambda cfg, p: raft_machines(cfg.n_processes, p.core()),
    lambda p: logs_complete, _LOG_CHECKS, ("prefix", "complete", "identical"),
    observer=prefix_observer,
))


# -- atomic commit ----------------------------------------------------------

def _vote_word(v):
    # YAML 1.1 reads a bare Yes/No as a boolean
    return {True: "Yes", False: "No"}.get(v, v) if isinstance(v, bool) else v


VoteWord = Annotated[Literal["Yes", "No"], BeforeValidator(_vote_word)]


class CommitParamsModel(Params):
    votes: list[VoteWord] = []
    coordinator_crash: Literal["none", "before_votes", "after_votes", "after_decision"] = "none"
    ack_crash: list[int] = []
    vote_timeout: Optional[int] = Field(None, ge=1)
    heartbeat_interval: int = Field(5, ge=1)
    initial_timeout: int = Field(15, ge=1)

    def core(self, protocol: str) -> CommitParams:
        return CommitParams(protocol, tuple(self.votes), self.coordinator_crash,
                            tuple(self.ack_crash), self.vote_timeout,
                            DetectorConfig(self.heartbeat_interval, self.initial_timeout))


def _phases(sim) -> set[PartPhase]:
    return {m.state.phase for m in sim.machines if m.pid != COORDINATOR}


def _commit_checks():
    return {
        "halted": HALTED,
        "atomicity": ("no participant commits while another aborts",
                      lambda sim, o, p: atomicity_holds(sim)),
        "non_blocking": ("every correct participant reaches a terminal state",
                         lambda sim, o, p: participants_terminal(sim)),
        "all_committed": ("every participant committed",
                          lambda sim, o, p: _phases(sim) == {PartPhase.COMMITTED}),
        "all_aborted": ("every participant aborted",
                        lambda sim, o, p: _phases(sim) == {PartPhase.ABORTED}),
    }


for _name, _summary, _defaults in (
    ("2pc", "Two-phase commit; process 0 coordinates.", ("atomicity",)),
    ("3pc", "Three-phase commit with a surrogate-coordinator termination protocol.",
     ("atomicity", "non_blocking")),
):
    register(Protocol(
        _name, _summary, CommitParamsModel,
        (lambda proto: lambda cfg, p: commit_machines(cfg.n_processes, p.core(proto),
                                                      cfg.channel.max_delay))(_name),
        lambda p: participants_terminal, _commit_checks(), _defaults,
    ))


# -- anti-entropy -----------------------------------------------------------

class SyncParamsModel(Params):
    # [time, process, key, value]; a null value deletes the key
    writes: list[tuple[int, int, str, Any]] = []
    interval: int = Field(5, ge=1)
    keys: Optional[list[str]] = None

    def core(self, mode: str) -> SyncParams:
        return SyncParams(tuple(self.writes), self.interval, mode,
                          tuple(self.keys) if self.keys is not None else None)


_SYNC_CHECKS = {
    "halted": HALTED,
    "converged": ("all correct replicas hold the same map after every write",
                  lambda sim, o, p: replicas_converged(sim)),
}

register(Protocol(
    "lww-sync", "LWW-map replicas that push their whole state to a random peer.",
    SyncParamsModel, lambda cfg, p: sync_machines(cfg.n_processes, p.core("push")),
    lambda p: replicas_converged, _SYNC_CHECKS, ("converged",),
))
register(Protocol(
    "merkle-diff", "LWW-map replicas that exchange only keys found by Merkle comparison.",
    SyncParamsModel, lambda cfg, p: sync_machines(cfg.n_processes, p.core("merkle")),
    lambda p: replicas_converged, _SYNC_CHECKS, ("converged",),
))


class GossipParamsModel(Params):
    fanout: int = Field(2, ge=1)
    rounds: int = Field(20, ge=0)
    round_interval: int = Field(1, ge=1)
    seeds: list[int] = [0]
    rumor: Any = "rumor"
    # bound used by the within_rounds check
    max_rounds: int = Field(20, ge=0)

    def core(self) -> GossipParams:
        return GossipParams(self.fanout, self.rounds, self.round_interval, tuple(self.seeds), self.rumor)


def _within_rounds(sim, o, p) -> bool:
    r = rounds_to_full_infection(sim)
    return r is not None and r <= p.max_rounds


register(Protocol(
    "gossip", "Push rumor mongering with a round budget.",
    GossipParamsModel, lambda cfg, p: gossip_machines(cfg.n_processes, p.core()),
    lambda p: all_infected,
    {"halted": HALTED,
     "all_infected": ("every correct process learned the rumor", lambda sim, o, p: all_infected(sim)),
     "within_rounds": ("full infection took at most max_rounds rounds", _within_rounds)},
    ("all_infected",),
))
