import itertools

import pytest

from protolab.election import Ballot
from protolab.errors import InvariantViolation, ProtocolError
from protolab.paxos import (
    Accepted, AcceptorState, LearnerState, Nack, PaxosParams, Prepare, Promise, ProposerPhase,
    ProposerState, SnapshotRecord, SnapshotStore, all_correct_decided, check_decisions, explore,
    learner_from_snapshot, paxos_machines, px_abort, px_on_accept, px_on_accepted, px_on_nack,
    px_on_prepare, px_on_promise, px_propose, px_revert, px_snapshot,
)
from protolab.simnet import ChannelSpec, HaltCause, SimConfig, Simulator

P0 = ProposerState(0, (0, 1, 2))


def test_propose_broadcasts_prepare():
    s, out = px_propose(P0, "A")
    assert s.ballot == Ballot(1, 0) and s.phase is ProposerPhase.PREPARED
    assert out == [(a, Prepare(Ballot(1, 0))) for a in (0, 1, 2)]


def test_propose_in_flight_rejected():
    s, _ = px_propose(P0, "A")
    with pytest.raises(ProtocolError):
        px_propose(s, "B")


def test_propose_after_abort_uses_next_round():
    s, _ = px_propose(P0, "A")
    s, _ = px_propose(px_abort(s), "A")
    assert s.ballot == Ballot(2, 0)


def test_prepare_cases():
    s, r = px_on_prepare(AcceptorState(0), Ballot(5, 1))
    assert r == Promise(0, Ballot(5, 1), None)
    _, r = px_on_prepare(AcceptorState(0, promised=Ballot(7, 2)), Ballot(5, 1))
    assert isinstance(r, Nack) and r.promised == Ballot(7, 2)
    st = AcceptorState(0, promised=Ballot(5, 1), accepted=(Ballot(3, 0), "x"))
    _, r = px_on_prepare(st, Ballot(9, 2))
    assert r == Promise(0, Ballot(9, 2), (Ballot(3, 0), "x"))


def test_promise_quorum_and_value_adoption():
    s, _ = px_propose(P0, "A")
    b = s.ballot
    s1, out = px_on_promise(s, Promise(0, b, None))
    assert out == []
    _, out = px_on_promise(s1, Promise(1, b, None))
    assert {m.value for _, m in out} == {"A"}
    for order in itertools.permutations([(Ballot(0, 0), "x"), (Ballot(0, 1), "y")]):
        t = s
        for i, acc in enumerate(order):
            t, out = px_on_promise(t, Promise(i, b, acc))
        assert {m.value for _, m in out} == {"y"}


def test_stale_promise_ignored():
    s, _ = px_propose(P0, "A")
    t, out = px_on_promise(s, Promise(0, Ballot(0, 2), None))
    assert out == [] and t.promises == s.promises


def test_accept_cases():
    s, r = px_on_accept(AcceptorState(0, promised=Ballot(5, 1)), Ballot(5, 1), "A")
    assert isinstance(r, Accepted) and s.accepted == (Ballot(5, 1), "A")
    _, r = px_on_accept(AcceptorState(0, promised=Ballot(7, 2)), Ballot(5, 1), "A")
    assert isinstance(r, Nack)
    s, _ = px_on_accept(s, Ballot(9, 2), "y")
    assert s.accepted == (Ballot(9, 2), "y")


def test_nack_with_higher_promise_aborts():
    s, _ = px_propose(P0, "A")
    t, aborted = px_on_nack(s, Nack(1, s.ballot, Ballot(4, 2)))
    assert aborted and t.phase is ProposerPhase.IDLE and t.max_round_seen == 4
    t, _ = px_propose(t, "A")
    assert t.ballot == Ballot(5, 0)


def test_learner_quorum():
    b = Ballot(5, 1)
    s, d = px_on_accepted(LearnerState(), Accepted(0, b, "A"), 3)
    assert d is None
    s, d = px_on_accepted(s, Accepted(0, b, "A"), 3)  # duplicate from the same acceptor
    assert d is None
    s, d = px_on_accepted(s, Accepted(1, b, "A"), 3)
    assert d == "A"


def test_learner_conflicting_quorum_faults():
    s = LearnerState()
    for a in (0, 1):
        s, _ = px_on_accepted(s, Accepted(a, Ballot(1, 0), "A"), 3)
    s, _ = px_on_accepted(s, Accepted(0, Ballot(2, 1), "B"), 3)
    with pytest.raises(InvariantViolation):
        px_on_accepted(s, Accepted(2, Ballot(2, 1), "B"), 3)


def test_snapshots():
    store = SnapshotStore()
    with pytest.raises(ProtocolError):
        px_revert(store)
    px_snapshot(store, SnapshotRecord(5, "A"))
    assert px_revert(store) == SnapshotRecord(5, "A")
    assert learner_from_snapshot(px_revert(store)).decided == "A"


def test_simulated_run_decides_a_proposed_value():
    cfg = SimConfig(3, seed=7, channel=ChannelSpec("Perfect", max_delay=3))
    params = PaxosParams(proposers=(0,), values={0: "apple"})
    sim = Simulator(cfg, paxos_machines(3, params))
    assert sim.run_until(all_correct_decided).halted_by is HaltCause.PREDICATE
    assert check_decisions(sim, ["apple"]) == dict(agreement=True, validity=True, integrity=True)


def test_no_decision_without_quorum():
    cfg = SimConfig(5, seed=1, channel=ChannelSpec("Stubborn", 0.1, 3, 0, 4),
                    crash_schedule={2: 0, 3: 0, 4: 0})
    sim = Simulator(cfg, paxos_machines(5, PaxosParams(proposers=(0, 1))))
    sim.run_until(all_correct_decided, 5_000)
    assert not sim.decisions


def test_explorer_small_depth():
    report = explore(n=3, depth=5, max_crashes=1)
    assert report.violations == [] and report.states > 100
