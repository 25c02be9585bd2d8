import itertools

import pytest

from protolab.election import (
    Ballot, Candidacy, ElectionConfig, ElectionMachine, ElectionState, Phase, SetLeader,
    el_on_ballot, el_on_set_leader, el_start, quorum_size,
)
from protolab.errors import ConfigError
from protolab.fdetect import DetectorConfig
from protolab.protocols import elected
from protolab.simnet import ChannelSpec, Kind, SimConfig, Simulator


@pytest.mark.parametrize("n,q", [(5, 3), (1, 1), (4, 3), (3, 2), (6, 4)])
def test_quorum_size(n, q):
    assert quorum_size(n) == q


def test_quorum_size_rejects_empty():
    with pytest.raises(ConfigError):
        quorum_size(0)


def test_ballot_order():
    assert Ballot(10, 1) < Ballot(10, 4) < Ballot(11, 0)


def test_start_noop_when_leader_alive():
    s = ElectionState(owner=0, n=5, leader=2, phase=Phase.SETTLED)
    assert el_start(s, 10, leader_alive=True) == (s, [])


def test_start_broadcasts_to_everyone():
    s, out = el_start(ElectionState(owner=2, n=5), 0)
    assert s.phase is Phase.CANDIDATE and s.own_ballot == Ballot(1, 2)
    assert [d for d, _ in out] == [0, 1, 2, 3, 4]
    assert all(isinstance(m, Candidacy) for _, m in out)


def test_max_ballot_wins_in_both_orders():
    for order in itertools.permutations([Ballot(10, 1), Ballot(12, 3)]):
        s, out = ElectionState(owner=0, n=3), []
        for b in order:
            s, sent = el_on_ballot(s, b)
            out += sent
        assert s.leader == 3 and {m.leader for _, m in out} == {3}


def test_single_ballot_below_quorum_keeps_leader():
    s, out = el_on_ballot(ElectionState(owner=0, n=3, leader=1), Ballot(5, 2))
    assert s.leader == 1 and out == []


def test_equal_round_tie_breaks_on_pid():
    s = ElectionState(owner=0, n=3)
    s, _ = el_on_ballot(s, Ballot(10, 1))
    s, _ = el_on_ballot(s, Ballot(10, 4))
    assert s.leader == 4


def test_set_leader_settles_and_is_idempotent():
    s = el_on_set_leader(ElectionState(owner=0, n=5), 3, Ballot(2, 3))
    assert s.leader == 3 and s.phase is Phase.SETTLED
    assert el_on_set_leader(s, 3, Ballot(2, 3)) == s
    assert el_on_set_leader(s, 1, Ballot(1, 1)) == s  # stale announcement


def test_set_leader_abandons_candidacy_and_resets_counters():
    s, _ = el_start(ElectionState(owner=1, n=5), 0)
    s, _ = el_on_ballot(s, Ballot(1, 1), voter=1)
    s = el_on_set_leader(s, 4, Ballot(3, 4))
    assert s.phase is Phase.SETTLED and s.leader == 4
    assert s.promise_count == 0 and s.max_ballot_seen is None and s.own_ballot is None


def _election(seed, n=5, candidates=(1, 3), crash=None, jitter=0):
    cfg = SimConfig(n, seed=seed, channel=ChannelSpec("Perfect", max_delay=3),
                    crash_schedule=crash or {})
    fd = DetectorConfig(5, 15)
    machines = [ElectionMachine(p, n, fd, ElectionConfig(jitter=jitter), eligible=p in candidates)
                for p in range(n)]
    sim = Simulator(cfg, machines)
    sim.run_until(lambda s: elected(s) is not None, 20_000)
    return sim


def test_first_election_broadcasts_n_candidacies():
    sim = _election(0, candidates=(2,))
    sends = [r for r in sim.trace if r.kind is Kind.SEND and isinstance(r.detail["msg"], Candidacy)]
    assert len(sends) == 5 and elected(sim) == 2


def test_racing_candidates_converge_on_max_ballot():
    for seed in range(10):
        sim = _election(seed)
        settled = [r for r in sim.trace if r.kind is Kind.STATE_NOTE and "leader" in r.detail]
        ballots = [r.detail["ballot"] for r in sim.trace
                   if r.kind is Kind.STATE_NOTE and r.detail.get("election") == "candidate"]
        assert elected(sim) == max(ballots)[1]
        assert {r.detail["leader"] for r in settled} == {elected(sim)}


def test_reelection_after_leader_crash():
    sim = _election(4, candidates=(0, 1, 2, 3, 4), jitter=10)
    first = elected(sim)
    sim.crash(first, sim.now + 5)
    sim.run_until(lambda s: elected(s) not in (None, first), 20_000)
    assert elected(sim) not in (None, first)
