import random

from protolab.antientropy.gossip import (
    GossipParams, GossipState, Rumor, all_infected, gossip_infect, gossip_machines, gossip_round,
    infected_set,
)
from protolab.simnet import ChannelSpec, SimConfig, Simulator


def test_round_broadcasts_when_fanout_covers_peers():
    s = GossipState(0, infected=True, fanout=4, rumor="r", rounds_remaining=2)
    s2, out = gossip_round(s, range(5), random.Random(0))
    assert sorted(d for d, _ in out) == [1, 2, 3, 4] and s2.rounds_remaining == 1
    assert all(m == Rumor("r") for _, m in out)


def test_fanout_clamped():
    s = GossipState(0, infected=True, fanout=10, rumor="r", rounds_remaining=1)
    _, out = gossip_round(s, range(3), random.Random(0))
    assert sorted(d for d, _ in out) == [1, 2]


def test_uninfected_or_exhausted_is_silent():
    assert gossip_round(GossipState(0), range(5), random.Random(0))[1] == []
    done = GossipState(0, infected=True, rounds_remaining=0)
    assert gossip_round(done, range(5), random.Random(0))[1] == []


def test_infection_is_sticky():
    s = gossip_infect(GossipState(3), "r", 5)
    assert gossip_infect(s, "other", 9) == s


def test_infected_set_only_grows():
    sim = Simulator(SimConfig(12, seed=4, channel=ChannelSpec("Perfect", max_delay=2)),
                    gossip_machines(12, GossipParams(fanout=2)))
    seen = frozenset()

    def grow(rec, s):
        nonlocal seen
        now = infected_set(s)
        assert seen <= now
        seen = now

    sim.run_until(all_infected, 50_000, observer=grow)
    assert all_infected(sim)
