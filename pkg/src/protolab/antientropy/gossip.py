"""Push rumor mongering with a per-node round budget."""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from typing import Any, Iterable

from protolab.errors import ConfigError
from protolab.simnet import Machine, Simulator


@dataclass(frozen=True)
class GossipState:
    owner: int
    infected: bool = False
    fanout: int = 2
    rumor: Any = None
    rounds_remaining: int = 0

    def __post_init__(self):
        if self.fanout < 1:
            raise ConfigError("gossip fanout must be >= 1")


@dataclass(frozen=True)
class Rumor:
    payload: Any


def gossip_infect(state: GossipState, rumor: Any, rounds: int) -> GossipState:
    """Learn the rumor. An already infected node keeps its remaining budget."""
    if state.infected:
        return state
    return replace(state, infected=True, rumor=rumor, rounds_remaining=rounds)


def gossip_round(state: GossipState, peers: Iterable[int], rng: random.Random):
    """Push the rumor to ``fanout`` distinct peers. Returns ``(state, outbox)``."""
    if not state.infected or state.rounds_remaining <= 0:
        return state, []
    pool = sorted(p for p in set(peers) if p != state.owner)
    k = min(state.fanout, len(pool))
    targets = rng.sample(pool, k)
    state = replace(state, rounds_remaining=state.rounds_remaining - 1)
    return state, [(p, Rumor(state.rumor)) for p in targets]


@dataclass(frozen=True)
class GossipParams:
    fanout: int = 2
    rounds: int = 20
    round_interval: int = 1
    seeds: tuple[int, ...] = (0,)
    rumor: Any = "rumor"


class GossipMachine(Machine):
    TIMER = "gossip.round"

    def __init__(self, pid: int, n: int, params: GossipParams):
        self.n = n
        self.params = params
        self.state = GossipState(pid, fanout=params.fanout)
        self.infected_at: int | None = None

    def _infect(self, ctx):
        self.state = gossip_infect(self.state, self.params.rumor, self.params.rounds)
        self.infected_at = ctx.now
        ctx.note(gossip="infected", round=self.round_of(ctx.now))
        ctx.set_timer(self.TIMER, self.params.round_interval)

    def round_of(self, t: int) -> int:
        return -(-t // self.params.round_interval)

    def start(self, ctx):
        if self.state.owner in self.params.seeds:
            self._infect(ctx)

    def on_message(self, ctx, src, msg):
        if isinstance(msg, Rumor) and not self.state.infected:
            self._infect(ctx)

    def on_timer(self, ctx, name, data):
        if name != self.TIMER:
            return
        self.state, out = gossip_round(self.state, range(self.n), ctx.rng)
        for dst, m in out:
            ctx.send(dst, m)
        if self.state.rounds_remaining > 0:
            ctx.set_timer(self.TIMER, self.params.round_interval)


def gossip_machines(n: int, params: GossipParams = GossipParams()) -> list[GossipMachine]:
    for s in params.seeds:
        if not 0 <= s < n:
            raise ConfigError(f"gossip seed process {s} outside 0..{n - 1}")
    return [GossipMachine(p, n, params) for p in range(n)]


def infected_set(sim: Simulator) -> frozenset[int]:
    return frozenset(m.state.owner for m in sim.machines if m.state.infected)


def all_infected(sim: Simulator) -> bool:
    return all(sim.machines[p].state.infected for p in sim.correct_pids())


def rounds_to_full_infection(sim: Simulator) -> int | None:
    """Round in which the last correct process was infected, or None."""
    if not all_infected(sim):
        return None
    return max(sim.machines[p].round_of(sim.machines[p].infected_at) for p in sim.correct_pids())
