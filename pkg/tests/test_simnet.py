from dataclasses import dataclass

import pytest

from protolab.errors import ConfigError
from protolab.simnet import (
    ChannelSpec, HaltCause, Kind, Machine, SimConfig, Simulator, TraceRecord, dump_trace, metrics,
)


@dataclass(frozen=True)
class Ping:
    n: int


class Idle(Machine):
    pass


class Sender(Machine):
    """Process 0 sends ``count`` pings to ``dst`` at t=0; everyone records deliveries."""

    def __init__(self, pid, dst=1, count=1, every=None):
        self.pid, self.dst, self.count, self.every = pid, dst, count, every
        self.got = []

    def start(self, ctx):
        if self.pid == 0:
            if self.every:
                ctx.set_timer("tick", self.every)
            else:
                for i in range(self.count):
                    ctx.send(self.dst, Ping(i))

    def on_timer(self, ctx, name, data):
        ctx.send(self.dst, Ping(ctx.now))
        ctx.set_timer("tick", self.every)

    def on_message(self, ctx, src, msg):
        self.got.append(msg.n)


def kinds(sim):
    return [r.kind for r in sim.trace]


def test_construction():
    sim = Simulator(SimConfig(3, seed=1), [Idle() for _ in range(3)])
    assert sim.now == 0 and sim.correct_pids() == [0, 1, 2]
    assert Simulator(SimConfig(1), [Idle()]).correct_pids() == [0]
    with pytest.raises(ConfigError):
        Simulator(SimConfig(3), [Idle(), Idle()])


@pytest.mark.parametrize("bad", [
    dict(n_processes=0),
    dict(n_processes=2, crash_schedule={5: 1}),
    dict(n_processes=2, partition_schedule=[(0, 5, ((0,), (0, 1)))]),
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        SimConfig(**bad)


def test_channel_validation():
    with pytest.raises(ConfigError):
        ChannelSpec("Perfect", drop_probability=0.5)
    with pytest.raises(ConfigError):
        ChannelSpec("Lossy")


def test_perfect_send_delivers_after_one_tick():
    sim = Simulator(SimConfig(2, channel=ChannelSpec("Perfect", max_delay=1)), [Sender(0), Sender(1)])
    sim.run_until(None, 100)
    deliver = [r for r in sim.trace if r.kind is Kind.DELIVER]
    assert [r.time for r in deliver] == [1]


def test_fairloss_drop_all():
    cfg = SimConfig(2, channel=ChannelSpec("FairLoss", drop_probability=1.0))
    sim = Simulator(cfg, [Sender(0, count=20), Sender(1)])
    sim.run_until(None, 1000)
    assert kinds(sim).count(Kind.SEND) == 20 and kinds(sim).count(Kind.DROP) == 20
    assert Kind.DELIVER not in kinds(sim)


def test_determinism_seed_42():
    def once():
        cfg = SimConfig(3, seed=42, channel=ChannelSpec("FairLoss", 0.3, 5, 0.2))
        sim = Simulator(cfg, [Sender(p, count=30) for p in range(3)])
        sim.run_until(None, 10_000)
        return dump_trace(sim.trace)
    assert once() == once()


def test_run_until_edge_cases():
    sim = Simulator(SimConfig(2), [Idle(), Idle()])
    assert sim.run_until(lambda s: True) == (0, HaltCause.PREDICATE)
    assert sim.run_until(None) == (0, HaltCause.EXHAUSTED)
    busy = Simulator(SimConfig(2), [Sender(0, every=1), Sender(1)])
    assert busy.run_until(None, 50).halted_by is HaltCause.BUDGET


def test_partition_and_heal():
    sim = Simulator(SimConfig(3), [Idle() for _ in range(3)])
    sim.partition([{0}, {1, 2}])
    with pytest.raises(ConfigError):
        sim.partition([{0, 1}, {1, 2}])


def _two_sends(groups, heal=False):
    class M(Machine):
        def __init__(self, pid):
            self.pid, self.got = pid, []

        def start(self, ctx):
            if self.pid == 0:
                ctx.send(1, Ping(0))
            if self.pid == 1:
                ctx.send(2, Ping(1))

        def on_message(self, ctx, src, msg):
            self.got.append(src)

    sim = Simulator(SimConfig(3), [M(p) for p in range(3)])
    sim.partition(groups)
    if heal:
        sim.heal()
    sim.run_until(None, 100)
    return sim


def test_partition_blocks_cross_traffic_only():
    sim = _two_sends([{0}, {1, 2}])
    drops = [r for r in sim.trace if r.kind is Kind.DROP]
    assert [(d.detail["src"], d.detail["reason"]) for d in drops] == [(0, "partition")]
    assert sim.machines[2].got == [1]
    healed = _two_sends([{0}, {1, 2}], heal=True)
    assert healed.machines[1].got == [0]


def test_crash_stops_sends_and_drops_deliveries():
    cfg = SimConfig(2, channel=ChannelSpec("Perfect", max_delay=1), crash_schedule={0: 5})
    sim = Simulator(cfg, [Sender(0, dst=1, every=2), Sender(1)])
    sim.run_until(None, 200)
    assert all(r.time <= 5 for r in sim.trace if r.kind is Kind.SEND)
    assert not sim.status(0).correct and str(sim.status(0)) == "Crashed(at=5)"


def test_crash_then_deliver_is_dropped():
    cfg = SimConfig(2, channel=ChannelSpec("Perfect", max_delay=3))
    sim = Simulator(cfg, [Sender(0, count=1), Sender(1)])
    sim.crash(1, 0)
    sim.run_until(None, 100)
    assert any(r.kind is Kind.DROP and r.detail["reason"] == "crashed" for r in sim.trace)
    with pytest.raises(ConfigError):
        sim.crash(7, 1)


def test_crash_all_exhausts():
    cfg = SimConfig(2, crash_schedule={0: 3, 1: 3})
    sim = Simulator(cfg, [Sender(0, every=1), Sender(1, every=1)])
    assert sim.run_until(None, 10_000).halted_by is HaltCause.EXHAUSTED


def test_perfect_channel_fifo_and_exactly_once():
    cfg = SimConfig(2, seed=3, channel=ChannelSpec("Perfect", max_delay=6))
    sim = Simulator(cfg, [Sender(0, count=40), Sender(1)])
    sim.run_until(None, 1000)
    assert sim.machines[1].got == list(range(40))


def test_stubborn_delivers_despite_loss():
    cfg = SimConfig(2, seed=5, channel=ChannelSpec("Stubborn", 0.7, 2, 0, 3))
    sim = Simulator(cfg, [Sender(0, count=10), Sender(1)])
    sim.run_until(lambda s: set(s.machines[1].got) == set(range(10)), 20_000)
    assert set(sim.machines[1].got) == set(range(10))


def test_fairloss_resend_eventually_delivered():
    for seed in range(20):
        cfg = SimConfig(2, seed=seed, channel=ChannelSpec("FairLoss", 0.5, 1))
        sim = Simulator(cfg, [Sender(0, every=1), Sender(1)])
        sim.run_until(lambda s: s.machines[1].got, 10_000)
        sends = [r for r in sim.trace if r.kind is Kind.SEND]
        assert sim.machines[1].got and len(sends) <= 200


def test_metrics_small_cases():
    assert metrics([]) == (0, 0)
    trace = [TraceRecord(0, Kind.SEND, 0, {"env": 0, "dst": 1, "cause": None}),
             TraceRecord(1, Kind.DELIVER, 1, {"env": 0, "src": 0})]
    assert metrics(trace) == (1, 1)


def test_trace_json_roundtrip_and_field_order():
    rec = TraceRecord(3, Kind.STATE_NOTE, 2, {"b": 1, "a": [1, 2]})
    line = rec.to_json()
    assert line.startswith('{"time":3,"kind":"StateNote","actor":2,"detail":{"a"')
    back = TraceRecord.from_json(line)
    assert back.time == 3 and back.kind is Kind.STATE_NOTE and back.detail == {"a": [1, 2], "b": 1}
