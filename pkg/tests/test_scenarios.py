import json
from pathlib import Path

import pytest

from conftest import SCENARIOS
from protolab.cli import main
from protolab.errors import ConfigError, InvariantViolation
from protolab.protocols import REGISTRY, HALTED, Protocol, PaxosParamsModel, register
from protolab.paxos import all_correct_decided, paxos_machines
from protolab.runner import parse_seed_range, run, sweep
from protolab.scenario import PROTOCOLS, ScenarioError, load_scenario, parse_scenario

PAXOS = """\
protocol: paxos
sim:
  n_processes: 3
  seed: 7
  channel: {kind: Perfect, max_delay: 3}
protocol_params:
  values: {0: apple}
"""


def test_every_protocol_registered_and_shipped():
    assert set(PROTOCOLS) == set(REGISTRY)
    shipped = {load_scenario(p).model.protocol for p in SCENARIOS.glob("*.yaml")}
    assert shipped == set(PROTOCOLS)


def test_valid_scenario_loads():
    s = parse_scenario(PAXOS)
    assert s.model.protocol == "paxos" and s.params.values == {0: "apple"}
    assert s.expectations == ("decided", "agreement", "validity", "integrity")


def test_unknown_field_cites_field_and_line():
    text = PAXOS + "quoram: 2\n"
    with pytest.raises(ScenarioError) as err:
        parse_scenario(text)
    assert err.value.field == "quoram" and err.value.line == 8 and "quoram" in str(err.value)


def test_unknown_param_points_into_protocol_params():
    text = PAXOS.replace("  values: {0: apple}", "  values: {0: apple}\n  quoram: 3")
    with pytest.raises(ScenarioError) as err:
        parse_scenario(text)
    assert err.value.field == "protocol_params.quoram" and err.value.line == 8


def test_negative_process_count_rejected():
    with pytest.raises(ScenarioError) as err:
        parse_scenario(PAXOS.replace("n_processes: 3", "n_processes: -1"))
    assert err.value.field == "sim.n_processes" and err.value.line == 3


def test_cross_field_errors_before_running():
    with pytest.raises(ScenarioError) as err:
        parse_scenario(PAXOS + "  proposers: [9]\n")
    assert err.value.field == "protocol_params"
    with pytest.raises(ScenarioError):
        parse_scenario(PAXOS.replace("seed: 7", "seed: 7\n  crash_schedule: {5: 1}"))


def test_unknown_expectation_and_protocol():
    with pytest.raises(ScenarioError):
        parse_scenario(PAXOS + "expectations: [liveness]\n")
    with pytest.raises(ScenarioError):
        parse_scenario(PAXOS.replace("protocol: paxos", "protocol: zab"))
    with pytest.raises(ScenarioError):
        parse_scenario("protocol: [")


def test_paxos_run_decides_proposed_value(tmp_path):
    report = run(parse_scenario(PAXOS, default_name="px"), trace_dir=tmp_path)
    assert report.passed and {d["value"] for d in report.decisions} == {"apple"}
    assert Path(report.trace_path).name == "px-7.trace"
    with pytest.raises(FileExistsError):
        run(parse_scenario(PAXOS, default_name="px"), trace_dir=tmp_path)
    again = run(parse_scenario(PAXOS, default_name="px"), trace_dir=tmp_path, force=True)
    assert again.trace_text == report.trace_text


def test_two_pc_forced_no_aborts(tmp_path):
    report = run(load_scenario(SCENARIOS / "2pc.yaml"))
    outcomes = {d["outcome"] for d in report.decisions if "role" not in d}
    assert report.passed and outcomes == {"Aborted"}
    assert main(["run", str(SCENARIOS / "2pc.yaml"), "--trace-dir", str(tmp_path)]) == 0


def test_sweep_aggregates_and_rejects_empty():
    s = parse_scenario(PAXOS)
    rep = sweep(s, range(5))
    assert rep.pass_rate == 1.0 and rep.mean_message_count > 0 and rep.failing_seeds == []
    with pytest.raises(ConfigError):
        sweep(s, [])
    assert parse_seed_range("3..5") == range(3, 6)
    with pytest.raises(ConfigError):
        parse_seed_range("5..3")


def test_sweep_in_parallel_matches_serial():
    s = parse_scenario(PAXOS)
    assert sweep(s, range(4), jobs=2).summary() == sweep(s, range(4)).summary()


class _Liar:
    """Accepts every Accepted as a decision on a fresh value: a deliberately unsafe learner."""


def _violating_build(cfg, p):
    machines = paxos_machines(cfg.n_processes, p.core())
    original = machines[1]._on_accepted

    def lying(ctx, msg):
        if ctx.now % 2:
            raise InvariantViolation("injected: learner decided twice")
        original(ctx, msg)

    machines[1]._on_accepted = lying
    return machines


@pytest.fixture
def stub_protocol():
    base = REGISTRY["paxos"]
    register(Protocol("paxos-stub", "violating test stub", PaxosParamsModel, _violating_build,
                      lambda p: all_correct_decided, base.checks, base.default_checks))
    yield "paxos-stub"
    del REGISTRY["paxos-stub"]


def test_sweep_detects_injected_violation(stub_protocol):
    s = parse_scenario(PAXOS)
    s.model = s.model.model_copy(update={"protocol": stub_protocol})
    rep = sweep(s, range(10))
    assert rep.pass_rate < 1 and rep.failing_seeds
    bad = [r for r in rep.reports if r.violation]
    assert bad and all(r.violation_index is not None and r.violation_index >= 0 for r in bad)


def test_cli_explain_and_exit_codes(capsys, tmp_path):
    assert main(["explain", "3pc"]) == 0
    assert "non_blocking" in capsys.readouterr().out
    broken = tmp_path / "bad.yaml"
    broken.write_text(PAXOS + "quoram: 2\n")
    assert main(["run", str(broken)]) == 2
    assert "quoram" in capsys.readouterr().err
    good = tmp_path / "px.yaml"
    good.write_text(PAXOS)
    assert main(["sweep", str(good), "--seeds", "0..3"]) == 0
    assert json.loads(capsys.readouterr().out)["pass_rate"] == 1.0
