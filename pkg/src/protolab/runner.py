"""Execute scenarios: single seeded runs with trace files, and seed sweeps."""

from __future__ import annotations

import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from protolab.errors import ConfigError, InvariantViolation
from protolab.scenario import Scenario
from protolab.simnet import Simulator, dump_trace, metrics, to_jsonable


@dataclass
class RunReport:
    scenario: str
    seed: int
    halted_by: str
    steps: int
    message_count: int
    communication_steps: int
    decisions: list[dict]
    invariant_results: dict[str, bool]
    violation: str | None = None
    violation_index: int | None = None
    trace_path: str | None = None
    trace_text: str = field(default="", repr=False)

    @property
    def passed(self) -> bool:
        return self.violation is None and all(self.invariant_results.values())

    def summary(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "trace_text"}
        out["passed"] = self.passed
        return out


def trace_filename(scenario: Scenario, seed: int) -> str:
    return f"{scenario.name}-{seed}.trace"


def run(scenario: Scenario, seed: int | None = None, trace_dir: str | Path | None = None,
        force: bool = False) -> RunReport:
    """Run one seed. With ``trace_dir`` the trace is written there as ``<name>-<seed>.trace``."""
    seed = scenario.seed if seed is None else seed
    target = None
    if trace_dir is not None:
        target = Path(trace_dir) / trace_filename(scenario, seed)
        if target.exists() and not force:
            raise FileExistsError(f"{target} exists; pass force to overwrite")
    proto = scenario.protocol
    params = scenario.params
    sim = Simulator(scenario.config(seed), proto.build(scenario.config(seed), params))
    violation = index = None
    try:
        outcome = sim.run_until(proto.halt(params), scenario.model.step_budget, observer=proto.observer)
        halted_by = outcome.halted_by.value
        steps = outcome.steps
    except InvariantViolation as exc:
        violation = str(exc)
        index = exc.record_index if exc.record_index is not None else len(sim.trace) - 1
        outcome = None
        halted_by, steps = "Violation", len(sim.trace)
    results = {}
    for name in scenario.expectations:
        _, check = proto.checks[name]
        try:
            results[name] = bool(outcome is not None and check(sim, outcome, params))
        except InvariantViolation as exc:
            results[name] = False
            violation = violation or str(exc)
    m = metrics(sim.trace)
    decisions = [dict(to_jsonable(d), pid=p) for p in sorted(sim.decisions) for d in sim.decisions[p]]
    text = dump_trace(sim.trace)
    if target is not None:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text)
    return RunReport(scenario.name, seed, halted_by, steps, m.message_count,
                     m.communication_steps, decisions, results, violation, index,
                     str(target) if target is not None else None, text)


@dataclass
class SweepReport:
    scenario: str
    seeds: list[int]
    pass_rate: float
    mean_message_count: float
    mean_communication_steps: float
    failing_seeds: list[int]
    reports: list[RunReport] = field(repr=False, default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failing_seeds

    def summary(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if k != "reports"} | {"passed": self.passed}


def _run_seed(args) -> RunReport:
    scenario, seed = args
    return run(scenario, seed)


def sweep(scenario: Scenario, seeds: Sequence[int], jobs: int = 1) -> SweepReport:
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("a sweep needs at least one seed")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_seed, [(scenario, s) for s in seeds]))
    else:
        reports = [run(scenario, s) for s in seeds]
    failing = [r.seed for r in reports if not r.passed]
    return SweepReport(
        scenario.name, seeds,
        pass_rate=(len(reports) - len(failing)) / len(reports),
        mean_message_count=statistics.fmean(r.message_count for r in reports),
        mean_communication_steps=statistics.fmean(r.communication_steps for r in reports),
        failing_seeds=failing,
        reports=reports,
    )


def parse_seed_range(text: str) -> range:
    """``A..B`` with both ends inclusive; a bare ``N`` is a single seed."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(text)
    except ValueError:
        raise ConfigError(f"bad seed range {text!r}; expected A..B") from None
    if hi < lo:
        raise ConfigError(f"empty seed range {text!r}")
    return range(lo, hi + 1)
