"""Declarative YAML scenarios, validated with pydantic before anything runs.

Validation errors name the offending field and the YAML line it sits on.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from protolab.errors import ConfigError
from protolab.protocols import REGISTRY, get_protocol
from protolab.simnet import ChannelSpec, SimConfig

PROTOCOLS = (
    "lamport-demo", "vector-demo", "fdetect", "election", "paxos", "seq-paxos", "raft",
    "2pc", "3pc", "lww-sync", "gossip", "merkle-diff",
)


class ScenarioError(ConfigError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        super().__init__(message)
        self.field = field
        self.line = line


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ChannelModel(_Strict):
    kind: Literal["FairLoss", "Stubborn", "Perfect"] = "Perfect"
    drop_probability: float = Field(0.0, ge=0.0, le=1.0)
    max_delay: int = Field(1, ge=1)
    duplicate_probability: float = Field(0.0, ge=0.0, le=1.0)
    retransmit_interval: int = Field(1, ge=1)


class PartitionModel(_Strict):
    start: int = Field(ge=0)
    end: int = Field(ge=0)
    groups: list[list[int]]


class SpikeModel(_Strict):
    start: int = Field(ge=0)
    end: int = Field(ge=0)
    extra: int = Field(ge=0)


class SimModel(_Strict):
    n_processes: int = Field(ge=1)
    seed: int = 0
    channel: ChannelModel = ChannelModel()
    crash_schedule: dict[int, int] = {}
    partition_schedule: list[PartitionModel] = []
    delay_spikes: list[SpikeModel] = []

    def config(self, seed: int | None = None) -> SimConfig:
        c = self.channel
        return SimConfig(
            n_processes=self.n_processes,
            seed=self.seed if seed is None else seed,
            channel=ChannelSpec(c.kind, c.drop_probability, c.max_delay,
                                c.duplicate_probability, c.retransmit_interval),
            crash_schedule=dict(self.crash_schedule),
            partition_schedule=tuple((w.start, w.end, tuple(tuple(g) for g in w.groups))
                                     for w in self.partition_schedule),
            delay_spikes=tuple((s.start, s.end, s.extra) for s in self.delay_spikes),
        )


class ScenarioModel(_Strict):
    name: Optional[str] = None
    protocol: Literal[PROTOCOLS]  # type: ignore[valid-type]
    sim: SimModel
    protocol_params: dict[str, Any] = {}
    step_budget: int = Field(10_000, ge=1)
    expectations: list[str] = []


class Scenario:
    """A validated scenario: raw model plus the protocol's typed parameters."""

    def __init__(self, model: ScenarioModel, params: BaseModel, name: str):
        self.model = model
        self.params = params
        self.name = name

    @property
    def protocol(self):
        return get_protocol(self.model.protocol)

    @property
    def expectations(self) -> tuple[str, ...]:
        return tuple(self.model.expectations) or self.protocol.default_checks

    def config(self, seed: int | None = None) -> SimConfig:
        return self.model.sim.config(seed)

    @property
    def seed(self) -> int:
        return self.model.sim.seed


def _node_at(root: yaml.Node | None, loc: tuple) -> yaml.Node | None:
    """Deepest YAML node along ``loc``; mapping keys resolve to their key node."""
    node, found = root, root
    for part in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if str(k.value) == str(part):
                    found, nxt = k, v
                    break
            if nxt is None:
                return found
            node = nxt
            if not isinstance(node, (yaml.MappingNode, yaml.SequenceNode)):
                return found
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = found = node.value[part]
        else:
            return found
    return found


def _raise_validation(err: ValidationError, root, source: str, prefix: tuple = ()) -> None:
    first = err.errors()[0]
    loc = prefix + tuple(first["loc"])
    node = _node_at(root, loc)
    line = node.start_mark.line + 1 if node is not None else None
    dotted = ".".join(str(p) for p in loc) or "<root>"
    where = f"{source}:{line}" if line else source
    raise ScenarioError(f"{where}: {dotted}: {first['msg']}", field=dotted, line=line)


def parse_scenario(text: str, source: str = "<scenario>", default_name: str = "scenario") -> Scenario:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ScenarioError(f"{source}:{line}: YAML parse error: {exc}", line=line) from None
    if not isinstance(data, dict):
        raise ScenarioError(f"{source}: a scenario must be a mapping")
    try:
        model = ScenarioModel.model_validate(data)
    except ValidationError as err:
        _raise_validation(err, root, source)
    proto = get_protocol(model.protocol)
    try:
        params = proto.params_model.model_validate(model.protocol_params)
    except ValidationError as err:
        _raise_validation(err, root, source, ("protocol_params",))
    for i, name in enumerate(model.expectations):
        if name not in proto.checks:
            node = _node_at(root, ("expectations", i))
            line = node.start_mark.line + 1 if node is not None else None
            raise ScenarioError(
                f"{source}:{line}: expectations.{i}: unknown invariant {name!r} for "
                f"{model.protocol}; known: {', '.join(sorted(proto.checks))}",
                field=f"expectations.{i}", line=line,
            )
    scenario = Scenario(model, params, model.name or default_name)
    # cross-field checks (process ids in range and the like) happen here, not mid-run
    for field, build in (("sim", lambda: scenario.config()),
                         ("protocol_params", lambda: proto.build(scenario.config(), params))):
        try:
            build()
        except ConfigError as exc:
            node = _node_at(root, (field,))
            line = node.start_mark.line + 1 if node is not None else None
            raise ScenarioError(f"{source}:{line}: {field}: {exc}", field=field, line=line) from None
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read scenario: {exc.strerror}") from None
    return parse_scenario(text, str(path), path.stem)


def known_protocols() -> list[str]:
    return sorted(REGISTRY)
