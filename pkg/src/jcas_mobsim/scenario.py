"""Scenario files: YAML loading with validation against a defaults table.

Defaults applied when a key is omitted (see ``DEFAULTS`` and ``KIND_DEFAULTS``):

==========================  ===============================================
key                         default
==========================  ===============================================
timing.frame_period         0.1 s
timing.sync_interval        0.25 s
timing.group_interval       1.0 s
timing.slot_duration        1 ms
network.comm_range          120 m (sidelink decode threshold is reached near 1.4 km)
network.interference_range  equal to comm_range
network.sync_class          2
network.sync_source         leader  (or ``base_station``)
network.fusion_host         leader  (or ``mec``)
network.floor_granularity   10 m
network.raw_share_attempts  true
app_requirement             CL3
noise                       true (false disables every random draw)
policy                      shipped default ruleset (privacy.DEFAULT_RULES)
==========================  ===============================================

Presets pick their own speeds and geometry; nothing else depends on them.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .coordination import CapabilityProfile, CoopLevel
from .dataflow import Waveform
from .privacy import DEFAULT_RULES, Allow, ConsentRecord, Deny, PolicyError, PolicyRule, Transform
from .radio import RadioConfig
from .sensing import SensorConfig
from .world import MAX_DRIFT_PPM, ClockState, EmitterConfig, Node, NodeKind, Obstacle, Pose, Segment

PRESETS = ("tc1", "tc2", "tc3", "tc4", "tc5")

DEFAULTS: dict[str, dict[str, Any]] = {
    "timing": {"frame_period": 0.1, "sync_interval": 0.25, "group_interval": 1.0, "slot_duration": 1e-3},
    "network": {
        "comm_range": 120.0,
        "interference_range": None,
        "sync_class": 2,
        "sync_source": "leader",
        "fusion_host": "leader",
        "floor_granularity": 10.0,
        "raw_share_attempts": True,
    },
}

KIND_DEFAULTS: dict[NodeKind, dict[str, Any]] = {
    NodeKind.VEHICLE: {"radio": "sidelink", "sensor": {}, "profile": {"compute_units": 2.0}},
    NodeKind.DRONE: {"radio": "sidelink", "sensor": {}, "profile": {"compute_units": 1.0}},
    NodeKind.RSU: {"radio": "sidelink", "sensor": {}, "profile": {"compute_units": 4.0}},
    NodeKind.MEC: {"radio": "cellular", "sensor": None, "profile": {"compute_units": 64.0, "supports_sidelink": False, "supports_sensing": False}},
    NodeKind.BASE_STATION: {"radio": "cellular", "sensor": None, "profile": {"compute_units": 8.0, "supports_sidelink": False, "supports_sensing": False}},
    NodeKind.NON_COOP_EMITTER: {"radio": None, "sensor": None, "profile": None},
    NodeKind.RADAR_OBJECT: {"radio": None, "sensor": None, "profile": None},
}

MAX_SEED = 2**64 - 1


class ScenarioError(ValueError):
    pass


class ParseError(ScenarioError):
    def __init__(self, line: int | None, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ValidationError(ScenarioError):
    def __init__(self, field: str, message: str = "invalid"):
        self.field = field
        super().__init__(f"{field}: {message}")


@dataclass
class NodeSpec:
    id: int
    kind: NodeKind
    pose: Pose
    clock: ClockState
    radio: RadioConfig | None
    sensor: SensorConfig | None
    profile: CapabilityProfile | None
    trajectory: tuple[Segment, ...] = ()
    rcs: float = 10.0
    emitter: EmitterConfig | None = None
    role: str | None = None

    def build(self) -> Node:
        return Node(
            id=self.id,
            kind=self.kind,
            pose=self.pose,
            clock=self.clock,
            radio=self.radio,
            sensor=self.sensor,
            profile=self.profile,
            trajectory=self.trajectory,
            rcs=self.rcs,
            emitter=self.emitter,
        )


@dataclass
class Scenario:
    name: str
    seed: int
    duration: float
    nodes: list[NodeSpec]
    area: tuple[float, float] = (500.0, 500.0)
    obstacles: list[Obstacle] = field(default_factory=list)
    policy: tuple[PolicyRule, ...] = DEFAULT_RULES
    app_requirement: CoopLevel = CoopLevel.CL3
    timing: dict[str, float] = field(default_factory=lambda: dict(DEFAULTS["timing"]))
    network: dict[str, Any] = field(default_factory=lambda: dict(DEFAULTS["network"]))
    mapping: dict[str, Any] | None = None
    sar: dict[str, Any] | None = None
    virtual_sensors: list[dict[str, Any]] = field(default_factory=list)
    faults: list[dict[str, Any]] = field(default_factory=list)
    consents: list[ConsentRecord] = field(default_factory=list)
    emitter_height: float = 0.0
    noise: bool = True
    requirements: list[str] = field(default_factory=list)
    description: str = ""

    def node(self, node_id: int) -> NodeSpec:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def without(self, *node_ids: int) -> Scenario:
        """Copy of the scenario with some roster entries removed."""
        drop = set(node_ids)
        return replace(copy.deepcopy(self), nodes=[copy.deepcopy(n) for n in self.nodes if n.id not in drop])

    def with_overrides(
        self,
        seed: int | None = None,
        duration: float | None = None,
        app_requirement: int | None = None,
        noise: bool | None = None,
    ) -> Scenario:
        sc = copy.deepcopy(self)
        if noise is not None:
            sc.noise = bool(noise)
        if seed is not None:
            _check_seed(seed)
            sc.seed = int(seed)
        if duration is not None:
            if not duration > 0:
                raise ValidationError("duration", "must be positive")
            sc.duration = float(duration)
        if app_requirement is not None:
            sc.app_requirement = CoopLevel(app_requirement)
        return sc


def _check_seed(seed) -> None:
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= MAX_SEED:
        raise ValidationError("seed", "must be an unsigned 64-bit integer")


def _num(raw: dict, key: str, path: str, default=None, positive=False, non_negative=False) -> float:
    value = raw.get(key, default)
    if value is None:
        raise ValidationError(f"{path}{key}", "required")
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ValidationError(f"{path}{key}", "must be a finite number")
    if positive and value <= 0:
        raise ValidationError(f"{path}{key}", "must be positive")
    if non_negative and value < 0:
        raise ValidationError(f"{path}{key}", "must be non-negative")
    return float(value)


def _vec(raw, path: str, n: int = 3) -> tuple[float, ...]:
    if not isinstance(raw, (list, tuple)) or len(raw) != n:
        raise ValidationError(path, f"must be a list of {n} numbers")
    out = []
    for i, v in enumerate(raw):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ValidationError(f"{path}[{i}]", "must be a finite number")
        out.append(float(v))
    return tuple(out)


def _construct(cls, kwargs: dict, path: str):
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValidationError(path, str(exc)) from None
    except ValueError as exc:
        raise ValidationError(path, str(exc)) from None


def _radio(raw, path: str) -> RadioConfig | None:
    if raw is None:
        return None
    if raw == "sidelink":
        return RadioConfig.sidelink()
    if raw == "cellular":
        return RadioConfig.cellular()
    if not isinstance(raw, dict):
        raise ValidationError(path, "must be 'sidelink', 'cellular', a mapping or null")
    raw = dict(raw)
    base = raw.pop("base", "sidelink")
    factory = RadioConfig.cellular if base == "cellular" else RadioConfig.sidelink
    try:
        return factory(**raw)
    except (TypeError, ValueError) as exc:
        raise ValidationError(path, str(exc)) from None


def _sensor(raw, path: str) -> SensorConfig | None:
    if raw is None:
        return None
    if not isinstance(raw, dict):
        raise ValidationError(path, "must be a mapping or null")
    raw = dict(raw)
    if "waveform" in raw:
        try:
            raw["waveform"] = Waveform[str(raw["waveform"]).upper()]
        except KeyError:
            raise ValidationError(f"{path}.waveform", f"unknown waveform {raw['waveform']!r}") from None
    return _construct(SensorConfig, raw, path)


def _node(raw, i: int, seen: set[int]) -> NodeSpec:
    path = f"nodes[{i}]."
    if not isinstance(raw, dict):
        raise ValidationError(f"nodes[{i}]", "must be a mapping")
    node_id = raw.get("id")
    if isinstance(node_id, bool) or not isinstance(node_id, int) or not 0 <= node_id <= 0xFFFFFFFF:
        raise ValidationError(f"{path}id", "must be an unsigned 32-bit integer")
    if node_id in seen:
        raise ValidationError(f"{path}id", f"duplicate id {node_id}")
    seen.add(node_id)
    try:
        kind = NodeKind(raw.get("kind"))
    except ValueError:
        raise ValidationError(f"{path}kind", f"unknown kind {raw.get('kind')!r}") from None
    defaults = KIND_DEFAULTS[kind]
    position = _vec(raw.get("position", [0, 0, 0]), f"{path}position")
    if kind.ground and position[2] < 0:
        raise ValidationError(f"{path}position", "ground nodes need z >= 0")
    velocity = _vec(raw.get("velocity", [0, 0, 0]), f"{path}velocity")
    if not kind.mobile and any(velocity):
        raise ValidationError(f"{path}velocity", f"{kind.value} nodes are immobile")
    pose = Pose(position, velocity, _num(raw, "yaw", path, 0.0))
    clock_raw = raw.get("clock", {}) or {}
    drift = _num(clock_raw, "drift", f"{path}clock.", 0.0)
    if abs(drift) > MAX_DRIFT_PPM:
        raise ValidationError(f"{path}clock.drift", f"|drift| must not exceed {MAX_DRIFT_PPM} ppm")
    clock = ClockState(offset=_num(clock_raw, "offset", f"{path}clock.", 0.0), drift=drift)
    trajectory = []
    for k, seg in enumerate(raw.get("trajectory", []) or []):
        if not isinstance(seg, dict):
            raise ValidationError(f"{path}trajectory[{k}]", "must be a mapping")
        trajectory.append(Segment(_num(seg, "start", f"{path}trajectory[{k}].", non_negative=True), _vec(seg.get("velocity"), f"{path}trajectory[{k}].velocity")))
    if [s.start for s in trajectory] != sorted(s.start for s in trajectory):
        raise ValidationError(f"{path}trajectory", "segments must be in start order")
    radio = _radio(raw.get("radio", defaults["radio"]), f"{path}radio") if kind.can_communicate else None
    sensor_raw = raw.get("sensor", defaults["sensor"])
    sensor = _sensor(sensor_raw, f"{path}sensor") if kind not in (NodeKind.RADAR_OBJECT, NodeKind.NON_COOP_EMITTER) else None
    profile = None
    if defaults["profile"] is not None:
        praw = dict(defaults["profile"])
        praw.setdefault("supports_sensing", sensor is not None)
        praw.update(raw.get("profile", {}) or {})
        profile = _construct(CapabilityProfile, praw, f"{path}profile")
    emitter = None
    if kind is NodeKind.NON_COOP_EMITTER:
        eraw = raw.get("emitter", {}) or {}
        emitter = EmitterConfig(
            tx_power=_num(eraw, "tx_power", f"{path}emitter.", 20.0),
            freq=_num(eraw, "freq", f"{path}emitter.", 2.4e9, positive=True),
            emissions=tuple(sorted(float(t) for t in eraw.get("emissions", []))),
        )
    role = raw.get("role")
    if role is not None and role not in ("group_member", "leader", "infrastructure", "external"):
        raise ValidationError(f"{path}role", f"unknown role {role!r}")
    return NodeSpec(node_id, kind, pose, clock, radio, sensor, profile, tuple(trajectory), _num(raw, "rcs", path, 10.0), emitter, role)


def _decision(raw, path: str):
    if raw == "allow":
        return Allow()
    if raw == "deny":
        return Deny()
    if isinstance(raw, dict) and "transform" in raw:
        t = raw["transform"] or {}
        return _construct(Transform, {"target_level": t.get("level", 2), "granularity": t.get("granularity", 5.0)}, path)
    raise ValidationError(path, "decision must be allow, deny or {transform: {level, granularity}}")


def _rules(raw) -> tuple[PolicyRule, ...]:
    if raw is None:
        return DEFAULT_RULES
    if not isinstance(raw, list) or not raw:
        raise ValidationError("policy", "must be a non-empty list of rules")
    rules = []
    for i, r in enumerate(raw):
        path = f"policy[{i}]"
        if not isinstance(r, dict):
            raise ValidationError(path, "must be a mapping")
        try:
            rules.append(PolicyRule(r.get("role", "*"), str(r.get("purpose", "*")), int(r.get("min_level", 0)), _decision(r.get("decision"), f"{path}.decision")))
        except PolicyError as exc:
            raise ValidationError(path, str(exc)) from None
    return tuple(rules)


def parse_scenario(doc: Any) -> Scenario:
    if not isinstance(doc, dict):
        raise ValidationError("<root>", "scenario must be a mapping")
    if "seed" not in doc:
        raise ValidationError("seed", "required")
    _check_seed(doc["seed"])
    duration = _num(doc, "duration", "", None)
    if duration <= 0:
        raise ValidationError("duration", "must be positive")
    raw_nodes = doc.get("nodes")
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise ValidationError("nodes", "roster must be a non-empty list")
    seen: set[int] = set()
    nodes = [_node(r, i, seen) for i, r in enumerate(raw_nodes)]
    obstacles = []
    for i, o in enumerate(doc.get("obstacles", []) or []):
        if not isinstance(o, dict):
            raise ValidationError(f"obstacles[{i}]", "must be a mapping")
        lo, hi = _vec(o.get("min"), f"obstacles[{i}].min"), _vec(o.get("max"), f"obstacles[{i}].max")
        obstacles.append(_construct(Obstacle, {"lo": lo, "hi": hi}, f"obstacles[{i}]"))
    timing = dict(DEFAULTS["timing"])
    for key, value in (doc.get("timing") or {}).items():
        if key not in timing:
            raise ValidationError(f"timing.{key}", "unknown key")
        timing[key] = _num({key: value}, key, "timing.", positive=True)
    network = dict(DEFAULTS["network"])
    for key, value in (doc.get("network") or {}).items():
        if key not in network:
            raise ValidationError(f"network.{key}", "unknown key")
        network[key] = value
    if network["interference_range"] is None:
        network["interference_range"] = network["comm_range"]
    for key in ("comm_range", "interference_range", "floor_granularity"):
        network[key] = _num(network, key, "network.", positive=True)
    if network["sync_class"] not in (1, 2, 3):
        raise ValidationError("network.sync_class", "must be 1, 2 or 3")
    if network["sync_source"] not in ("leader", "base_station"):
        raise ValidationError("network.sync_source", "must be leader or base_station")
    if network["fusion_host"] not in ("leader", "mec"):
        raise ValidationError("network.fusion_host", "must be leader or mec")
    area = _vec(doc.get("area", [500, 500]), "area", 2)
    if min(area) <= 0:
        raise ValidationError("area", "must be positive")
    app = doc.get("app_requirement", 3)
    if app not in (1, 2, 3, 4):
        raise ValidationError("app_requirement", "must be 1..4")
    noise = doc.get("noise", True)
    if not isinstance(noise, bool):
        raise ValidationError("noise", "must be true or false")
    ids = {n.id for n in nodes}
    consents = []
    for i, c in enumerate(doc.get("consents", []) or []):
        consents.append(
            _construct(
                ConsentRecord,
                {"zone": _vec(c.get("zone"), f"consents[{i}].zone", 4), "granularity": _num(c, "granularity", f"consents[{i}].", positive=True), "expiry": _num(c, "expiry", f"consents[{i}].")},
                f"consents[{i}]",
            )
        )
    for section in ("virtual_sensors", "faults"):
        for i, entry in enumerate(doc.get(section, []) or []):
            for key in ("node", "target", "to"):
                if key in entry and entry[key] not in ids:
                    raise ValidationError(f"{section}[{i}].{key}", f"unknown node {entry[key]}")
            for j, t in enumerate(entry.get("targets", []) or []):
                if t not in ids:
                    raise ValidationError(f"{section}[{i}].targets[{j}]", f"unknown node {t}")
    for i, entry in enumerate(doc.get("faults", []) or []):
        if "node" not in entry:
            raise ValidationError(f"faults[{i}].node", "required")
        _num(entry, "at", f"faults[{i}].", non_negative=True)
    for section in ("mapping", "sar"):
        entry = doc.get(section)
        if entry is not None:
            if not isinstance(entry, dict):
                raise ValidationError(section, "must be a mapping")
            for key in ("host", "node", "target"):
                if key in entry and isinstance(entry[key], int) and entry[key] not in ids:
                    raise ValidationError(f"{section}.{key}", f"unknown node {entry[key]}")
            for j, t in enumerate(entry.get("scanners", []) or []):
                if t not in ids:
                    raise ValidationError(f"{section}.scanners[{j}]", f"unknown node {t}")
    sar = doc.get("sar")
    if sar is not None:
        for key in ("node", "target", "start", "aperture"):
            if key not in sar:
                raise ValidationError(f"sar.{key}", "required")
    return Scenario(
        name=str(doc.get("name", "scenario")),
        seed=int(doc["seed"]),
        duration=duration,
        nodes=nodes,
        area=area,
        obstacles=obstacles,
        policy=_rules(doc.get("policy")),
        app_requirement=CoopLevel(app),
        timing=timing,
        network=network,
        mapping=doc.get("mapping"),
        sar=doc.get("sar"),
        virtual_sensors=list(doc.get("virtual_sensors", []) or []),
        faults=list(doc.get("faults", []) or []),
        consents=consents,
        emitter_height=_num(doc, "emitter_height", "", 0.0),
        noise=noise,
        requirements=[str(r) for r in doc.get("requirements", []) or []],
        description=str(doc.get("description", "")),
    )


def parse_text(text: str) -> Scenario:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(mark.line + 1 if mark is not None else None, str(getattr(exc, "problem", exc))) from None
    return parse_scenario(doc)


def load_scenario(path: str | Path) -> Scenario:
    return parse_text(Path(path).read_text(encoding="utf-8"))


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("jcas_mobsim.presets").joinpath(f"{name}.yaml").read_text(encoding="utf-8")


def load_preset(name: str) -> Scenario:
    return parse_text(preset_text(name))
