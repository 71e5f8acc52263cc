"""Ground truth and the discrete-event engine.

The world owns every entity, the obstacle set, the single true-time clock and
the event queue.  Per-node clocks are views over true time (see
:func:`read_clock`), so synchronisation error is always measurable against
ground truth.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING, Any, Callable, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:
    from .coordination import CapabilityProfile
    from .radio import RadioConfig
    from .sensing import SensorConfig

SPEED_OF_LIGHT = 299_792_458.0
MAX_DRIFT_PPM = 20.0

Vec3 = tuple[float, float, float]


class NodeKind(str, Enum):
    VEHICLE = "Vehicle"
    DRONE = "Drone"
    RSU = "RSU"
    MEC = "MEC"
    BASE_STATION = "BaseStation"
    NON_COOP_EMITTER = "NonCoopEmitter"
    RADAR_OBJECT = "RadarObject"

    @property
    def mobile(self) -> bool:
        return self not in (NodeKind.MEC, NodeKind.BASE_STATION, NodeKind.RSU)

    @property
    def can_communicate(self) -> bool:
        return self not in (NodeKind.NON_COOP_EMITTER, NodeKind.RADAR_OBJECT)

    @property
    def ground(self) -> bool:
        return self is not NodeKind.DRONE


@dataclass(frozen=True)
class Pose:
    position: Vec3 = (0.0, 0.0, 0.0)
    velocity: Vec3 = (0.0, 0.0, 0.0)
    yaw: float = 0.0

    def __post_init__(self):
        values = (*self.position, *self.velocity, self.yaw)
        if len(self.position) != 3 or len(self.velocity) != 3:
            raise ValueError("position and velocity must be 3-vectors")
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"non-finite pose component in {values}")


@dataclass(frozen=True)
class ClockState:
    """Local clock as an affine view of true time.

    ``drift`` is in parts-per-million; ``achieved_class`` is 0 when the clock
    is not synchronised.
    """

    offset: float = 0.0
    drift: float = 0.0
    last_sync: float = 0.0
    achieved_class: int = 0


def read_clock(clock: ClockState, true_time: float) -> float:
    return true_time + clock.offset + clock.drift * 1e-6 * (true_time - clock.last_sync)


def clock_error(clock: ClockState, true_time: float) -> float:
    return read_clock(clock, true_time) - true_time


@dataclass(frozen=True)
class Obstacle:
    lo: Vec3
    hi: Vec3

    def __post_init__(self):
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError(f"obstacle min corner {self.lo} exceeds max corner {self.hi}")


@dataclass(frozen=True)
class Segment:
    """Constant-velocity leg of a scripted trajectory, valid from ``start``."""

    start: float
    velocity: Vec3


@dataclass(frozen=True)
class EmitterConfig:
    tx_power: float = 20.0  # dBm
    freq: float = 2.4e9
    emissions: tuple[float, ...] = ()


@dataclass
class Node:
    id: int
    kind: NodeKind
    pose: Pose = field(default_factory=Pose)
    clock: ClockState = field(default_factory=ClockState)
    radio: RadioConfig | None = None
    sensor: SensorConfig | None = None
    profile: CapabilityProfile | None = None
    trajectory: tuple[Segment, ...] = ()
    rcs: float = 10.0  # dBsm
    emitter: EmitterConfig | None = None
    failed: bool = False

    @property
    def position(self) -> np.ndarray:
        return np.asarray(self.pose.position, dtype=float)

    @property
    def sensing_active(self) -> bool:
        return self.sensor is not None and not self.failed

    @property
    def radio_capable(self) -> bool:
        return self.kind.can_communicate and self.radio is not None and not self.failed

    def velocity_at(self, t: float) -> Vec3:
        if not self.kind.mobile:
            return (0.0, 0.0, 0.0)
        current = self.pose.velocity
        for seg in self.trajectory:
            if seg.start <= t:
                current = seg.velocity
            else:
                break
        return current


@dataclass(order=True)
class Event:
    due: float
    seq: int
    kind: str = field(compare=False)
    node: int | None = field(default=None, compare=False)
    data: dict = field(default_factory=dict, compare=False)
    # Simulation-side attachment (messages, truth labels); never written to the trace.
    obj: Any = field(default=None, compare=False, repr=False)


class SimulationError(RuntimeError):
    pass


Handler = Callable[["World", Event], None]


class World:
    def __init__(self, nodes: Iterable[Node] = (), obstacles: Iterable[Obstacle] = (), time: float = 0.0):
        self.nodes: dict[int, Node] = {}
        for node in nodes:
            if node.id in self.nodes:
                raise ValueError(f"duplicate node id {node.id}")
            self.nodes[node.id] = node
        self.obstacles: list[Obstacle] = list(obstacles)
        self.time = float(time)
        self.handlers: dict[str, Handler] = {}
        self.trace: list[dict] = []
        self._queue: list[Event] = []
        self._seq = 0

    def node(self, node_id: int) -> Node:
        return self.nodes[node_id]

    def nodes_of(self, *kinds: NodeKind) -> list[Node]:
        return [n for n in self.nodes.values() if n.kind in kinds]

    def schedule(self, due: float, kind: str, node: int | None = None, data: dict | None = None, obj: Any = None) -> Event:
        if due < self.time:
            raise ValueError(f"cannot schedule {kind!r} at {due} before current time {self.time}")
        event = Event(float(due), self._seq, kind, node, data or {}, obj)
        self._seq += 1
        heapq.heappush(self._queue, event)
        return event

    def pending(self) -> list[Event]:
        return sorted(self._queue)

    def emit(self, kind: str, node: int | None = None, payload: dict | None = None) -> None:
        self.trace.append({"t": self.time, "node": node, "kind": kind, "payload": payload or {}})

    def trace_jsonl(self) -> str:
        return "".join(format_record(r) + "\n" for r in self.trace)


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    if isinstance(value, Enum):
        return value.value
    raise TypeError(f"not JSON serialisable: {type(value).__name__}")


def format_record(record: dict) -> str:
    """One JSON Lines record; ``t`` always carries nine decimals."""
    rest = json.dumps(
        {"node": record["node"], "kind": record["kind"], "payload": record["payload"]},
        sort_keys=True,
        separators=(",", ":"),
        default=_json_default,
    )
    return '{"t":%.9f,' % record["t"] + rest[1:]


def _integrate(node: Node, t0: float, t1: float) -> Vec3:
    """Displacement of ``node`` over [t0, t1] under its piecewise-constant script."""
    if not node.kind.mobile or t1 <= t0:
        return (0.0, 0.0, 0.0)
    cuts = [t0] + [s.start for s in node.trajectory if t0 < s.start < t1] + [t1]
    dx = [0.0, 0.0, 0.0]
    for a, b in zip(cuts, cuts[1:]):
        v = node.velocity_at(a)
        for i in range(3):
            dx[i] += v[i] * (b - a)
    return (dx[0], dx[1], dx[2])


def advance(world: World, dt: float) -> World:
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    t0, t1 = world.time, world.time + dt
    for node in world.nodes.values():
        if not node.kind.mobile:
            continue
        d = _integrate(node, t0, t1)
        p = node.pose.position
        pos = (p[0] + d[0], p[1] + d[1], p[2] + d[2])
        if node.kind.ground:
            pos = (pos[0], pos[1], max(pos[2], 0.0))
        node.pose = replace(node.pose, position=pos, velocity=node.velocity_at(t1))
    world.time = t1
    return world


def _advance_to(world: World, t: float) -> None:
    if t > world.time:
        advance(world, t - world.time)


def run_events(world: World, until: float) -> list[dict]:
    """Dispatch every queued event due at or before ``until``.

    Returns the trace records produced during this call.
    """
    if until < world.time:
        raise ValueError(f"until={until} is before current time {world.time}")
    start = len(world.trace)
    while world._queue and world._queue[0].due <= until:
        event = heapq.heappop(world._queue)
        _advance_to(world, event.due)
        world.emit(event.kind, event.node, event.data)
        handler = world.handlers.get(event.kind)
        if handler is None:
            continue
        try:
            handler(world, event)
        except Exception as exc:
            raise SimulationError(
                f"handler for event {event.kind!r} (seq={event.seq}, node={event.node}, t={event.due:.9f}) failed: {exc}"
            ) from exc
    _advance_to(world, until)
    return world.trace[start:]


def line_of_sight(world: World | Sequence[Obstacle], a: Sequence[float], b: Sequence[float]) -> bool:
    """True when segment a->b does not pass through the interior of any obstacle.

    Touching or sliding along a face counts as clear.
    """
    obstacles = world.obstacles if isinstance(world, World) else world
    a = tuple(float(v) for v in a)
    b = tuple(float(v) for v in b)
    if a == b:
        raise ValueError("line_of_sight needs two distinct points")
    for box in obstacles:
        if _segment_enters(box, a, b):
            return False
    return True


def _segment_enters(box: Obstacle, a: Vec3, b: Vec3) -> bool:
    t_enter, t_exit = 0.0, 1.0
    for i in range(3):
        d = b[i] - a[i]
        lo, hi = box.lo[i], box.hi[i]
        if d == 0.0:
            if not lo < a[i] < hi:
                return False
            continue
        t0, t1 = (lo - a[i]) / d, (hi - a[i]) / d
        if t0 > t1:
            t0, t1 = t1, t0
        t_enter, t_exit = max(t_enter, t0), min(t_exit, t1)
        if t_enter >= t_exit:
            return False
    return t_exit - t_enter > 1e-12


def ray_box_entry(box: Obstacle, origin: Sequence[float], direction: Sequence[float]) -> float | None:
    """Distance along a unit ray to the first face of ``box``, or None on a miss."""
    t_enter, t_exit = 0.0, math.inf
    for i in range(3):
        d = direction[i]
        lo, hi = box.lo[i], box.hi[i]
        if abs(d) < 1e-15:
            if not lo <= origin[i] <= hi:
                return None
            continue
        t0, t1 = (lo - origin[i]) / d, (hi - origin[i]) / d
        if t0 > t1:
            t0, t1 = t1, t0
        t_enter, t_exit = max(t_enter, t0), min(t_exit, t1)
        if t_enter > t_exit:
            return None
    return t_enter if t_enter > 0.0 else None
