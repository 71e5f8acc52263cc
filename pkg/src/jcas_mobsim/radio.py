"""Link budget and conflict-graph slot scheduling for sidelink and cellular links."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .dataflow import Message, encode
from .world import SPEED_OF_LIGHT, Node, World

FSPL_CONSTANT = 147.55
THERMAL_NOISE_DBM_HZ = -174.0
DECODE_THRESHOLD_DB = 3.0
SLOT_DURATION = 1e-3


@dataclass(frozen=True)
class RadioConfig:
    carrier_freq: float = 6e9
    bandwidth: float = 100e6
    tx_power: float = 23.0  # dBm
    antenna_gain: float = 3.0  # dBi
    noise_figure: float = 9.0  # dB
    spectral_efficiency: float = 2.0  # bit/s/Hz
    # Azimuth half-angle covered by the antenna pattern (lateral coverage knob).
    azimuth_fov: float = math.pi

    def __post_init__(self):
        for name in ("carrier_freq", "bandwidth", "tx_power", "antenna_gain", "noise_figure", "spectral_efficiency"):
            if not getattr(self, name) > 0:
                raise ValueError(f"RadioConfig.{name} must be positive")
        if self.spectral_efficiency > 8:
            raise ValueError("spectral_efficiency must not exceed 8 bit/s/Hz")
        if not 0 < self.azimuth_fov <= math.pi:
            raise ValueError("azimuth_fov must lie in (0, pi]")

    @classmethod
    def sidelink(cls, **kw) -> RadioConfig:
        return cls(**kw)

    @classmethod
    def cellular(cls, **kw) -> RadioConfig:
        params = dict(carrier_freq=3.5e9, bandwidth=100e6, tx_power=46.0, antenna_gain=15.0, noise_figure=7.0, spectral_efficiency=4.0)
        params.update(kw)
        return cls(**params)

    @classmethod
    def cellular_ue(cls, **kw) -> RadioConfig:
        """Uplink side of a cellular link as seen from a mobile node or a roadside unit."""
        params = dict(carrier_freq=3.5e9, bandwidth=100e6, tx_power=23.0, antenna_gain=3.0, noise_figure=9.0, spectral_efficiency=2.0)
        params.update(kw)
        return cls(**params)


def path_loss(distance: float, freq: float) -> float:
    """Free-space path loss in dB (distance in m, frequency in Hz)."""
    if distance <= 0 or freq <= 0:
        raise ValueError("distance and frequency must be positive")
    return 20 * math.log10(distance) + 20 * math.log10(freq) - FSPL_CONSTANT


def noise_floor(config: RadioConfig) -> float:
    return THERMAL_NOISE_DBM_HZ + 10 * math.log10(config.bandwidth) + config.noise_figure


def link_snr(tx: RadioConfig, rx: RadioConfig, distance: float) -> float:
    if distance <= 0:
        raise ValueError("distance must be positive")
    received = tx.tx_power + tx.antenna_gain + rx.antenna_gain - path_loss(distance, tx.carrier_freq)
    return received - noise_floor(rx)


def airtime(n_bytes: int, config: RadioConfig) -> float:
    if n_bytes < 0:
        raise ValueError("byte count must be non-negative")
    return 8 * n_bytes / (config.bandwidth * config.spectral_efficiency)


@dataclass(frozen=True)
class ConflictGraph:
    vertices: frozenset[int]
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        for a, b in self.edges:
            if a == b:
                raise ValueError(f"self-edge on {a}")
            if a not in self.vertices or b not in self.vertices:
                raise ValueError(f"edge ({a}, {b}) references unknown vertex")

    @classmethod
    def from_edges(cls, vertices: Iterable[int], edges: Iterable[tuple[int, int]]) -> ConflictGraph:
        return cls(frozenset(vertices), frozenset((min(a, b), max(a, b)) for a, b in edges))

    def neighbors(self, v: int) -> set[int]:
        return {b if a == v else a for a, b in self.edges if v in (a, b)}

    def max_degree(self) -> int:
        return max((len(self.neighbors(v)) for v in self.vertices), default=0)


@dataclass(frozen=True)
class SlotAllocation:
    slots: dict[int, int]
    period: int

    def slot_of(self, node_id: int) -> int | None:
        return self.slots.get(node_id)

    def owner_allows(self, node_id: int, t: float, slot_duration: float = SLOT_DURATION) -> bool:
        slot = self.slots.get(node_id)
        if slot is None:
            return True
        return current_slot(t, slot_duration) % self.period == slot

    def next_slot_start(self, node_id: int, t: float, slot_duration: float = SLOT_DURATION) -> float:
        """Earliest slot start >= t owned by ``node_id``."""
        slot = self.slots.get(node_id)
        if slot is None:
            return t
        n = math.ceil(round(t / slot_duration, 9))
        n += (slot - n) % self.period
        return n * slot_duration


def current_slot(t: float, slot_duration: float = SLOT_DURATION) -> int:
    # rounding guards against t = k*slot_duration landing a hair below the boundary
    return math.floor(round(t / slot_duration, 9))


def build_conflict_graph(nodes: Iterable[Node], interference_range: float) -> ConflictGraph:
    if interference_range <= 0:
        raise ValueError("interference_range must be positive")
    active = sorted((n for n in nodes if n.sensing_active), key=lambda n: n.id)
    edges = []
    for i, a in enumerate(active):
        for b in active[i + 1 :]:
            if float(np.linalg.norm(a.position - b.position)) <= interference_range:
                edges.append((a.id, b.id))
    return ConflictGraph.from_edges((n.id for n in active), edges)


def assign_slots(graph: ConflictGraph) -> SlotAllocation:
    """Greedy colouring in ascending node id order."""
    adjacency = {v: graph.neighbors(v) for v in graph.vertices}
    slots: dict[int, int] = {}
    for v in sorted(graph.vertices):
        taken = {slots[u] for u in adjacency[v] if u in slots}
        s = 0
        while s in taken:
            s += 1
        slots[v] = s
    period = max(slots.values(), default=0) + 1
    return SlotAllocation(slots, period)


@dataclass(frozen=True)
class Delivered:
    at: float
    snr: float
    airtime: float
    slot: int


@dataclass(frozen=True)
class Dropped:
    reason: str  # OutOfSlot | LowSnr | Overflow
    snr: float = float("nan")


@dataclass
class SlotLedger:
    """Airtime already queued per (transmitter, absolute slot)."""

    used: dict[tuple[int, int], float] = field(default_factory=dict)

    def fits(self, tx: int, slot: int, duration: float, slot_duration: float) -> bool:
        return self.used.get((tx, slot), 0.0) + duration <= slot_duration + 1e-15

    def book(self, tx: int, slot: int, duration: float) -> None:
        self.used[(tx, slot)] = self.used.get((tx, slot), 0.0) + duration


def transmit(
    message: Message | bytes,
    tx_node: Node,
    rx_node: Node,
    world: World,
    allocation: SlotAllocation | None,
    ledger: SlotLedger | None = None,
    *,
    threshold_db: float = DECODE_THRESHOLD_DB,
    slot_duration: float = SLOT_DURATION,
    tx_config: RadioConfig | None = None,
    rx_config: RadioConfig | None = None,
) -> Delivered | Dropped:
    if not (tx_node.radio_capable and rx_node.radio_capable):
        raise ValueError(f"nodes {tx_node.id} and {rx_node.id} must both be radio-capable")
    data = message if isinstance(message, (bytes, bytearray)) else encode(message)
    tx_cfg = tx_config or tx_node.radio
    rx_cfg = rx_config or rx_node.radio
    now = world.time
    slot = current_slot(now, slot_duration)
    if allocation is not None and not allocation.owner_allows(tx_node.id, now, slot_duration):
        return Dropped("OutOfSlot")
    distance = max(float(np.linalg.norm(tx_node.position - rx_node.position)), 1e-3)
    snr = link_snr(tx_cfg, rx_cfg, distance)
    if snr < threshold_db:
        return Dropped("LowSnr", snr)
    duration = airtime(len(data), tx_cfg)
    if allocation is not None and allocation.slot_of(tx_node.id) is not None:
        ledger = ledger if ledger is not None else SlotLedger()
        slot_end = (slot + 1) * slot_duration
        if now + duration > slot_end + 1e-15 or not ledger.fits(tx_node.id, slot, duration, slot_duration):
            return Dropped("Overflow", snr)
        ledger.book(tx_node.id, slot, duration)
    return Delivered(now + duration + distance / SPEED_OF_LIGHT, snr, duration, slot)
