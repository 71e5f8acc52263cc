"""Group formation, leader election, cooperation-level selection, clock
synchronisation and offload decisions."""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from typing import Iterable, Mapping

import numpy as np

from .radio import RadioConfig, airtime
from .world import ClockState, Node

# Residual bound per sync class (seconds) right after an exchange.
SYNC_BOUNDS = {1: 1e-3, 2: 1e-6, 3: 1e-8}
SYNC_VALIDITY = 1.0
COMPUTE_UNIT_RATE = 1e6  # bytes/s processed per compute unit


class CoopLevel(IntEnum):
    CL1 = 1  # separation
    CL2 = 2  # coexistence: scheduled to avoid interference
    CL3 = 3  # cooperation: shared pre-processed sensing data
    CL4 = 4  # integration: communication transmissions reused for sensing


class LinkDown(RuntimeError):
    pass


@dataclass(frozen=True)
class CapabilityProfile:
    supports_sidelink: bool = True
    supports_sensing: bool = True
    supports_jcas_waveform: bool = False
    compute_units: float = 1.0
    max_sync_class: int = 3


@dataclass(frozen=True)
class CoopGroup:
    id: int
    members: frozenset[int]
    leader: int
    level: CoopLevel = CoopLevel.CL1

    def __post_init__(self):
        if not self.members:
            raise ValueError("a group needs at least one member")
        if self.leader not in self.members:
            raise ValueError(f"leader {self.leader} is not a member of group {self.id}")
        if self.level >= CoopLevel.CL3 and len(self.members) < 2:
            raise ValueError("CL3 and above need at least two members")


def form_groups(nodes: Iterable[Node], comm_range: float) -> list[CoopGroup]:
    """Connected components of the sidelink proximity graph.

    Leaders are provisional (lowest id) until :func:`elect_leader` runs.
    """
    if comm_range <= 0:
        raise ValueError("comm_range must be positive")
    capable = sorted(
        (n for n in nodes if n.radio_capable and (n.profile is None or n.profile.supports_sidelink)),
        key=lambda n: n.id,
    )
    parent = {n.id: n.id for n in capable}

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, a in enumerate(capable):
        for b in capable[i + 1 :]:
            if float(np.linalg.norm(a.position - b.position)) <= comm_range:
                ra, rb = find(a.id), find(b.id)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    comps: dict[int, set[int]] = {}
    for n in capable:
        comps.setdefault(find(n.id), set()).add(n.id)
    return [CoopGroup(k, frozenset(m), min(m)) for k, m in enumerate(sorted(comps.values(), key=min))]


def elect_leader(group: CoopGroup | Iterable[int], profiles: Mapping[int, CapabilityProfile]) -> int:
    members = group.members if isinstance(group, CoopGroup) else set(group)
    if not members:
        raise ValueError("cannot elect a leader for an empty group")
    return min(members, key=lambda m: (-profiles[m].compute_units, m))


def supported_level(members: Iterable[int], profiles: Mapping[int, CapabilityProfile]) -> CoopLevel:
    members = list(members)
    ps = [profiles[m] for m in members]
    if not all(p.supports_sidelink for p in ps):
        return CoopLevel.CL1
    if len(members) < 2 or not all(p.supports_sensing and p.max_sync_class >= 2 for p in ps):
        return CoopLevel.CL2
    if not all(p.supports_jcas_waveform for p in ps):
        return CoopLevel.CL3
    return CoopLevel.CL4


def select_coop_level(
    group: CoopGroup, profiles: Mapping[int, CapabilityProfile], app_requirement: CoopLevel | int
) -> CoopGroup:
    """Return ``group`` with the highest level all members support, capped by the app."""
    requirement = CoopLevel(app_requirement)
    level = min(requirement, supported_level(group.members, profiles))
    return replace(group, level=CoopLevel(level))


def discipline_clock(clock: ClockState, target_class: int, now: float, rng: np.random.Generator | None) -> ClockState:
    """Reset a clock to true time within the residual bound of ``target_class``."""
    bound = SYNC_BOUNDS[target_class]
    residual = 0.0 if rng is None else float(rng.uniform(-bound, bound))
    return replace(clock, offset=residual, last_sync=now, achieved_class=target_class)


def sync_valid(clock: ClockState, now: float, validity: float = SYNC_VALIDITY) -> ClockState:
    """Decay the achieved class to 0 once the last exchange is older than ``validity``."""
    if clock.achieved_class and now - clock.last_sync > validity:
        return replace(clock, achieved_class=0)
    return clock


def sync_exchange(
    leader: Node,
    member: Node,
    target_class: int,
    now: float,
    rng: np.random.Generator | None = None,
    link_up: bool = True,
) -> ClockState:
    """Correct ``member``'s clock against the leader's time reference.

    The leader is assumed disciplined to true time.  A lower class than the one
    currently held (and still valid) leaves the clock untouched.
    """
    if leader.id == member.id:
        raise ValueError("leader and member must differ")
    if target_class not in SYNC_BOUNDS:
        raise ValueError(f"sync class must be 1, 2 or 3, got {target_class}")
    if not link_up:
        raise LinkDown(f"no deliverable link {leader.id} -> {member.id}")
    current = sync_valid(member.clock, now)
    if current.achieved_class > target_class:
        return current
    return discipline_clock(current, target_class, now, rng)


class Destination(str, Enum):
    LOCAL = "Local"
    LEADER = "Leader"
    MEC = "Mec"


@dataclass(frozen=True)
class OffloadLink:
    config: RadioConfig
    queueing: float = 0.0
    compute_units: float = 1.0
    available: bool = True


def completion_time(payload_size: int, compute_units: float, link: OffloadLink | None = None) -> float:
    t = payload_size / (compute_units * COMPUTE_UNIT_RATE)
    if link is not None:
        t += airtime(payload_size, link.config) + link.queueing
    return t


def offload_decision(
    producer: int,
    payload_size: int,
    profiles: Mapping[int, CapabilityProfile],
    links: Mapping[Destination, OffloadLink],
) -> Destination:
    """Pick the destination with the lowest estimated completion time.

    Local wins ties; Mec is only eligible when a base-station link is available.
    """
    best = Destination.LOCAL
    best_t = completion_time(payload_size, profiles[producer].compute_units)
    for dest in (Destination.LEADER, Destination.MEC):
        link = links.get(dest)
        if link is None or not link.available:
            continue
        t = completion_time(payload_size, link.compute_units, link)
        if t < best_t:
            best, best_t = dest, t
    return best
