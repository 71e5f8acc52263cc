"""Shared fixtures and the acceptance-summary hook."""

from __future__ import annotations

import math

import pytest

from jcas_mobsim.coordination import CapabilityProfile
from jcas_mobsim.radio import RadioConfig
from jcas_mobsim.sensing import SensorConfig
from jcas_mobsim.world import ClockState, Node, NodeKind, Pose

ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, ok: bool, detail: str) -> None:
    """Record one acceptance line; printed again in the terminal summary."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


def make_node(
    node_id: int,
    kind: NodeKind = NodeKind.VEHICLE,
    position=(0.0, 0.0, 0.0),
    velocity=(0.0, 0.0, 0.0),
    yaw: float = 0.0,
    sensor: SensorConfig | None = None,
    radio: RadioConfig | None = None,
    sync_class: int = 3,
    **kw,
) -> Node:
    passive = kind in (NodeKind.RADAR_OBJECT, NodeKind.NON_COOP_EMITTER)
    return Node(
        id=node_id,
        kind=kind,
        pose=Pose(tuple(map(float, position)), tuple(map(float, velocity)), yaw),
        clock=ClockState(achieved_class=0 if passive else sync_class),
        radio=None if passive else (radio or RadioConfig()),
        sensor=None if passive else (sensor or SensorConfig(field_of_view=math.pi)),
        profile=None if passive else CapabilityProfile(),
        **kw,
    )


@pytest.fixture
def node_factory():
    return make_node
