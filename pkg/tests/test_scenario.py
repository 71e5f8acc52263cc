from __future__ import annotations

import math

import pytest
import yaml

from jcas_mobsim.coordination import CoopLevel
from jcas_mobsim.privacy import DEFAULT_RULES, Deny, Transform
from jcas_mobsim.scenario import (
    DEFAULTS,
    PRESETS,
    ParseError,
    ValidationError,
    load_preset,
    load_scenario,
    parse_scenario,
    parse_text,
    preset_text,
)
from jcas_mobsim.world import NodeKind

MINIMAL = {"seed": 1, "duration": 1.0, "nodes": [{"id": 1, "kind": "Vehicle"}]}


def _with(**kw):
    doc = dict(MINIMAL)
    doc.update(kw)
    return doc


def _field(doc) -> str:
    with pytest.raises(ValidationError) as info:
        parse_scenario(doc)
    return info.value.field


@pytest.mark.parametrize("name", PRESETS)
def test_every_preset_loads(name):
    sc = load_preset(name)
    assert sc.name == name
    assert sc.requirements and all(r.startswith("R") for r in sc.requirements)


@pytest.mark.req("R15")
def test_tc3_has_four_observers_and_one_emitter():
    sc = load_preset("tc3")
    sensing = [n for n in sc.nodes if n.sensor is not None]
    emitters = [n for n in sc.nodes if n.kind is NodeKind.NON_COOP_EMITTER]
    assert len(sensing) >= 4 and len(emitters) == 1
    assert sc.network["sync_class"] == 3


@pytest.mark.req("R5")
def test_tc1_has_no_infrastructure():
    kinds = {n.kind for n in load_preset("tc1").nodes}
    assert not kinds & {NodeKind.BASE_STATION, NodeKind.MEC}


def test_missing_seed_and_bad_duration():
    assert _field({k: v for k, v in MINIMAL.items() if k != "seed"}) == "seed"
    assert _field(_with(duration=-1.0)) == "duration"
    assert _field(_with(duration=0)) == "duration"
    assert _field(_with(seed=-1)) == "seed"
    assert _field(_with(seed=2**64)) == "seed"
    assert _field(_with(seed=True)) == "seed"


def test_defaults_are_applied():
    sc = parse_scenario(MINIMAL)
    assert sc.timing == DEFAULTS["timing"]
    assert sc.network["interference_range"] == sc.network["comm_range"] == 120.0
    assert sc.policy == DEFAULT_RULES
    assert sc.app_requirement is CoopLevel.CL3
    assert sc.noise is True
    (node,) = sc.nodes
    assert node.radio is not None and node.sensor is not None and node.profile.compute_units == 2.0


@pytest.mark.parametrize(
    "doc, field",
    [
        (_with(nodes=[]), "nodes"),
        (_with(nodes=[{"id": 1, "kind": "Tank"}]), "nodes[0].kind"),
        (_with(nodes=[{"id": 1, "kind": "Vehicle"}, {"id": 1, "kind": "RSU"}]), "nodes[1].id"),
        (_with(nodes=[{"id": -3, "kind": "Vehicle"}]), "nodes[0].id"),
        (_with(nodes=[{"id": 1, "kind": "RSU", "velocity": [1, 0, 0]}]), "nodes[0].velocity"),
        (_with(nodes=[{"id": 1, "kind": "Vehicle", "position": [0, 0, -1]}]), "nodes[0].position"),
        (_with(nodes=[{"id": 1, "kind": "Vehicle", "clock": {"drift": 25}}]), "nodes[0].clock.drift"),
        (_with(nodes=[{"id": 1, "kind": "Vehicle", "sensor": {"field_of_view": 4}}]), "nodes[0].sensor"),
        (_with(nodes=[{"id": 1, "kind": "Vehicle", "sensor": {"waveform": "chirp"}}]), "nodes[0].sensor.waveform"),
        (_with(nodes=[{"id": 1, "kind": "Vehicle", "radio": {"bandwidth": -1}}]), "nodes[0].radio"),
        (_with(nodes=[{"id": 1, "kind": "Vehicle", "role": "spy"}]), "nodes[0].role"),
        (_with(timing={"frame_period": 0}), "timing.frame_period"),
        (_with(timing={"tick": 1}), "timing.tick"),
        (_with(network={"sync_class": 4}), "network.sync_class"),
        (_with(network={"fusion_host": "cloud"}), "network.fusion_host"),
        (_with(app_requirement=5), "app_requirement"),
        (_with(noise="yes"), "noise"),
        (_with(policy=[{"role": "alien", "decision": "allow"}]), "policy[0]"),
        (_with(policy=[{"role": "external", "decision": "maybe"}]), "policy[0].decision"),
        (_with(faults=[{"node": 9, "at": 1.0}]), "faults[0].node"),
        (_with(faults=[{"at": 1.0}]), "faults[0].node"),
        (_with(faults=[{"node": 1, "at": -1.0}]), "faults[0].at"),
        (_with(virtual_sensors=[{"node": 1, "targets": [7]}]), "virtual_sensors[0].targets[0]"),
        (_with(mapping={"host": 9}), "mapping.host"),
        (_with(mapping={"scanners": [9]}), "mapping.scanners[0]"),
        (_with(sar={"node": 1, "target": 1, "start": 0.0}), "sar.aperture"),
        (_with(consents=[{"zone": [0, 0, 1], "granularity": 1, "expiry": 1}]), "consents[0].zone"),
        (_with(obstacles=[{"min": [1, 0, 0], "max": [0, 1, 1]}]), "obstacles[0]"),
    ],
)
def test_validation_names_the_offending_field(doc, field):
    assert _field(doc) == field


def test_parse_error_reports_line():
    with pytest.raises(ParseError) as info:
        parse_text("seed: 1\nduration: [1,\nnodes: x\n")
    assert info.value.line is not None and info.value.line >= 2


def test_policy_section_is_parsed_in_order():
    doc = _with(policy=[{"role": "external", "decision": "deny"}, {"role": "*", "min_level": 1, "decision": {"transform": {"level": 2, "granularity": 3}}}])
    rules = parse_scenario(doc).policy
    assert rules[0].decision == Deny() and rules[1].decision == Transform(2, 3.0)


def test_overrides_and_without():
    sc = load_preset("tc5")
    other = sc.with_overrides(seed=99, duration=0.5, app_requirement=1, noise=False)
    assert (other.seed, other.duration, other.app_requirement, other.noise) == (99, 0.5, CoopLevel.CL1, False)
    assert sc.seed != 99
    assert [n.id for n in sc.without(2).nodes if n.id in (1, 2)] == [1]
    with pytest.raises(ValidationError):
        sc.with_overrides(duration=0.0)


def test_preset_text_round_trips(tmp_path):
    path = tmp_path / "tc2.yaml"
    path.write_text(preset_text("tc2"), encoding="utf-8")
    assert load_scenario(path) == load_preset("tc2")
    assert yaml.safe_load(preset_text("tc2"))["name"] == "tc2"
    with pytest.raises(KeyError):
        preset_text("tc9")


def test_trajectory_segments_parse():
    doc = _with(nodes=[{"id": 1, "kind": "Drone", "velocity": [1, 0, 0], "trajectory": [{"start": 1.0, "velocity": [0, 1, 0]}]}])
    (node,) = parse_scenario(doc).nodes
    assert node.trajectory[0].start == 1.0 and node.trajectory[0].velocity == (0.0, 1.0, 0.0)
    assert math.isclose(node.pose.velocity[0], 1.0)
