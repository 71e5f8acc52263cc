from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_node
from jcas_mobsim.coordination import (
    SYNC_BOUNDS,
    CapabilityProfile,
    CoopGroup,
    CoopLevel,
    Destination,
    LinkDown,
    OffloadLink,
    completion_time,
    discipline_clock,
    elect_leader,
    form_groups,
    offload_decision,
    select_coop_level,
    supported_level,
    sync_exchange,
    sync_valid,
)
from jcas_mobsim.radio import RadioConfig
from jcas_mobsim.sensing import noise_rng
from jcas_mobsim.world import ClockState, NodeKind, clock_error


def _line(*xs):
    return [make_node(i + 1, position=(x, 0, 0)) for i, x in enumerate(xs)]


@pytest.mark.req("R18")
def test_form_groups_examples():
    (g,) = form_groups(_line(0, 30, 60), 100.0)
    assert g.members == {1, 2, 3}
    two = form_groups(_line(0, 10, 10_000, 10_010), 100.0)
    assert [set(g.members) for g in two] == [{1, 2}, {3, 4}]
    (chain,) = form_groups(_line(0, 90, 180, 270), 100.0)
    assert chain.members == {1, 2, 3, 4}


def test_form_groups_skips_nodes_without_sidelink():
    nodes = _line(0, 10)
    nodes[1].profile = CapabilityProfile(supports_sidelink=False)
    passive = make_node(9, NodeKind.RADAR_OBJECT, (5, 0, 0))
    assert [g.members for g in form_groups(nodes + [passive], 100.0)] == [{1}]
    with pytest.raises(ValueError):
        form_groups(nodes, 0.0)


def test_group_invariants():
    with pytest.raises(ValueError):
        CoopGroup(0, frozenset({1, 2}), 3)
    with pytest.raises(ValueError):
        CoopGroup(0, frozenset({1}), 1, CoopLevel.CL3)
    with pytest.raises(ValueError):
        CoopGroup(0, frozenset(), 1)


@pytest.mark.req("R4")
def test_elect_leader_examples():
    p = {1: CapabilityProfile(compute_units=4), 2: CapabilityProfile(compute_units=8), 3: CapabilityProfile(compute_units=2)}
    assert elect_leader([5], {5: CapabilityProfile()}) == 5
    assert elect_leader([1, 2, 3], p) == 2
    assert elect_leader([7, 4, 9], {i: CapabilityProfile() for i in (4, 7, 9)}) == 4


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 50), st.integers(1, 4)), min_size=1, max_size=8, unique_by=lambda t: t[0]), st.randoms())
def test_election_is_permutation_invariant(members, rnd):
    profiles = {m: CapabilityProfile(compute_units=c) for m, c in members}
    ids = [m for m, _ in members]
    shuffled = ids[:]
    rnd.shuffle(shuffled)
    assert elect_leader(ids, profiles) == elect_leader(shuffled, profiles)


@pytest.mark.req("R10")
def test_select_coop_level_examples():
    jcas = {i: CapabilityProfile(supports_jcas_waveform=True) for i in (1, 2)}
    g = CoopGroup(0, frozenset({1, 2}), 1)
    assert select_coop_level(g, jcas, 4).level == CoopLevel.CL4
    mixed = {1: CapabilityProfile(supports_jcas_waveform=True), 2: CapabilityProfile()}
    assert select_coop_level(g, mixed, 4).level == CoopLevel.CL3
    none = {i: CapabilityProfile(supports_sidelink=False) for i in (1, 2)}
    assert select_coop_level(g, none, 4).level == CoopLevel.CL1
    assert select_coop_level(g, jcas, 2).level == CoopLevel.CL2


def test_singletons_cap_at_coexistence():
    assert supported_level([1], {1: CapabilityProfile(supports_jcas_waveform=True)}) == CoopLevel.CL2


@pytest.mark.req("R1")
@pytest.mark.parametrize("k", [1, 2, 3])
def test_sync_exchange_meets_class_bound(k):
    leader, member = make_node(1), make_node(2)
    member.clock = ClockState(offset=5e-3, drift=3.0)
    for seed in range(50):
        clock = sync_exchange(leader, member, k, 2.0, noise_rng(seed, 2, 0))
        assert abs(clock_error(clock, 2.0)) <= SYNC_BOUNDS[k]
        assert clock.achieved_class == k and clock.last_sync == 2.0


@pytest.mark.req("R1")
def test_error_growth_between_exchanges_is_drift_bound():
    member = make_node(2)
    member.clock = ClockState(offset=5e-3, drift=12.0)
    clock = sync_exchange(make_node(1), member, 3, 1.0, noise_rng(1, 2, 0))
    residual = clock_error(clock, 1.0)
    for dt in (0.1, 0.25, 0.9):
        growth = abs(clock_error(clock, 1.0 + dt)) - abs(residual)
        assert growth <= 12e-6 * dt + 1e-15


@pytest.mark.req("R1")
def test_sync_validity_timeout():
    c = ClockState(achieved_class=3, last_sync=0.0)
    assert sync_valid(c, 1.0).achieved_class == 3
    assert sync_valid(c, 1.0001).achieved_class == 0
    with pytest.raises(LinkDown):
        sync_exchange(make_node(1), make_node(2), 2, 0.0, link_up=False)


def test_sync_exchange_never_downgrades_a_valid_class():
    member = make_node(2)
    member.clock = ClockState(achieved_class=3, last_sync=0.5)
    assert sync_exchange(make_node(1), member, 1, 0.7).achieved_class == 3
    with pytest.raises(ValueError):
        sync_exchange(member, member, 1, 0.7)
    with pytest.raises(ValueError):
        sync_exchange(make_node(1), member, 4, 0.7)


def test_noiseless_discipline_is_exact():
    c = discipline_clock(ClockState(offset=1.0, drift=5.0), 2, 3.0, None)
    assert clock_error(c, 3.0) == 0.0


@pytest.mark.req("R4", "R13")
def test_offload_examples():
    weak = {1: CapabilityProfile(compute_units=1)}
    slow = RadioConfig(bandwidth=1e6, spectral_efficiency=1.0)
    links = {Destination.LEADER: OffloadLink(slow, compute_units=8), Destination.MEC: OffloadLink(slow, compute_units=64)}
    assert offload_decision(1, 1, weak, links) is Destination.LOCAL
    fast = {
        Destination.LEADER: OffloadLink(RadioConfig(), compute_units=8),
        Destination.MEC: OffloadLink(RadioConfig.cellular(), compute_units=64),
    }
    assert offload_decision(1, 100_000_000, weak, fast) is Destination.MEC
    unreachable = {**fast, Destination.MEC: OffloadLink(RadioConfig.cellular(), compute_units=64, available=False)}
    assert offload_decision(1, 100_000_000, weak, unreachable) is Destination.LEADER


@pytest.mark.req("R4")
def test_offload_prefers_local_on_ties():
    p = {1: CapabilityProfile(compute_units=1)}
    assert completion_time(0, 1.0) == 0.0
    assert offload_decision(1, 0, p, {Destination.MEC: OffloadLink(RadioConfig.cellular(), compute_units=64)}) is Destination.LOCAL


@pytest.mark.req("R3", "R14")
def test_group_survives_loss_of_one_member():
    nodes = _line(0, 30, 60)
    nodes[1].failed = True
    (g,) = form_groups(nodes, 100.0)
    assert g.members == {1, 3}
    nodes[0].failed = True
    assert [g.members for g in form_groups(nodes, 100.0)] == [{3}]
