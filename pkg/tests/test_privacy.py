from __future__ import annotations

import hashlib
import hmac

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jcas_mobsim.dataflow import DetectedObject, RadarPoint, SensingMetaData, SensingPayload, Waveform
from jcas_mobsim.privacy import (
    DEFAULT_RULES,
    ROLES,
    STATUTORY_FLOOR,
    Allow,
    AuthTag,
    CannotLower,
    ConsentRecord,
    Deny,
    KeyRegistry,
    PolicyError,
    PolicyRule,
    RawPromotionLocal,
    Request,
    Transform,
    UnknownKeyId,
    consent_filter,
    evaluate_policy,
    minimize,
    obfuscate,
    tag,
    verify,
)
from jcas_mobsim.world import Pose

pytestmark = [pytest.mark.req("R25")]

REGISTRY = KeyRegistry({"k1": b"secret-one", "k2": b"secret-two"})


def _md(level):
    return SensingMetaData(1, Pose(), 0.0, 2, 77e9, 1e9, Waveform.FMCW, level)


def _ped(x, y):
    return DetectedObject((x, y, 0.0), label="pedestrian-like")


@pytest.mark.req("R9")
def test_default_policy_examples():
    assert evaluate_policy(DEFAULT_RULES, Request("external", "anything", 0)) == Deny()
    assert evaluate_policy(DEFAULT_RULES, Request("group_member", "cooperative_sensing", 1)) == Allow()
    assert evaluate_policy(DEFAULT_RULES, Request("infrastructure", "analytics", 1)) == Transform(2, 5.0)


@pytest.mark.req("R9")
@pytest.mark.parametrize("role", ROLES)
def test_no_default_rule_releases_raw_samples(role):
    for purpose in ("cooperative_sensing", "mapping", "analytics"):
        assert evaluate_policy(DEFAULT_RULES, Request(role, purpose, 0)) == Deny()


@settings(max_examples=200)
@given(st.sampled_from(ROLES), st.text(max_size=12), st.integers(0, 2))
def test_empty_ruleset_denies_everything(role, purpose, level):
    assert evaluate_policy((), Request(role, purpose, level)) == Deny()


def test_first_match_wins():
    rules = (PolicyRule("*", "*", 1, Deny()), PolicyRule("leader", "*", 1, Allow()))
    assert evaluate_policy(rules, Request("leader", "x", 1)) == Deny()


def test_transform_never_lowers_requested_level():
    rules = (PolicyRule("external", "*", 1, Transform(1, 2.0)),)
    assert evaluate_policy(rules, Request("external", "x", 2)) == Transform(2, 2.0)


def test_rule_validation():
    with pytest.raises(PolicyError):
        PolicyRule("stranger", "*", 1, Allow())
    with pytest.raises(PolicyError):
        PolicyRule("*", "*", 2, Transform(1, 1.0))
    with pytest.raises(PolicyError):
        Transform(0, 1.0)


@pytest.mark.req("R9")
def test_minimize_examples():
    cloud = SensingPayload.point_cloud([RadarPoint(10.0, 0.0), RadarPoint(10.5, 0.0)])
    objs, md = minimize(cloud, _md(1), 2)
    assert objs.level == md.level == 2 and len(objs.objects) == 1
    lst = SensingPayload.object_list([_ped(0, 0)])
    assert minimize(lst, _md(2), 2) == (lst, _md(2))
    with pytest.raises(CannotLower):
        minimize(lst, _md(2), 1)
    with pytest.raises(RawPromotionLocal):
        minimize(SensingPayload.raw([1j], 1e6), _md(0), 1)


def test_obfuscate_examples():
    (o,) = obfuscate([DetectedObject((3.7, 2.2, 0.0))], 1.0, seed=3)
    assert abs(o.position[0] - 4.0) <= 0.5 and abs(o.position[1] - 2.0) <= 0.5
    assert obfuscate([_ped(0, 0)], 5.0, seed=1)[0].label == "vru"
    assert obfuscate([_ped(0, 0)], 1.0, seed=1)[0].label == "pedestrian-like"
    assert obfuscate([_ped(1, 2)], 2.0, seed=9) == obfuscate([_ped(1, 2)], 2.0, seed=9)
    with pytest.raises(ValueError):
        obfuscate([], 0.0, seed=0)


@settings(max_examples=300)
@given(
    st.tuples(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4), st.floats(-1e4, 1e4)),
    st.floats(0.01, 100.0),
    st.integers(0, 2**32 - 1),
)
def test_obfuscation_bound(position, g, seed):
    (o,) = obfuscate([DetectedObject(position)], g, seed)
    assert all(abs(a - b) <= g + 1e-9 for a, b in zip(o.position, position))


def test_consent_filter_examples():
    zone = ConsentRecord((0.0, 0.0, 50.0, 50.0), 1.0, expiry=10.0)
    car = DetectedObject((12.3, 4.4, 0.0), label="vehicle-like")
    no_consent = consent_filter([_ped(120.0, 120.0), car], [zone], now=1.0)
    assert no_consent[1] == car
    assert STATUTORY_FLOOR == 10.0
    assert all(abs(a - b) <= 10.0 for a, b in zip(no_consent[0].position, (120.0, 120.0, 0.0)))
    assert no_consent[0].label == "vru"
    consented = consent_filter([_ped(12.3, 4.4)], [zone], now=1.0)[0]
    assert all(abs(a - b) <= 1.0 for a, b in zip(consented.position, (12.3, 4.4, 0.0)))
    assert consented.label == "pedestrian-like"
    expired = consent_filter([_ped(12.3, 4.4)], [zone], now=10.0)[0]
    assert expired.label == "vru"


@pytest.mark.req("R24", "R26")
def test_tag_round_trip_and_flip():
    msg = b"sensing payload bytes"
    t = tag(msg, "k1", REGISTRY)
    assert len(t.tag) == 16 and t.key_id == "k1"
    assert verify(msg, t, REGISTRY)
    assert not verify(b"Sensing payload bytes", t, REGISTRY)
    assert not verify(msg, t, REGISTRY, key_id="k2")
    with pytest.raises(UnknownKeyId):
        tag(msg, "k9", REGISTRY)
    with pytest.raises(UnknownKeyId):
        verify(msg, AuthTag(t.tag, "k9"), REGISTRY)
    assert "k1" in REGISTRY and "k9" not in REGISTRY


@pytest.mark.req("R24")
def test_tag_is_truncated_hmac_sha256():
    msg = b"abc"
    assert tag(msg, "k2", REGISTRY).tag == hmac.new(b"secret-two", msg, hashlib.sha256).digest()[:16]


@pytest.mark.req("R24")
def test_tag_soundness_over_a_million_bit_flips():
    rng = np.random.default_rng(2024)
    msg = bytearray(rng.integers(0, 256, 256, dtype=np.uint8).tobytes())
    auth = tag(bytes(msg), "k1", REGISTRY)
    positions = rng.integers(0, len(msg) * 8, 1_000_000)
    accepted = 0
    for bit in positions.tolist():
        msg[bit >> 3] ^= 1 << (bit & 7)
        accepted += verify(bytes(msg), auth, REGISTRY)
        msg[bit >> 3] ^= 1 << (bit & 7)
    assert accepted == 0
    assert verify(bytes(msg), auth, REGISTRY)
