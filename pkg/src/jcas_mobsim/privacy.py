"""Access control, data minimisation, obfuscation, consent and message tags.

Every request for sensor data goes through :func:`evaluate_policy`; the first
matching rule wins and the absence of a match is a denial.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataflow import DetectedObject, SensingMetaData, SensingPayload
from .fusion import cluster_objects, to_world_frame

ROLES = ("group_member", "leader", "infrastructure", "external")
HUMAN_LABELS = ("pedestrian-like", "vru")
COARSE_LABEL_GRANULARITY = 5.0
STATUTORY_FLOOR = 10.0
TAG_SIZE = 16


class PolicyError(ValueError):
    pass


class CannotLower(ValueError):
    pass


class RawPromotionLocal(ValueError):
    pass


class UnknownKeyId(KeyError):
    pass


@dataclass(frozen=True)
class Allow:
    pass


@dataclass(frozen=True)
class Deny:
    pass


@dataclass(frozen=True)
class Transform:
    target_level: int
    granularity: float

    def __post_init__(self):
        if self.target_level not in (1, 2) or self.granularity <= 0:
            raise PolicyError(f"invalid transform {self}")


Decision = Allow | Deny | Transform


@dataclass(frozen=True)
class Request:
    role: str
    purpose: str
    level: int


@dataclass(frozen=True)
class PolicyRule:
    """Matches a request when role and purpose agree ('*' is a wildcard) and the
    requested payload level is at least ``min_level``."""

    requester_role: str
    purpose: str
    min_level: int
    decision: Decision

    def __post_init__(self):
        if self.requester_role not in ROLES and self.requester_role != "*":
            raise PolicyError(f"unknown requester role {self.requester_role!r}")
        if self.min_level not in (0, 1, 2):
            raise PolicyError("min_level must be 0, 1 or 2")
        if isinstance(self.decision, Transform) and self.decision.target_level < self.min_level:
            raise PolicyError("a transform may not lower the processing level")

    def matches(self, request: Request) -> bool:
        return (
            self.requester_role in ("*", request.role)
            and self.purpose in ("*", request.purpose)
            and request.level >= self.min_level
        )


DEFAULT_RULES: tuple[PolicyRule, ...] = (
    PolicyRule("group_member", "cooperative_sensing", 1, Allow()),
    PolicyRule("leader", "cooperative_sensing", 1, Allow()),
    PolicyRule("infrastructure", "mapping", 1, Allow()),
    PolicyRule("infrastructure", "*", 1, Transform(2, 5.0)),
    PolicyRule("external", "*", 1, Transform(2, 10.0)),
)


def evaluate_policy(rules: Sequence[PolicyRule], request: Request) -> Decision:
    for rule in rules:
        if rule.matches(request):
            d = rule.decision
            if isinstance(d, Transform) and d.target_level < request.level:
                return Transform(request.level, d.granularity)
            return d
    return Deny()


def minimize(
    payload: SensingPayload, metadata: SensingMetaData, target_level: int
) -> tuple[SensingPayload, SensingMetaData]:
    """Promote a payload to ``target_level`` (never lower it)."""
    if target_level < payload.level:
        raise CannotLower(f"cannot lower level {payload.level} to {target_level}")
    if target_level == payload.level:
        return payload, metadata
    if payload.level == 0:
        raise RawPromotionLocal("raw samples can only be promoted by the producing sensor")
    objects = cluster_objects(to_world_frame(payload, metadata))
    return SensingPayload.object_list(objects), replace(metadata, level=2, illuminator=None)


def obfuscate(objects: Sequence[DetectedObject], granularity: float, seed: int) -> tuple[DetectedObject, ...]:
    """Snap positions to a ``granularity`` grid and jitter within half a cell."""
    if granularity <= 0:
        raise ValueError("granularity must be positive")
    rng = np.random.default_rng(seed)
    out = []
    for o in objects:
        snapped = np.round(np.asarray(o.position, dtype=float) / granularity) * granularity
        jittered = snapped + rng.uniform(-granularity / 2, granularity / 2, 3)
        label = o.label
        if granularity >= COARSE_LABEL_GRANULARITY and label == "pedestrian-like":
            label = "vru"
        out.append(replace(o, position=tuple(float(v) for v in jittered), label=label))
    return tuple(out)


@dataclass(frozen=True)
class ConsentRecord:
    zone: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    granularity: float
    expiry: float

    def __post_init__(self):
        if self.granularity <= 0:
            raise ValueError("consent granularity must be positive")

    def covers(self, position: Sequence[float], now: float) -> bool:
        x0, y0, x1, y1 = self.zone
        return now < self.expiry and x0 <= position[0] <= x1 and y0 <= position[1] <= y1


def consent_filter(
    objects: Sequence[DetectedObject],
    consents: Iterable[ConsentRecord],
    now: float,
    floor: float = STATUTORY_FLOOR,
    seed: int = 0,
) -> tuple[DetectedObject, ...]:
    consents = list(consents)
    out = []
    for i, o in enumerate(objects):
        if o.label not in HUMAN_LABELS:
            out.append(o)
            continue
        zone = next((c for c in consents if c.covers(o.position, now)), None)
        g = zone.granularity if zone is not None else floor
        out.append(obfuscate([o], g, seed=seed * 1_000_003 + i)[0])
    return tuple(out)


@dataclass(frozen=True)
class AuthTag:
    tag: bytes
    key_id: str


class KeyRegistry:
    """Immutable key-id -> secret map; tags are HMAC-SHA256 truncated to 16 bytes."""

    def __init__(self, keys: Mapping[str, bytes]):
        self._keys = dict(keys)

    def __contains__(self, key_id: str) -> bool:
        return key_id in self._keys

    def secret(self, key_id: str) -> bytes:
        try:
            return self._keys[key_id]
        except KeyError:
            raise UnknownKeyId(key_id) from None


def tag(message: bytes, key_id: str, registry: KeyRegistry) -> AuthTag:
    mac = hmac.new(registry.secret(key_id), message, hashlib.sha256).digest()[:TAG_SIZE]
    return AuthTag(mac, key_id)


def verify(message: bytes, auth: AuthTag, registry: KeyRegistry, key_id: str | None = None) -> bool:
    key_id = auth.key_id if key_id is None else key_id
    expected = hmac.new(registry.secret(key_id), message, hashlib.sha256).digest()[:TAG_SIZE]
    return hmac.compare_digest(expected, auth.tag)


def decision_name(d: Decision) -> str:
    return type(d).__name__

