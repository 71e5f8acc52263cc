"""Sensing data, meta-data, control/sync signals and their binary wire codec.

Processing levels: 0 raw complex samples, 1 point cloud, 2 object list.
The byte layout is documented in ``docs/wire_format.md``; everything is
little-endian, floats are IEEE-754 binary64, lists carry a u32 count.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Union

from .world import Node, NodeKind, Pose, Vec3

WIRE_VERSION = 1
HEADER = struct.Struct("<BBIII")
HEADER_SIZE = HEADER.size  # 14
U32_MAX = 0xFFFFFFFF


class Waveform(IntEnum):
    FMCW = 0
    OFDM_SIDELINK = 1
    OFDM_CELLULAR = 2
    VIRTUAL = 3


class MsgType(IntEnum):
    SENSING = 1
    CONTROL = 2
    SYNC = 3


SYNC_CLASS_NAMES = {
    1: "Time-stamping of data",
    2: "MAC Frame synchronization",
    3: "TX-RX Clock synchronization",
}


class CodecError(ValueError):
    pass


class Truncated(CodecError):
    pass


class BadVersion(CodecError):
    pass


class BadVariantTag(CodecError):
    pass


class InvariantViolation(CodecError):
    pass


class NoSensor(ValueError):
    pass


@dataclass(frozen=True)
class RadarPoint:
    range: float
    azimuth: float
    elevation: float = 0.0
    doppler: float = 0.0
    rcs: float = 0.0


@dataclass(frozen=True)
class DetectedObject:
    position: Vec3
    velocity: Vec3 = (0.0, 0.0, 0.0)
    extent: Vec3 = (0.0, 0.0, 0.0)
    label: str = "unknown"
    confidence: float = 1.0


@dataclass(frozen=True)
class SensingPayload:
    level: int
    samples: tuple[complex, ...] = ()
    sample_rate: float = 0.0
    points: tuple[RadarPoint, ...] = ()
    objects: tuple[DetectedObject, ...] = ()

    def __post_init__(self):
        if self.level not in (0, 1, 2):
            raise InvariantViolation(f"processing level must be 0, 1 or 2, got {self.level}")
        stray = {
            0: self.points or self.objects,
            1: self.samples or self.objects,
            2: self.samples or self.points,
        }[self.level]
        if stray:
            raise InvariantViolation(f"body does not match processing level {self.level}")

    @classmethod
    def raw(cls, samples, sample_rate: float) -> SensingPayload:
        return cls(0, samples=tuple(complex(s) for s in samples), sample_rate=float(sample_rate))

    @classmethod
    def point_cloud(cls, points) -> SensingPayload:
        return cls(1, points=tuple(points))

    @classmethod
    def object_list(cls, objects) -> SensingPayload:
        return cls(2, objects=tuple(objects))

    def __len__(self) -> int:
        return len((self.samples, self.points, self.objects)[self.level])


@dataclass(frozen=True)
class SensingMetaData:
    source: int
    capture_pose: Pose | None
    timestamp: float
    sync_class: int
    carrier_freq: float
    bandwidth: float
    waveform_id: Waveform
    level: int
    privacy_tags: frozenset[str] = frozenset()
    # Transmitter position for bistatic point clouds; None for monostatic.
    illuminator: Vec3 | None = None


@dataclass(frozen=True)
class SensingData:
    payload: SensingPayload
    metadata: SensingMetaData


@dataclass(frozen=True)
class ControlSignal:
    targets: frozenset[int]
    radar_resolution: float
    slot_assignment: tuple[int, int] | None = None
    coop_level_command: int = 1


@dataclass(frozen=True)
class SyncSignal:
    sync_class: int
    reference_time: float


Body = Union[SensingData, ControlSignal, SyncSignal]


@dataclass(frozen=True)
class Message:
    source: int
    dest: int
    body: Body
    version: int = field(default=WIRE_VERSION)

    def __post_init__(self):
        if self.version != WIRE_VERSION:
            raise BadVersion(f"unsupported wire version {self.version}")
        problems = _id_problems(self.source, "source") + _id_problems(self.dest, "dest") + check_body(self.body)
        if problems:
            raise InvariantViolation("; ".join(problems))

    @property
    def msg_type(self) -> MsgType:
        if isinstance(self.body, SensingData):
            return MsgType.SENSING
        if isinstance(self.body, ControlSignal):
            return MsgType.CONTROL
        return MsgType.SYNC


def _id_problems(value, name: str) -> list[str]:
    if not isinstance(value, int) or not 0 <= value <= U32_MAX:
        return [f"{name} id out of range"]
    return []


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


def validate(payload: SensingPayload | None, metadata: SensingMetaData | None) -> list[str]:
    """Return a list of violations; an empty list means the pair is usable."""
    out: list[str] = []
    if payload is None:
        out.append("payload missing")
    if metadata is None:
        out.append("metadata missing")
        return out
    if payload is not None and payload.level != metadata.level:
        out.append("level mismatch")
    if metadata.capture_pose is None:
        out.append("capture pose missing")
    if metadata.sync_class not in (0, 1, 2, 3):
        out.append("sync class out of range")
    if not (math.isfinite(metadata.carrier_freq) and metadata.carrier_freq > 0):
        out.append("carrier_freq positive")
    if not (math.isfinite(metadata.bandwidth) and metadata.bandwidth > 0):
        out.append("bandwidth positive")
    if not math.isfinite(metadata.timestamp):
        out.append("timestamp finite")
    if metadata.illuminator is not None and not _finite(*metadata.illuminator):
        out.append("illuminator finite")
    _id = _id_problems(metadata.source, "source")
    out.extend(_id)
    if payload is None:
        return out
    if payload.level == 0:
        if not (math.isfinite(payload.sample_rate) and payload.sample_rate > 0):
            out.append("sample_rate positive")
        if not all(_finite(s.real, s.imag) for s in payload.samples):
            out.append("sample finite")
    for p in payload.points:
        if not _finite(p.range, p.azimuth, p.elevation, p.doppler, p.rcs):
            out.append("point finite")
        elif p.range <= 0:
            out.append("range positive")
    for o in payload.objects:
        if not _finite(*o.position, *o.velocity, *o.extent, o.confidence):
            out.append("object finite")
        elif not 0.0 <= o.confidence <= 1.0:
            out.append("confidence in [0,1]")
        elif any(e < 0 for e in o.extent):
            out.append("extent non-negative")
    # one entry per kind keeps reports readable
    return list(dict.fromkeys(out))


def check_body(body: Body) -> list[str]:
    if isinstance(body, SensingData):
        return validate(body.payload, body.metadata)
    if isinstance(body, ControlSignal):
        out = []
        if not body.targets:
            out.append("targets non-empty")
        out.extend(p for t in sorted(body.targets) for p in _id_problems(t, "target"))
        if not (math.isfinite(body.radar_resolution) and body.radar_resolution > 0):
            out.append("radar_resolution positive")
        if body.slot_assignment is not None:
            slot, period = body.slot_assignment
            if not 0 <= slot < period <= U32_MAX:
                out.append("slot inside period")
        if body.coop_level_command not in (1, 2, 3, 4):
            out.append("coop level in CL1..CL4")
        return out
    if isinstance(body, SyncSignal):
        out = []
        if body.sync_class not in (1, 2, 3):
            out.append("sync class in 1..3")
        if not math.isfinite(body.reference_time):
            out.append("reference_time finite")
        return out
    return [f"unknown body type {type(body).__name__}"]


def make_metadata(
    node: Node,
    sensor_config=None,
    clock_reading: float = 0.0,
    level: int = 1,
    privacy_tags=frozenset(),
    illuminator: Vec3 | None = None,
) -> SensingMetaData:
    config = sensor_config if sensor_config is not None else node.sensor
    if node.kind in (NodeKind.RADAR_OBJECT, NodeKind.NON_COOP_EMITTER) or config is None:
        raise NoSensor(f"node {node.id} ({node.kind.value}) has no sensor")
    return SensingMetaData(
        source=node.id,
        capture_pose=node.pose,
        timestamp=float(clock_reading),
        sync_class=node.clock.achieved_class,
        carrier_freq=float(config.carrier_freq),
        bandwidth=float(config.bandwidth),
        waveform_id=Waveform(config.waveform),
        level=level,
        privacy_tags=frozenset(privacy_tags),
        illuminator=illuminator,
    )


# --- encoding -------------------------------------------------------------


class _Writer:
    def __init__(self):
        self.buf = bytearray()

    def u8(self, v: int):
        self.buf += struct.pack("<B", v)

    def u32(self, v: int):
        self.buf += struct.pack("<I", v)

    def f64(self, *vs: float):
        self.buf += struct.pack(f"<{len(vs)}d", *vs)

    def text(self, s: str):
        raw = s.encode("utf-8")
        self.u32(len(raw))
        self.buf += raw


def _put_metadata(w: _Writer, md: SensingMetaData):
    w.u32(md.source)
    if md.capture_pose is None:
        w.u8(0)
    else:
        w.u8(1)
        w.f64(*md.capture_pose.position, *md.capture_pose.velocity, md.capture_pose.yaw)
    w.f64(md.timestamp)
    w.u8(md.sync_class)
    w.f64(md.carrier_freq, md.bandwidth)
    w.u8(int(md.waveform_id))
    w.u8(md.level)
    tags = sorted(md.privacy_tags, key=lambda s: s.encode("utf-8"))
    w.u32(len(tags))
    for tag in tags:
        w.text(tag)
    if md.illuminator is None:
        w.u8(0)
    else:
        w.u8(1)
        w.f64(*md.illuminator)


def _put_payload(w: _Writer, p: SensingPayload):
    w.u8(p.level)
    if p.level == 0:
        w.f64(p.sample_rate)
        w.u32(len(p.samples))
        for s in p.samples:
            w.f64(s.real, s.imag)
    elif p.level == 1:
        w.u32(len(p.points))
        for pt in p.points:
            w.f64(pt.range, pt.azimuth, pt.elevation, pt.doppler, pt.rcs)
    else:
        w.u32(len(p.objects))
        for o in p.objects:
            w.f64(*o.position, *o.velocity, *o.extent)
            w.text(o.label)
            w.f64(o.confidence)


def encode_body(body: Body) -> bytes:
    w = _Writer()
    if isinstance(body, SensingData):
        _put_metadata(w, body.metadata)
        _put_payload(w, body.payload)
    elif isinstance(body, ControlSignal):
        w.u32(len(body.targets))
        for t in sorted(body.targets):
            w.u32(t)
        w.f64(body.radar_resolution)
        if body.slot_assignment is None:
            w.u8(0)
        else:
            w.u8(1)
            w.u32(body.slot_assignment[0])
            w.u32(body.slot_assignment[1])
        w.u8(body.coop_level_command)
    else:
        w.u8(body.sync_class)
        w.f64(body.reference_time)
    return bytes(w.buf)


def encode(message: Message) -> bytes:
    body = encode_body(message.body)
    return HEADER.pack(message.version, int(message.msg_type), message.source, message.dest, len(body)) + body


# --- decoding -------------------------------------------------------------


class _Reader:
    def __init__(self, buf: bytes, start: int, end: int):
        self.buf, self.pos, self.end = buf, start, end

    def _take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise Truncated(f"need {n} bytes at offset {self.pos}, body ends at {self.end}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def f64(self, n: int = 1):
        vals = struct.unpack(f"<{n}d", self._take(8 * n))
        return vals[0] if n == 1 else vals

    def flag(self, what: str) -> bool:
        v = self.u8()
        if v not in (0, 1):
            raise BadVariantTag(f"presence flag for {what} must be 0 or 1, got {v}")
        return v == 1

    def count(self, item_size: int) -> int:
        n = self.u32()
        if n * item_size > self.end - self.pos:
            raise Truncated(f"count {n} exceeds remaining body")
        return n

    def text(self) -> str:
        n = self.count(1)
        raw = self._take(n)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InvariantViolation(f"label is not UTF-8: {exc}") from None


def _get_metadata(r: _Reader) -> SensingMetaData:
    source = r.u32()
    pose = None
    if r.flag("capture pose"):
        vals = r.f64(7)
        try:
            pose = Pose(vals[0:3], vals[3:6], vals[6])
        except ValueError as exc:
            raise InvariantViolation(str(exc)) from None
    timestamp = r.f64()
    sync_class = r.u8()
    carrier, bandwidth = r.f64(2)
    wf = r.u8()
    try:
        waveform = Waveform(wf)
    except ValueError:
        raise BadVariantTag(f"unknown waveform id {wf}") from None
    level = r.u8()
    tags = [r.text() for _ in range(r.count(4))]
    encoded = [t.encode("utf-8") for t in tags]
    if any(a >= b for a, b in zip(encoded, encoded[1:])):
        raise InvariantViolation("privacy tags must be unique and in canonical order")
    illuminator = tuple(r.f64(3)) if r.flag("illuminator") else None
    return SensingMetaData(source, pose, timestamp, sync_class, carrier, bandwidth, waveform, level, frozenset(tags), illuminator)


def _get_payload(r: _Reader) -> SensingPayload:
    level = r.u8()
    if level == 0:
        rate = r.f64()
        n = r.count(16)
        samples = []
        for _ in range(n):
            re, im = r.f64(2)
            samples.append(complex(re, im))
        return SensingPayload(0, samples=tuple(samples), sample_rate=rate)
    if level == 1:
        n = r.count(40)
        return SensingPayload(1, points=tuple(RadarPoint(*r.f64(5)) for _ in range(n)))
    if level == 2:
        n = r.count(84)
        objs = []
        for _ in range(n):
            v = r.f64(9)
            label = r.text()
            objs.append(DetectedObject(v[0:3], v[3:6], v[6:9], label, r.f64()))
        return SensingPayload(2, objects=tuple(objs))
    raise BadVariantTag(f"unknown processing level tag {level}")


def decode(data: bytes) -> Message:
    data = bytes(data)
    if len(data) < 1:
        raise Truncated("empty buffer")
    if data[0] != WIRE_VERSION:
        raise BadVersion(f"unsupported wire version {data[0]}")
    if len(data) < HEADER_SIZE:
        raise Truncated(f"header needs {HEADER_SIZE} bytes, got {len(data)}")
    version, mtype, source, dest, length = HEADER.unpack_from(data)
    if HEADER_SIZE + length > len(data):
        raise Truncated(f"length field {length} exceeds buffer of {len(data) - HEADER_SIZE} body bytes")
    try:
        kind = MsgType(mtype)
    except ValueError:
        raise BadVariantTag(f"unknown message type {mtype}") from None
    r = _Reader(data, HEADER_SIZE, HEADER_SIZE + length)
    if kind is MsgType.SENSING:
        md = _get_metadata(r)
        body: Body = SensingData(_get_payload(r), md)
    elif kind is MsgType.CONTROL:
        n = r.count(4)
        targets = [r.u32() for _ in range(n)]
        if any(a >= b for a, b in zip(targets, targets[1:])):
            raise InvariantViolation("control targets must be unique and ascending")
        resolution = r.f64()
        slot = (r.u32(), r.u32()) if r.flag("slot assignment") else None
        body = ControlSignal(frozenset(targets), resolution, slot, r.u8())
    else:
        body = SyncSignal(r.u8(), r.f64())
    if r.pos != r.end:
        raise InvariantViolation(f"length field {length} disagrees with body size {r.pos - HEADER_SIZE}")
    if len(data) != r.end:
        raise InvariantViolation(f"{len(data) - r.end} trailing bytes after message")
    return Message(source, dest, body, version)
