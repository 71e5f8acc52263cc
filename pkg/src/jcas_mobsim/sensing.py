"""Radar observations generated against world ground truth.

Radar budget is a reference-SNR law: SNR(R) = snr_ref - 40 log10(R / R_ref)
for monostatic and snr_ref - 20 log10(R_tx R_rx / R_ref^2) for bistatic
geometry.  All noise comes from explicit ``numpy.random.Generator`` objects;
passing ``rng=None`` gives noiseless observations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataflow import NoSensor, RadarPoint, SensingPayload, Waveform
from .radio import path_loss
from .world import SPEED_OF_LIGHT, Node, NodeKind, Pose, World, line_of_sight, ray_box_entry, read_clock

TARGET_KINDS = (NodeKind.RADAR_OBJECT, NodeKind.VEHICLE, NodeKind.DRONE)

# Gaussian TOA jitter per achieved sync class (s); class 0 means unsynchronised.
TOA_JITTER = {0: 1e-3, 1: 1e-3, 2: 1e-6, 3: 1e-8}


class SyncTooCoarse(ValueError):
    pass


class ApertureTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class SensorConfig:
    carrier_freq: float = 77e9
    bandwidth: float = 1e9
    max_range: float = 100.0
    field_of_view: float = math.pi / 4
    detection_threshold: float = 13.0
    mode: str = "mono"
    snr_ref: float = 40.0
    ref_range: float = 10.0
    beamwidth: float = math.radians(2.0)
    waveform: Waveform = Waveform.FMCW
    # Half-angle lit when this node acts as a bistatic illuminator.
    illumination_fov: float = math.pi

    def __post_init__(self):
        if not 0 < self.field_of_view <= math.pi:
            raise ValueError("field_of_view must lie in (0, pi]")
        if not 0 < self.illumination_fov <= math.pi:
            raise ValueError("illumination_fov must lie in (0, pi]")
        if self.bandwidth <= 0 or self.carrier_freq <= 0 or self.max_range <= 0:
            raise ValueError("carrier_freq, bandwidth and max_range must be positive")
        if self.mode not in ("mono", "bi", "multi"):
            raise ValueError(f"unknown sensing mode {self.mode!r}")


@dataclass(frozen=True)
class EmitterObservation:
    """What a passive observer can measure about an unknown transmitter.

    Nothing decoded from the signal content is stored, so no modulation or emitter-identity fields exist.
    """

    observer: int
    toa: float
    rss: float
    observed_freq: float
    bearing: float | None = None
    observer_position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    sync_class: int = 0


def noise_rng(seed: int, node: int, seq: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, node, seq, stream])


def range_resolution(bandwidth: float) -> float:
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    return SPEED_OF_LIGHT / (2 * bandwidth)


def wrap_angle(a: float) -> float:
    return math.atan2(math.sin(a), math.cos(a))


def _sensor(node: Node, config: SensorConfig | None) -> SensorConfig:
    if node.kind in (NodeKind.RADAR_OBJECT, NodeKind.NON_COOP_EMITTER) or node.sensor is None or node.failed:
        raise NoSensor(f"node {node.id} ({node.kind.value}) has no working sensor")
    return config or node.sensor


def _angles(origin: np.ndarray, target: np.ndarray, yaw: float) -> tuple[float, float, float]:
    d = target - origin
    rng_ = float(np.linalg.norm(d))
    az = wrap_angle(math.atan2(d[1], d[0]) - yaw)
    el = math.atan2(d[2], math.hypot(d[0], d[1]))
    return rng_, az, el


def _targets(world: World, exclude: set[int]) -> list[Node]:
    return [n for n in sorted(world.nodes.values(), key=lambda n: n.id) if n.kind in TARGET_KINDS and n.id not in exclude]


def mono_snr(config: SensorConfig, distance: float) -> float:
    return config.snr_ref - 40 * math.log10(distance / config.ref_range)


def bistatic_snr(config: SensorConfig, r_tx: float, r_rx: float) -> float:
    return config.snr_ref - 20 * math.log10(r_tx * r_rx / config.ref_range**2)


def detect_targets(
    sensor_node: Node,
    world: World,
    config: SensorConfig | None = None,
    rng: np.random.Generator | None = None,
    truth: list[int] | None = None,
) -> SensingPayload:
    """Monostatic detection; ``truth`` (if given) receives the target id of every point."""
    cfg = _sensor(sensor_node, config)
    if cfg.mode != "mono":
        raise ValueError("detect_targets needs a mono-static sensor configuration")
    origin = sensor_node.position
    v_s = np.asarray(sensor_node.pose.velocity)
    sigma_r = range_resolution(cfg.bandwidth) / 2
    sigma_az = cfg.beamwidth / 2
    points = []
    for tgt in _targets(world, {sensor_node.id}):
        pos = tgt.position
        dist, az, el = _angles(origin, pos, sensor_node.pose.yaw)
        if dist <= 0 or dist > cfg.max_range or abs(az) > cfg.field_of_view:
            continue
        if mono_snr(cfg, dist) < cfg.detection_threshold:
            continue
        if not line_of_sight(world, origin, pos):
            continue
        u = (pos - origin) / dist
        doppler = float(np.dot(np.asarray(tgt.pose.velocity) - v_s, u))
        if rng is not None:
            dist = max(dist + rng.normal(0.0, sigma_r), 1e-6)
            az = wrap_angle(az + rng.normal(0.0, sigma_az))
        points.append(RadarPoint(dist, az, el, doppler, tgt.rcs))
        if truth is not None:
            truth.append(tgt.id)
    return SensingPayload.point_cloud(points)


def is_degenerate(tx: np.ndarray, rx: np.ndarray, target: np.ndarray, tolerance: float) -> bool:
    """A target near the baseline collapses the bistatic ellipse onto the segment."""
    baseline = float(np.linalg.norm(rx - tx))
    total = float(np.linalg.norm(target - tx) + np.linalg.norm(rx - target))
    return total - baseline < tolerance


def bistatic_detect(
    tx_node: Node,
    rx_node: Node,
    world: World,
    config: SensorConfig | None = None,
    rng: np.random.Generator | None = None,
    truth: list[int] | None = None,
    degenerate: list[int] | None = None,
) -> SensingPayload:
    """Points seen by ``rx_node`` under illumination from ``tx_node``.

    ``range`` of each point is the bistatic sum |tx->target| + |target->rx|;
    azimuth/elevation are angles of arrival at the receiver.
    """
    if tx_node.id == rx_node.id:
        raise ValueError("bistatic detection needs distinct transmitter and receiver")
    tx_cfg = _sensor(tx_node, None)
    cfg = _sensor(rx_node, config)
    if rx_node.clock.achieved_class < 2:
        raise SyncTooCoarse(f"receiver {rx_node.id} sync class {rx_node.clock.achieved_class} < 2")
    p_tx, p_rx = tx_node.position, rx_node.position
    v_tx, v_rx = np.asarray(tx_node.pose.velocity), np.asarray(rx_node.pose.velocity)
    resolution = range_resolution(cfg.bandwidth)
    points = []
    for tgt in _targets(world, {tx_node.id, rx_node.id}):
        pos = tgt.position
        r_tx, az_tx, _ = _angles(p_tx, pos, tx_node.pose.yaw)
        r_rx, az, el = _angles(p_rx, pos, rx_node.pose.yaw)
        if min(r_tx, r_rx) <= 0 or (r_tx + r_rx) / 2 > cfg.max_range:
            continue
        if abs(az) > cfg.field_of_view or abs(az_tx) > tx_cfg.illumination_fov:
            continue
        if bistatic_snr(cfg, r_tx, r_rx) < cfg.detection_threshold:
            continue
        if not (line_of_sight(world, p_tx, pos) and line_of_sight(world, pos, p_rx)):
            continue
        if is_degenerate(p_tx, p_rx, pos, resolution):
            if degenerate is not None:
                degenerate.append(tgt.id)
            continue
        v_t = np.asarray(tgt.pose.velocity)
        rate = float(np.dot(v_t - v_tx, (pos - p_tx) / r_tx) + np.dot(v_t - v_rx, (pos - p_rx) / r_rx))
        total = r_tx + r_rx
        if rng is not None:
            total += rng.normal(0.0, resolution / 2)
            az = wrap_angle(az + rng.normal(0.0, cfg.beamwidth / 2))
        points.append(RadarPoint(total, az, el, rate, tgt.rcs))
        if truth is not None:
            truth.append(tgt.id)
    return SensingPayload.point_cloud(points)


def surface_scan(
    node: Node,
    world: World,
    config: SensorConfig | None = None,
    beams: int = 90,
    rng: np.random.Generator | None = None,
) -> SensingPayload:
    """Horizontal fan of rays returning the first obstacle face hit by each."""
    cfg = _sensor(node, config)
    origin = node.position
    sigma_r = range_resolution(cfg.bandwidth) / 2
    v_s = np.asarray(node.pose.velocity)
    points = []
    for k in range(beams):
        az = -cfg.field_of_view + (k + 0.5) * 2 * cfg.field_of_view / beams
        heading = node.pose.yaw + az
        direction = np.array([math.cos(heading), math.sin(heading), 0.0])
        hits = [t for box in world.obstacles if (t := ray_box_entry(box, origin, direction)) is not None]
        if not hits:
            continue
        dist = min(hits)
        if dist > cfg.max_range or mono_snr(cfg, dist) < cfg.detection_threshold:
            continue
        if rng is not None:
            dist = max(dist + rng.normal(0.0, sigma_r), 1e-6)
        points.append(RadarPoint(dist, az, 0.0, float(-np.dot(v_s, direction)), 0.0))
    return SensingPayload.point_cloud(points)


@dataclass(frozen=True)
class SarConfig:
    antenna_aperture: float = 0.05  # m, physical antenna length
    single_snapshot_std: float = math.radians(2.0)
    thermal_floor: float = 1e-6  # rad


@dataclass(frozen=True)
class SarEstimate:
    azimuth: float
    std: float
    position: tuple[float, float]
    aperture: float


def sar_refine_azimuth(
    ego_poses: Sequence[Pose],
    raw_detections: Sequence[float],
    config: SarConfig = SarConfig(),
) -> SarEstimate:
    """Triangulate one target from per-pose bearings across a synthetic aperture.

    The refined azimuth is measured from the aperture centre, relative to the
    heading of the middle pose.
    """
    if len(ego_poses) != len(raw_detections):
        raise ValueError("one azimuth per pose is required")
    if len(ego_poses) < 2:
        raise ApertureTooSmall("at least two poses are needed")
    pos = np.array([p.position[:2] for p in ego_poses], dtype=float)
    aperture = float(np.linalg.norm(pos[-1] - pos[0]))
    if aperture < config.antenna_aperture or aperture <= 0:
        raise ApertureTooSmall(f"aperture {aperture:.4g} m below antenna aperture {config.antenna_aperture} m")
    theta = np.array([p.yaw for p in ego_poses]) + np.asarray(raw_detections, dtype=float)
    normals = np.stack([-np.sin(theta), np.cos(theta)], axis=1)
    rhs = np.einsum("ij,ij->i", normals, pos)
    x, *_ = np.linalg.lstsq(normals, rhs, rcond=None)
    centre = pos.mean(axis=0)
    v = x - centre
    look = np.array([np.cos(theta).mean(), np.sin(theta).mean()])
    # near-parallel bearings can put the LS point behind the aperture
    if float(v @ look) < 0:
        v = -v
    ref_yaw = ego_poses[len(ego_poses) // 2].yaw
    azimuth = wrap_angle(math.atan2(v[1], v[0]) - ref_yaw)
    std = max(config.single_snapshot_std * config.antenna_aperture / aperture, config.thermal_floor)
    return SarEstimate(azimuth, std, (float(x[0]), float(x[1])), aperture)


def sar_bearings(
    poses: Sequence[Pose],
    target: Sequence[float],
    path_precision: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[list[Pose], list[float]]:
    """Per-pose bearings recovered from the along-track path-length history.

    Each pose measures its two-way path length to the target to within
    ``path_precision`` (phase-level, metres).  Successive differences give the
    cosine of the angle between the track and the line of sight, so bearing
    precision improves with pose spacing and the mean bearing error shrinks
    as 1 / aperture.  Returns bearings at the midpoints of consecutive poses.
    """
    pts = np.array([p.position[:2] for p in poses], dtype=float)
    tgt = np.asarray(target[:2], dtype=float)
    two_way = 2 * np.linalg.norm(tgt - pts, axis=1)
    if rng is not None and path_precision > 0:
        two_way = two_way + rng.normal(0.0, path_precision, len(two_way))
    mids, bearings = [], []
    for i in range(len(pts) - 1):
        step = pts[i + 1] - pts[i]
        ds = float(np.linalg.norm(step))
        heading = math.atan2(step[1], step[0])
        cos_a = float(np.clip(-(two_way[i + 1] - two_way[i]) / (2 * ds), -1.0, 1.0))
        mid = (pts[i] + pts[i + 1]) / 2
        to_t = tgt - mid
        side = 1.0 if step[0] * to_t[1] - step[1] * to_t[0] >= 0 else -1.0
        world_bearing = heading + side * math.acos(cos_a)
        yaw = poses[i].yaw
        mids.append(Pose((float(mid[0]), float(mid[1]), poses[i].position[2]), poses[i].velocity, yaw))
        bearings.append(wrap_angle(world_bearing - yaw))
    return mids, bearings


def sniff_emitters(
    observer_node: Node,
    world: World,
    emission_time: float | None = None,
    rng: np.random.Generator | None = None,
    sensitivity: float = -100.0,
) -> list[EmitterObservation]:
    """Passive time-of-arrival/RSS observations of every active non-cooperative emitter."""
    if not observer_node.radio_capable:
        raise ValueError(f"observer {observer_node.id} is not radio-capable")
    t_emit = world.time if emission_time is None else emission_time
    here = observer_node.position
    out = []
    for em in world.nodes_of(NodeKind.NON_COOP_EMITTER):
        if em.failed or em.emitter is None:
            continue
        dist = float(np.linalg.norm(em.position - here))
        if dist <= 0:
            continue
        rss = em.emitter.tx_power - path_loss(dist, em.emitter.freq)
        if rss < sensitivity:
            continue
        toa = read_clock(observer_node.clock, t_emit + dist / SPEED_OF_LIGHT)
        if rng is not None:
            toa += rng.normal(0.0, TOA_JITTER[observer_node.clock.achieved_class])
        out.append(
            EmitterObservation(
                observer=observer_node.id,
                toa=toa,
                rss=rss,
                observed_freq=em.emitter.freq,
                observer_position=tuple(float(v) for v in here),
                sync_class=observer_node.clock.achieved_class,
            )
        )
    return out
