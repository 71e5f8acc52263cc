"""Processing: frame transforms, point-cloud fusion, clustering, tracking,
emitter localisation and occupancy mapping."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dataflow import DetectedObject, SensingMetaData, SensingPayload, validate
from .sensing import EmitterObservation
from .world import SPEED_OF_LIGHT, Pose

LOG_ODDS_FREE = -0.4
LOG_ODDS_HIT = 0.85
LOG_ODDS_CLAMP = 10.0
RADAR_FREQ_CUTOFF = 24e9


class MissingMetadata(ValueError):
    pass


class InsufficientObservers(ValueError):
    pass


@dataclass
class Cloud:
    """World-frame points with per-point radial speed and source node."""

    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    doppler: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sources: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def concat(cls, clouds: Sequence[Cloud]) -> Cloud:
        if not clouds:
            return cls()
        return cls(
            np.concatenate([c.positions for c in clouds]).reshape(-1, 3),
            np.concatenate([c.doppler for c in clouds]),
            np.concatenate([c.sources for c in clouds]).astype(int),
        )


def _directions(payload: SensingPayload, yaw: float) -> np.ndarray:
    az = np.array([p.azimuth for p in payload.points], dtype=float) + yaw
    el = np.array([p.elevation for p in payload.points], dtype=float)
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=1)


def to_world_frame(payload: SensingPayload, metadata: SensingMetaData | None) -> Cloud:
    if metadata is None or metadata.capture_pose is None:
        raise MissingMetadata("point cloud has no capture pose")
    if payload.level != 1:
        raise ValueError(f"expected a level-1 point cloud, got level {payload.level}")
    n = len(payload.points)
    if n == 0:
        return Cloud()
    pose = metadata.capture_pose
    origin = np.asarray(pose.position, dtype=float)
    u = _directions(payload, pose.yaw)
    ranges = np.array([p.range for p in payload.points], dtype=float)
    if metadata.illuminator is None:
        pts = origin + ranges[:, None] * u
    else:
        # intersect the arrival ray with the tx/rx ellipsoid of constant path sum
        b = np.asarray(metadata.illuminator, dtype=float) - origin
        denom = 2 * (ranges - u @ b)
        r = (ranges**2 - b @ b) / np.where(np.abs(denom) < 1e-12, 1e-12, denom)
        pts = origin + r[:, None] * u
    doppler = np.array([p.doppler for p in payload.points], dtype=float)
    return Cloud(pts, doppler, np.full(n, metadata.source, dtype=int))


@dataclass
class FusionResult:
    cloud: Cloud
    accepted: list[int]
    rejected: list[tuple[int, int | None, str]]
    reference_time: float | None


def fuse_point_clouds(
    inputs: Iterable[tuple[SensingPayload, SensingMetaData | None]],
    reference_time: float | None = None,
    local_source: int | None = None,
) -> FusionResult:
    """Merge point clouds from several nodes into one world-frame cloud.

    Capture poses are taken to refer to ``reference_time`` (the frame epoch);
    each source is shifted by its velocity times its timestamp skew from that
    epoch.  Without an explicit epoch the earliest accepted timestamp is used.
    Entries failing validation, carrying sync class 0, or not at level 1 are
    rejected and reported; fusion never aborts.  Entries produced by
    ``local_source`` (the fusing node itself) need no common time base and are
    exempt from the sync-class check.
    """
    entries = list(inputs)
    ok: list[tuple[int, SensingPayload, SensingMetaData]] = []
    rejected: list[tuple[int, int | None, str]] = []
    for i, (payload, md) in enumerate(entries):
        source = md.source if md is not None else None
        problems = validate(payload, md)
        if problems:
            rejected.append((i, source, problems[0]))
        elif payload.level == 0:
            rejected.append((i, source, "raw level-0 input"))
        elif payload.level != 1:
            rejected.append((i, source, "not a point cloud"))
        elif md.sync_class == 0 and md.source != local_source:
            rejected.append((i, source, "sync class 0"))
        else:
            ok.append((i, payload, md))
    t_ref = reference_time
    if t_ref is None and ok:
        t_ref = min(md.timestamp for _, _, md in ok)
    clouds = []
    for _, payload, md in ok:
        cloud = to_world_frame(payload, md)
        skew = md.timestamp - t_ref
        cloud.positions = cloud.positions + np.asarray(md.capture_pose.velocity) * skew
        clouds.append(cloud)
    return FusionResult(Cloud.concat(clouds), [i for i, _, _ in ok], rejected, t_ref)


def classify_extent(extent: float) -> str:
    if extent < 1.0:
        return "pedestrian-like"
    if extent < 6.0:
        return "vehicle-like"
    return "large"


def cluster_labels(positions: np.ndarray, linkage: float = 2.0) -> list[int]:
    """Single-linkage cluster index per point via a spatial hash of cell ``linkage``."""
    n = len(positions)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    cells: dict[tuple[int, ...], list[int]] = defaultdict(list)
    keys = [tuple(int(math.floor(c / linkage)) for c in p) for p in positions]
    for i, k in enumerate(keys):
        cells[k].append(i)
    offsets = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)]
    for i in range(n):
        kx, ky, kz = keys[i]
        for dx, dy, dz in offsets:
            for j in cells.get((kx + dx, ky + dy, kz + dz), ()):
                if j > i and float(np.linalg.norm(positions[i] - positions[j])) <= linkage:
                    ri, rj = find(i), find(j)
                    if ri != rj:
                        parent[max(ri, rj)] = min(ri, rj)
    roots: dict[int, int] = {}
    return [roots.setdefault(find(i), len(roots)) for i in range(n)]


def cluster_objects(cloud: Cloud, linkage: float = 2.0) -> tuple[DetectedObject, ...]:
    if len(cloud) == 0:
        return ()
    labels = np.asarray(cluster_labels(cloud.positions, linkage))
    objects = []
    for k in range(labels.max() + 1):
        members = labels == k
        pts = cloud.positions[members]
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        extent = hi - lo
        speed = float(cloud.doppler[members].mean())
        objects.append(
            DetectedObject(
                position=tuple(float(v) for v in pts.mean(axis=0)),
                # radial speed proxy only: direction is not observable from doppler
                velocity=(speed, 0.0, 0.0),
                extent=tuple(float(v) for v in extent),
                label=classify_extent(float(extent.max())),
                confidence=float(1.0 - math.exp(-len(pts) / 5.0)),
            )
        )
    return tuple(objects)


@dataclass
class Track:
    id: int
    position: np.ndarray
    velocity: np.ndarray
    gate: float = 5.0
    age: int = 1
    label: str = "unknown"
    confidence: float = 0.0
    misses: int = 0


class Tracker:
    """Nearest-neighbour alpha-beta tracker with constant-velocity prediction."""

    def __init__(self, alpha: float = 0.5, beta: float = 0.3, gate: float = 5.0, max_misses: int = 5):
        self.alpha, self.beta, self.gate, self.max_misses = alpha, beta, gate, max_misses
        self.tracks: list[Track] = []
        self._next_id = 0

    def update(self, objects: Sequence[DetectedObject], dt: float) -> list[Track]:
        if dt <= 0:
            raise ValueError("dt must be positive")
        zs = [np.asarray(o.position, dtype=float) for o in objects]
        free = set(range(len(zs)))
        survivors = []
        for trk in sorted(self.tracks, key=lambda t: t.id):
            pred = trk.position + trk.velocity * dt
            best, best_d = None, trk.gate
            for j in sorted(free):
                d = float(np.linalg.norm(zs[j] - pred))
                if d <= best_d:
                    best, best_d = j, d
            if best is None:
                trk.position, trk.misses = pred, trk.misses + 1
                if trk.misses < self.max_misses:
                    survivors.append(trk)
                continue
            free.discard(best)
            resid = zs[best] - pred
            trk.position = pred + self.alpha * resid
            trk.velocity = trk.velocity + (self.beta / dt) * resid
            trk.age += 1
            trk.misses = 0
            trk.label = objects[best].label
            trk.confidence = objects[best].confidence
            survivors.append(trk)
        for j in sorted(free):
            survivors.append(
                Track(self._next_id, zs[j].copy(), np.zeros(3), self.gate, 1, objects[j].label, objects[j].confidence)
            )
            self._next_id += 1
        self.tracks = sorted(survivors, key=lambda t: t.id)
        return self.tracks


def track_update(tracker: Tracker, objects: Sequence[DetectedObject], dt: float) -> list[Track]:
    return tracker.update(objects, dt)


@dataclass(frozen=True)
class EmitterEstimate:
    position: tuple[float, float, float]
    residual: float  # RMS TDOA residual, seconds
    classification: str
    observers: frozenset[int]
    converged: bool = True
    iterations: int = 0

    def __post_init__(self):
        if len(self.observers) < 3:
            raise ValueError("an emitter estimate needs at least three observers")


def _classify_emitter(freqs: Sequence[float]) -> str:
    radar = [f >= RADAR_FREQ_CUTOFF for f in freqs]
    if all(radar):
        return "radar"
    if not any(radar):
        return "comm"
    return "unknown"


def tdoa_localize(
    observations: Sequence[EmitterObservation],
    emitter_height: float = 0.0,
    max_iter: int = 50,
    tol: float = 1e-6,
) -> EmitterEstimate:
    """Gauss-Newton TDOA fix in the plane ``z = emitter_height``.

Differences are taken relative to the earliest observer; the solve starts
from the RSS-weighted centroid of the observers.
"""
    seen: dict[int, EmitterObservation] = {}
    for obs in observations:
        if obs.sync_class >= 2 and obs.observer not in seen:
            seen[obs.observer] = obs
    if len(seen) < 3:
        raise InsufficientObservers(f"{len(seen)} synchronised observers, need 3")
    obs = sorted(seen.values(), key=lambda o: (o.toa, o.observer))
    P = np.array([o.observer_position for o in obs], dtype=float)
    toa = np.array([o.toa for o in obs], dtype=float)
    measured = SPEED_OF_LIGHT * (toa[1:] - toa[0])
    dz = emitter_height - P[:, 2]

    def residuals(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        diff = x - P[:, :2]
        d = np.maximum(np.sqrt((diff**2).sum(axis=1) + dz**2), 1e-9)
        u = diff / d[:, None]
        return (d[1:] - d[0]) - measured, u[1:] - u[0]

    w = 10 ** (np.array([o.rss for o in obs]) / 10)
    x = (w[:, None] * P[:, :2]).sum(axis=0) / w.sum()
    r, J = residuals(x)
    cost = float(r @ r)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        scale = 1.0
        while True:
            trial = x + scale * step
            r_t, J_t = residuals(trial)
            c_t = float(r_t @ r_t)
            if c_t <= cost or scale < 1e-6:
                break
            scale /= 2
        moved = float(np.linalg.norm(trial - x))
        x, r, J, cost = trial, r_t, J_t, c_t
        if moved < tol:
            converged = True
            break
    rms = math.sqrt(cost / len(r)) / SPEED_OF_LIGHT
    return EmitterEstimate(
        position=(float(x[0]), float(x[1]), float(emitter_height)),
        residual=rms,
        classification=_classify_emitter([o.observed_freq for o in obs]),
        observers=frozenset(seen),
        converged=converged,
        iterations=it,
    )


class OccupancyMap:
    def __init__(self, origin: tuple[float, float], cell_size: float, shape: tuple[int, int]):
        if cell_size <= 0:
            raise ValueError("cell_size must be positive")
        self.origin = (float(origin[0]), float(origin[1]))
        self.cell_size = float(cell_size)
        self.grid = np.zeros(shape, dtype=float)
        self.ignored = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    def cell(self, x: float, y: float) -> tuple[int, int]:
        return (
            int(math.floor((x - self.origin[0]) / self.cell_size)),
            int(math.floor((y - self.origin[1]) / self.cell_size)),
        )

    def contains(self, c: tuple[int, int]) -> bool:
        return 0 <= c[0] < self.grid.shape[0] and 0 <= c[1] < self.grid.shape[1]

    def cell_centre(self, c: tuple[int, int]) -> tuple[float, float]:
        return (self.origin[0] + (c[0] + 0.5) * self.cell_size, self.origin[1] + (c[1] + 0.5) * self.cell_size)

    def to_pgm(self) -> str:
        """ASCII PGM (P2): white free, black occupied, north up."""
        prob = 1.0 / (1.0 + np.exp(-self.grid))
        gray = np.rint(255 * (1.0 - prob)).astype(int)
        nx, ny = self.grid.shape
        lines = ["P2", f"{nx} {ny}", "255"]
        for j in reversed(range(ny)):
            lines.append(" ".join(str(v) for v in gray[:, j]))
        return "\n".join(lines) + "\n"


def _bresenham(a: tuple[int, int], b: tuple[int, int]) -> list[tuple[int, int]]:
    (x0, y0), (x1, y1) = a, b
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx, sy = (1 if x1 > x0 else -1), (1 if y1 > y0 else -1)
    err = dx + dy
    cells = []
    while True:
        cells.append((x0, y0))
        if (x0, y0) == (x1, y1):
            return cells
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def update_occupancy(grid_map: OccupancyMap, cloud: Cloud | np.ndarray, capture_pose: Pose) -> OccupancyMap:
    positions = cloud.positions if isinstance(cloud, Cloud) else np.asarray(cloud, dtype=float)
    start = grid_map.cell(capture_pose.position[0], capture_pose.position[1])
    g = grid_map.grid
    for p in positions:
        end = grid_map.cell(p[0], p[1])
        if not grid_map.contains(end):
            grid_map.ignored += 1
            continue
        for c in _bresenham(start, end)[:-1]:
            if grid_map.contains(c):
                g[c] = max(g[c] + LOG_ODDS_FREE, -LOG_ODDS_CLAMP)
        g[end] = min(g[end] + LOG_ODDS_HIT, LOG_ODDS_CLAMP)
    return grid_map
