"""Run orchestration: wires scenario nodes into the event engine and writes
``trace.jsonl``, ``metrics.csv`` and (when mapping is active) ``occupancy.pgm``.

Event kinds scheduled here: ``group_update``, ``sync_round``, ``frame``,
``tx``, ``rx``, ``fuse``, ``emission``, ``localize``, ``sar_sample`` and
``fault``.  Handlers add their own records (``group``, ``schedule``,
``sync``, ``tx_result``, ``access``, ``detect``, ``fused`` and so on).
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .coordination import (
    SYNC_BOUNDS,
    CoopGroup,
    CoopLevel,
    Destination,
    OffloadLink,
    discipline_clock,
    elect_leader,
    form_groups,
    offload_decision,
    select_coop_level,
    sync_exchange,
    sync_valid,
)
from .dataflow import (
    MsgType,
    Message,
    SensingData,
    SensingPayload,
    SyncSignal,
    Waveform,
    decode,
    encode,
    make_metadata,
    validate,
)
from .fusion import (
    InsufficientObservers,
    OccupancyMap,
    Tracker,
    cluster_objects,
    fuse_point_clouds,
    tdoa_localize,
    to_world_frame,
    update_occupancy,
)
from .privacy import (
    HUMAN_LABELS,
    Deny,
    KeyRegistry,
    Request,
    Transform,
    consent_filter,
    decision_name,
    evaluate_policy,
    minimize,
    obfuscate,
    tag,
    verify,
)
from .radio import ConflictGraph, Delivered, RadioConfig, SlotAllocation, SlotLedger, assign_slots, build_conflict_graph, transmit
from .scenario import Scenario
from .sensing import (
    SarConfig,
    SyncTooCoarse,
    bistatic_detect,
    detect_targets,
    noise_rng,
    sar_bearings,
    sar_refine_azimuth,
    sniff_emitters,
    surface_scan,
    wrap_angle,
)
from .world import Event, Node, NodeKind, Pose, World, clock_error, line_of_sight, read_clock, run_events

INFRASTRUCTURE = (NodeKind.BASE_STATION, NodeKind.MEC)
MAX_TX_ATTEMPTS = 4
OFFLOAD_PROBE_BYTES = 20_000
RAW_PROBE_SAMPLES = 16


@dataclass
class Entry:
    """One payload/metadata pair plus the ground-truth ids behind its points."""

    payload: SensingPayload
    metadata: Any
    truth: tuple[int, ...] = ()
    path: str = "mono"


@dataclass
class MetricsRecord:
    scenario: str
    seed: int
    duration: float
    events: int = 0
    trace_records: int = 0
    frames: int = 0
    points: int = 0
    mono_objects: dict[int, set[int]] = field(default_factory=dict)
    bistatic_objects: set[int] = field(default_factory=set)
    detected_objects: set[int] = field(default_factory=set)
    delivered: Counter = field(default_factory=Counter)
    drops: Counter = field(default_factory=Counter)
    sync_residuals: list[float] = field(default_factory=list)
    sync_violations: int = 0
    policy_decisions: Counter = field(default_factory=Counter)
    fusion_rejections: Counter = field(default_factory=Counter)
    offload: Counter = field(default_factory=Counter)
    localization_errors: list[float] = field(default_factory=list)
    emitter_classes: list[str] = field(default_factory=list)
    sar: list[dict] = field(default_factory=list)
    faults: int = 0
    occupancy_ignored: int = 0

    @property
    def cellular_tx(self) -> int:
        return self.delivered["cellular"] + sum(v for (link, _), v in self.drops.items() if link == "cellular")

    @property
    def mono_union(self) -> set[int]:
        return set().union(*self.mono_objects.values()) if self.mono_objects else set()

    @property
    def bistatic_only(self) -> set[int]:
        return self.bistatic_objects - self.mono_union

    @property
    def coverage_gain(self) -> int:
        """Objects reaching a fusion host beyond what the best lone node sees."""
        best_single = max((len(v) for v in self.mono_objects.values()), default=0)
        return len(self.detected_objects) - best_single

    def rows(self) -> list[tuple[str, str, Any]]:
        rows: list[tuple[str, str, Any]] = [
            ("scenario", "", self.scenario),
            ("seed", "", self.seed),
            ("duration", "", self.duration),
            ("events", "", self.events),
            ("trace_records", "", self.trace_records),
            ("frames", "", self.frames),
            ("points", "", self.points),
            ("detected_objects", "", len(self.detected_objects)),
            ("bistatic_only_objects", "", len(self.bistatic_only)),
            ("coverage_gain", "", self.coverage_gain),
            ("cellular_tx", "", self.cellular_tx),
            ("faults", "", self.faults),
            ("occupancy_ignored", "", self.occupancy_ignored),
        ]
        rows += [("detected_object", str(i), 1) for i in sorted(self.detected_objects)]
        rows += [("mono_objects", str(n), len(v)) for n, v in sorted(self.mono_objects.items())]
        rows += [("delivered", k, v) for k, v in sorted(self.delivered.items())]
        rows += [("dropped", f"{link}:{reason}", v) for (link, reason), v in sorted(self.drops.items())]
        if self.sync_residuals:
            res = np.abs(self.sync_residuals)
            rows += [
                ("sync_exchanges", "", len(res)),
                ("sync_residual", "max", float(res.max())),
                ("sync_residual", "mean", float(res.mean())),
            ]
        rows.append(("sync_violations", "", self.sync_violations))
        rows += [("policy_decision", k, v) for k, v in sorted(self.policy_decisions.items())]
        rows += [("fusion_rejection", k, v) for k, v in sorted(self.fusion_rejections.items())]
        rows += [("offload", k, v) for k, v in sorted(self.offload.items())]
        rows += [("localization_error", str(i), e) for i, e in enumerate(self.localization_errors)]
        rows += [("emitter_class", str(i), c) for i, c in enumerate(self.emitter_classes)]
        for i, s in enumerate(self.sar):
            rows += [(f"sar_{k}", str(i), v) for k, v in s.items()]
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("metric", "key", "value"))
        for metric, key, value in self.rows():
            w.writerow((metric, key, repr(value) if isinstance(value, float) else value))
        return buf.getvalue()


def _floats(v) -> list[float]:
    return [float(x) for x in v]


class Simulation:
    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.world = World([spec.build() for spec in scenario.nodes], scenario.obstacles)
        self.roles = {spec.id: spec.role for spec in scenario.nodes}
        self.timing = scenario.timing
        self.net = scenario.network
        self.registry = KeyRegistry(
            {self._key(n): hashlib.sha256(f"{scenario.seed}:{n}".encode()).digest() for n in self.world.nodes}
        )
        self.groups: list[CoopGroup] = []
        self.group_of: dict[int, CoopGroup] = {}
        self.graph = ConflictGraph(frozenset(), frozenset())
        self.allocation = SlotAllocation({}, 1)
        self.ledger = SlotLedger()
        self.inbox: dict[int, list[Entry]] = {}
        self.pending: dict[int, list[Entry]] = {}
        self.trackers: dict[int, Tracker] = {}
        self.metrics = MetricsRecord(scenario.name, scenario.seed, scenario.duration)
        self._signature = None
        self.map: OccupancyMap | None = None
        self.map_host: int | None = None
        if scenario.mapping is not None:
            m = scenario.mapping
            self.map = OccupancyMap(tuple(m.get("origin", (0.0, 0.0))), float(m.get("cell_size", 1.0)), tuple(m.get("shape", (100, 100))))
            self.map_host = self._resolve_host(m.get("host", "mec"))
        self.sar_poses: list[Pose] = []
        w = self.world
        w.handlers.update(
            group_update=self.on_group_update,
            sync_round=self.on_sync_round,
            frame=self.on_frame,
            tx=self.on_tx,
            rx=self.on_rx,
            fuse=self.on_fuse,
            emission=self.on_emission,
            localize=self.on_localize,
            sar_sample=self.on_sar_sample,
            fault=self.on_fault,
        )

    # --- helpers ----------------------------------------------------------

    @staticmethod
    def _key(node_id: int) -> str:
        return f"node-{node_id}"

    def _resolve_host(self, host) -> int | None:
        if isinstance(host, int):
            return host
        kind = {"mec": NodeKind.MEC, "base_station": NodeKind.BASE_STATION}.get(host)
        found = sorted(n.id for n in self.world.nodes.values() if n.kind is kind)
        return found[0] if found else None

    def rng(self, node: int, seq: int, stream: int) -> np.random.Generator | None:
        if not self.sc.noise:
            return None
        return noise_rng(self.sc.seed, node, seq, stream)

    def _alive(self, *kinds: NodeKind) -> list[Node]:
        return [n for n in sorted(self.world.nodes.values(), key=lambda n: n.id) if n.kind in kinds and not n.failed]

    def _sensing_nodes(self) -> list[Node]:
        return [
            n
            for n in sorted(self.world.nodes.values(), key=lambda n: n.id)
            if n.sensing_active and n.kind not in INFRASTRUCTURE
        ]

    def _link(self, a: Node, b: Node) -> str:
        return "cellular" if a.kind in INFRASTRUCTURE or b.kind in INFRASTRUCTURE else "sidelink"

    def _cellular_config(self, node: Node) -> RadioConfig:
        return node.radio if node.kind in INFRASTRUCTURE else RadioConfig.cellular_ue()

    def _schedule(self, due: float, kind: str, node=None, data=None, obj=None) -> None:
        if due <= self.sc.duration:
            self.world.schedule(due, kind, node, data, obj)

    def start(self) -> None:
        fp = self.timing["frame_period"]
        self._schedule(0.0, "group_update", data={"periodic": True})
        self._schedule(0.0, "sync_round")
        self._schedule(fp / 2, "frame", data={"frame": 0})
        for n in sorted(self.world.nodes.values(), key=lambda n: n.id):
            if n.emitter is not None:
                for t in n.emitter.emissions:
                    self._schedule(t, "emission", node=n.id)
        for f in sorted(self.sc.faults, key=lambda f: (f["at"], f["node"])):
            self._schedule(float(f["at"]), "fault", node=int(f["node"]))
        if self.sc.sar is not None:
            s = self.sc.sar
            node = self.world.node(int(s["node"]))
            speed = float(np.linalg.norm(node.velocity_at(float(s["start"]))))
            count = int(s.get("poses", 11))
            if speed <= 0 or count < 2:
                raise ValueError("sar needs a moving node and at least two poses")
            step = float(s["aperture"]) / (speed * (count - 1))
            for k in range(count):
                self._schedule(float(s["start"]) + k * step, "sar_sample", node=node.id, data={"index": k, "last": k == count - 1})

    # --- group management -------------------------------------------------

    def on_group_update(self, world: World, ev: Event) -> None:
        nodes = sorted(world.nodes.values(), key=lambda n: n.id)
        profiles = {n.id: n.profile for n in nodes if n.profile is not None}
        groups = []
        for g in form_groups(nodes, self.net["comm_range"]):
            g = replace(g, leader=elect_leader(g, profiles))
            groups.append(select_coop_level(g, profiles, self.sc.app_requirement))
        self.groups = groups
        self.group_of = {m: g for g in groups for m in g.members}
        self.graph = build_conflict_graph(nodes, self.net["interference_range"])
        self.allocation = assign_slots(self.graph)
        signature = (tuple((sorted(g.members), g.leader, int(g.level)) for g in groups), tuple(sorted(self.allocation.slots.items())))
        if signature != self._signature:
            self._signature = signature
            for g in groups:
                world.emit(
                    "group",
                    g.leader,
                    {
                        "group": g.id,
                        "members": sorted(g.members),
                        "leader": g.leader,
                        "level": int(g.level),
                        "jcas": {str(m): bool(profiles[m].supports_jcas_waveform) for m in sorted(g.members)},
                    },
                )
            world.emit(
                "schedule",
                None,
                {
                    "slots": {str(k): v for k, v in sorted(self.allocation.slots.items())},
                    "period": self.allocation.period,
                    "edges": sorted([min(e), max(e)] for e in (tuple(e) for e in self.graph.edges)),
                    "max_degree": self.graph.max_degree(),
                },
            )
            self._log_offload(world, profiles)
        if ev.data.get("periodic"):
            self._schedule(round(world.time + self.timing["group_interval"], 9), "group_update", data={"periodic": True})

    def _log_offload(self, world: World, profiles) -> None:
        bs_up = bool(self._alive(NodeKind.BASE_STATION))
        mec = self._alive(NodeKind.MEC)
        for node in self._sensing_nodes():
            group = self.group_of.get(node.id)
            links = {}
            if group is not None and group.leader != node.id and group.level >= CoopLevel.CL3:
                leader = world.node(group.leader)
                links[Destination.LEADER] = OffloadLink(leader.radio, compute_units=profiles[leader.id].compute_units)
            if mec:
                links[Destination.MEC] = OffloadLink(
                    RadioConfig.cellular_ue(), compute_units=profiles[mec[0].id].compute_units, available=bs_up
                )
            dest = offload_decision(node.id, OFFLOAD_PROBE_BYTES, profiles, links)
            self.metrics.offload[dest.value] += 1
            world.emit("offload", node.id, {"bytes": OFFLOAD_PROBE_BYTES, "destination": dest.value})

    # --- synchronisation --------------------------------------------------

    def on_sync_round(self, world: World, ev: Event) -> None:
        now = world.time
        for node in sorted(world.nodes.values(), key=lambda n: n.id):
            decayed = sync_valid(node.clock, now)
            if decayed is not node.clock:
                world.emit("sync_lost", node.id, {"class": node.clock.achieved_class, "last_sync": node.clock.last_sync})
                node.clock = decayed
        target = int(self.net["sync_class"])
        if self.net["sync_source"] == "base_station":
            stations = self._alive(NodeKind.BASE_STATION)
            if stations:
                ref = stations[0]
                ref.clock = discipline_clock(ref.clock, 3, now, None)
                for node in self._sensing_nodes():
                    if node.radio_capable:
                        self._send_sync(ref, node, target)
        else:
            for g in self.groups:
                if len(g.members) < 2 or g.level < CoopLevel.CL2:
                    continue
                leader = world.node(g.leader)
                leader.clock = discipline_clock(leader.clock, target, now, None)
                for m in sorted(g.members - {g.leader}):
                    self._send_sync(leader, world.node(m), target)
        self._schedule(round(now + self.timing["sync_interval"], 9), "sync_round")

    def _send_sync(self, src: Node, dst: Node, target: int) -> None:
        cls = min(target, dst.profile.max_sync_class if dst.profile else target)
        if cls < 1:
            return
        self.queue_tx(src, dst, SyncSignal(cls, self.world.time))

    # --- transmission -----------------------------------------------------

    def queue_tx(self, src: Node, dst: Node, body, entry: Entry | None = None, attempt: int = 0, after: float | None = None) -> None:
        now = self.world.time if after is None else after
        link = self._link(src, dst)
        due = now if link == "cellular" else max(now, self.allocation.next_slot_start(src.id, now, self.timing["slot_duration"]))
        message = Message(src.id, dst.id, body)
        self._schedule(
            due,
            "tx",
            node=src.id,
            data={"src": src.id, "dst": dst.id, "type": message.msg_type.name, "link": link, "attempt": attempt},
            obj=(message, entry),
        )

    def on_tx(self, world: World, ev: Event) -> None:
        message, entry = ev.obj
        tx, rx = world.node(message.source), world.node(message.dest)
        link = ev.data["link"]
        data = encode(message)
        record: dict[str, Any] = {
            "src": tx.id,
            "dst": rx.id,
            "type": message.msg_type.name,
            "link": link,
            "bytes": len(data),
            "digest": hashlib.sha256(data).hexdigest()[:16],
        }
        if isinstance(message.body, SensingData):
            record["level"] = message.body.payload.level
            record["md_level"] = message.body.metadata.level if message.body.metadata is not None else None
        if not (tx.radio_capable and rx.radio_capable):
            record.update(outcome="Dropped", reason="NodeDown")
            self.metrics.drops[(link, "NodeDown")] += 1
            world.emit("tx_result", tx.id, record)
            return
        slot_duration = self.timing["slot_duration"]
        if link == "cellular":
            out = transmit(
                data, tx, rx, world, None, None,
                slot_duration=slot_duration, tx_config=self._cellular_config(tx), rx_config=self._cellular_config(rx),
            )
        else:
            out = transmit(data, tx, rx, world, self.allocation, self.ledger, slot_duration=slot_duration)
        abs_slot = math.floor(round(world.time / slot_duration, 9))
        record["abs_slot"] = abs_slot
        record["slot"] = self.allocation.slot_of(tx.id) if link == "sidelink" else None
        record["period"] = self.allocation.period
        if isinstance(out, Delivered):
            record.update(outcome="Delivered", snr=round(out.snr, 6), at=out.at)
            self.metrics.delivered[link] += 1
            world.emit("tx_result", tx.id, record)
            auth = tag(data, self._key(tx.id), self.registry)
            self._schedule(
                out.at, "rx", node=rx.id, data={"src": tx.id, "type": message.msg_type.name, "link": link}, obj=(data, auth, entry)
            )
            return
        record.update(outcome="Dropped", reason=out.reason, snr=None if math.isnan(out.snr) else round(out.snr, 6))
        self.metrics.drops[(link, out.reason)] += 1
        world.emit("tx_result", tx.id, record)
        attempt = ev.data["attempt"] + 1
        if out.reason in ("OutOfSlot", "Overflow") and attempt < MAX_TX_ATTEMPTS:
            self.queue_tx(tx, rx, message.body, entry, attempt, after=world.time + slot_duration)

    def _illuminate(self, world: World, tx: Node, rx: Node, link: str, seq: int) -> None:
        """At CL4 a received sidelink frame doubles as bistatic illumination
        for every other sensing member of the transmitter's group."""
        group = self.group_of.get(tx.id)
        if link != "sidelink" or group is None or group.level < CoopLevel.CL4 or rx.id not in group.members:
            return
        for m in sorted(group.members - {tx.id}):
            node = world.node(m)
            if not node.sensing_active:
                continue
            entry = self._bistatic(tx, node, seq)
            if entry is not None:
                self.pending.setdefault(m, []).append(entry)

    def _bistatic(self, tx: Node, rx: Node, seq: int) -> Entry | None:
        truth: list[int] = []
        try:
            payload = bistatic_detect(tx, rx, self.world, None, self.rng(rx.id, seq, 10 + tx.id % 1000), truth)
        except SyncTooCoarse as exc:
            self.world.emit("bistatic_skipped", rx.id, {"tx": tx.id, "reason": str(exc)})
            return None
        md = make_metadata(
            rx, None, read_clock(rx.clock, self.world.time), 1, frozenset({"radar"}),
            illuminator=tuple(_floats(tx.position)),
        )
        return Entry(payload, md, tuple(truth), "bistatic")

    def on_rx(self, world: World, ev: Event) -> None:
        data, auth, entry = ev.obj
        if not verify(data, auth, self.registry):
            world.emit("auth_fail", ev.node, {"src": ev.data["src"]})
            return
        message = decode(data)
        node = world.node(message.dest)
        self._illuminate(world, world.node(message.source), node, ev.data["link"], ev.seq)
        if message.msg_type is MsgType.SYNC:
            body = message.body
            before = node.clock.achieved_class
            node.clock = sync_exchange(world.node(message.source), node, body.sync_class, world.time, self.rng(node.id, ev.seq, 1))
            err = clock_error(node.clock, world.time)
            bound = SYNC_BOUNDS[node.clock.achieved_class]
            self.metrics.sync_residuals.append(err)
            self.metrics.sync_violations += abs(err) > bound
            world.emit(
                "sync",
                node.id,
                {"source": message.source, "class": node.clock.achieved_class, "previous": before, "error": err, "bound": bound},
            )
        elif message.msg_type is MsgType.SENSING:
            body = message.body
            truth = entry.truth if entry is not None else ()
            path = entry.path if entry is not None else "remote"
            self.inbox.setdefault(node.id, []).append(Entry(body.payload, body.metadata, truth, path))

    # --- sensing and sharing ----------------------------------------------

    def fusion_host(self, node: Node) -> int:
        if self.net["fusion_host"] == "mec":
            mec = self._alive(NodeKind.MEC)
            if mec:
                return mec[0].id
        group = self.group_of.get(node.id)
        if group is not None and group.level >= CoopLevel.CL3 and not self.world.node(group.leader).failed:
            return group.leader
        return node.id

    def _requester_role(self, host: int, source: int) -> str:
        if self.roles.get(host):
            return self.roles[host]
        node = self.world.node(host)
        if node.kind in INFRASTRUCTURE or node.kind is NodeKind.RSU:
            return "infrastructure"
        group = self.group_of.get(source)
        if group is not None and group.leader == host:
            return "leader"
        if group is not None and host in group.members:
            return "group_member"
        return "external"

    def on_frame(self, world: World, ev: Event) -> None:
        k = ev.data["frame"]
        self.metrics.frames += 1
        for node in self._sensing_nodes():
            entries = self._sense(node, ev.seq)
            entries += self.pending.pop(node.id, [])
            summary = {"mono": [], "bistatic": [], "virtual": [], "surface": 0}
            for e in entries:
                self.metrics.points += len(e.payload)
                if e.path == "surface":
                    summary["surface"] += len(e.payload)
                else:
                    summary[e.path] = sorted(set(summary[e.path]) | set(e.truth))
            self.metrics.mono_objects.setdefault(node.id, set()).update(summary["mono"])
            self.metrics.bistatic_objects.update(summary["bistatic"])
            world.emit("detect", node.id, summary)
            host = self.fusion_host(node)
            if host == node.id:
                self.inbox.setdefault(node.id, []).extend(entries)
                continue
            if k == 0 and self.net["raw_share_attempts"]:
                self._share(node, host, [self._raw_probe(node)])
            self._share(node, host, [e for e in entries if len(e.payload)])
        fp = self.timing["frame_period"]
        self._schedule(world.time + 0.4 * fp, "fuse", data={"frame": k})
        # absolute frame times keep float error from accumulating
        self._schedule((k + 1.5) * fp, "frame", data={"frame": k + 1})

    def _metadata(self, node: Node, cfg, level: int = 1, tags=frozenset({"radar"})):
        return make_metadata(node, cfg, read_clock(node.clock, self.world.time), level, tags)

    def _sense(self, node: Node, seq: int) -> list[Entry]:
        cfg = node.sensor
        mono_cfg = cfg if cfg.mode == "mono" else replace(cfg, mode="mono")
        truth: list[int] = []
        payload = detect_targets(node, self.world, mono_cfg, self.rng(node.id, seq, 0), truth)
        entries = [Entry(payload, self._metadata(node, cfg), tuple(truth), "mono")]
        m = self.sc.mapping
        if m is not None and node.id in m.get("scanners", []):
            scan = surface_scan(node, self.world, cfg, int(m.get("beams", 90)), self.rng(node.id, seq, 2))
            entries.append(Entry(scan, self._metadata(node, cfg, tags=frozenset({"radar", "map"})), (), "surface"))
        group = self.group_of.get(node.id)
        if group is not None and group.level >= CoopLevel.CL3 and cfg.mode in ("bi", "multi"):
            for other in sorted(group.members - {node.id}):
                tx = self.world.node(other)
                if tx.sensing_active:
                    entry = self._bistatic(tx, node, seq)
                    if entry is not None:
                        entries.append(entry)
        for v in self.sc.virtual_sensors:
            if int(v["node"]) == node.id:
                entries.append(self._virtual(node, v, seq))
        return entries

    def _virtual(self, node: Node, spec: dict, seq: int) -> Entry:
        """Scripted pseudo-observations (camera-like) of listed targets."""
        from .dataflow import RadarPoint

        sigma = float(spec.get("sigma", 0.3))
        max_range = float(spec.get("max_range", 60.0))
        rng = self.rng(node.id, seq, 4)
        points, truth = [], []
        origin = node.position
        for t in sorted(int(x) for x in spec.get("targets", [])):
            tgt = self.world.node(t)
            d = tgt.position - origin
            dist = float(np.linalg.norm(d))
            if dist <= 0 or dist > max_range or not line_of_sight(self.world, origin, tgt.position):
                continue
            az = wrap_angle(math.atan2(d[1], d[0]) - node.pose.yaw)
            el = math.asin(d[2] / dist)
            if rng is not None:
                dist = max(dist + rng.normal(0.0, sigma), 1e-6)
            points.append(RadarPoint(dist, az, el, 0.0, 0.0))
            truth.append(t)
        cfg = replace(node.sensor, waveform=Waveform.VIRTUAL)
        return Entry(SensingPayload.point_cloud(points), self._metadata(node, cfg, tags=frozenset({"virtual"})), tuple(truth), "virtual")

    def _raw_probe(self, node: Node) -> Entry:
        samples = np.zeros(RAW_PROBE_SAMPLES, dtype=complex)
        payload = SensingPayload.raw(samples, node.sensor.bandwidth)
        return Entry(payload, self._metadata(node, node.sensor, level=0), (), "raw")

    def _share(self, node: Node, host_id: int, entries: list[Entry]) -> None:
        world = self.world
        host = world.node(host_id)
        role = self._requester_role(host_id, node.id)
        purpose = "mapping" if host_id == self.map_host else "cooperative_sensing"
        for e in entries:
            level = e.payload.level
            decision = evaluate_policy(self.sc.policy, Request(role, purpose, level))
            name = decision_name(decision)
            self.metrics.policy_decisions[name] += 1
            record = {"requester": host_id, "source": node.id, "role": role, "purpose": purpose, "level": level, "decision": name}
            if isinstance(decision, Transform):
                record.update(target_level=decision.target_level, granularity=decision.granularity)
            world.emit("access", node.id, record)
            if isinstance(decision, Deny):
                continue
            payload, md = e.payload, e.metadata
            if isinstance(decision, Transform):
                payload, md = minimize(payload, md, decision.target_level)
                if payload.level == 2:
                    payload = SensingPayload.object_list(self._generalise(payload.objects, decision.granularity, world.time))
            self.queue_tx(node, host, SensingData(payload, md), Entry(payload, md, e.truth, e.path))

    def _generalise(self, objects, granularity: float, now: float):
        seed = self.sc.seed & 0xFFFFFFFF
        humans = [o for o in objects if o.label in HUMAN_LABELS]
        others = [o for o in objects if o.label not in HUMAN_LABELS]
        out = list(obfuscate(others, granularity, seed)) if others else []
        if humans:
            out += consent_filter(humans, self.sc.consents, now, self.net["floor_granularity"], seed)
        return out

    # --- fusion -----------------------------------------------------------

    def on_fuse(self, world: World, ev: Event) -> None:
        for host in sorted(self.inbox):
            entries = self.inbox.pop(host)
            if not entries:
                continue
            clouds = [(e.payload, e.metadata) for e in entries if e.payload.level != 2]
            result = fuse_point_clouds(clouds, local_source=host)
            point_entries = [e for e in entries if e.payload.level != 2]
            objects = list(cluster_objects(result.cloud))
            truth: set[int] = set()
            paths: dict[str, set[int]] = {}
            for i in result.accepted:
                e = point_entries[i]
                truth.update(e.truth)
                paths.setdefault(e.path, set()).update(e.truth)
            for e in entries:
                if e.payload.level == 2 and not validate(e.payload, e.metadata):
                    objects.extend(e.payload.objects)
                    truth.update(e.truth)
                    paths.setdefault(e.path, set()).update(e.truth)
            for _, _, reason in result.rejected:
                self.metrics.fusion_rejections[reason] += 1
            tracks = self.trackers.setdefault(host, Tracker()).update(objects, self.timing["frame_period"])
            if self.map is not None and host == self.map_host:
                for i in result.accepted:
                    e = point_entries[i]
                    update_occupancy(self.map, to_world_frame(e.payload, e.metadata), e.metadata.capture_pose)
                self.metrics.occupancy_ignored = self.map.ignored
            self.metrics.detected_objects.update(truth)
            world.emit(
                "fused",
                host,
                {
                    "inputs": len(entries),
                    "sources": sorted({e.metadata.source for e in entries}),
                    "accepted": [point_entries[i].metadata.source for i in result.accepted],
                    "rejected": [[src, reason] for _, src, reason in result.rejected],
                    "points": len(result.cloud),
                    "objects": len(objects),
                    "tracks": len(tracks),
                    "truth": sorted(truth),
                    "paths": {k: sorted(v) for k, v in sorted(paths.items())},
                },
            )

    # --- emitters, SAR, faults ---------------------------------------------

    def on_emission(self, world: World, ev: Event) -> None:
        observations = []
        for node in self._sensing_nodes():
            if node.radio_capable:
                observations += sniff_emitters(node, world, world.time, self.rng(node.id, ev.seq, 3))
        world.emit(
            "emitter_obs",
            ev.node,
            {"observers": [o.observer for o in observations], "rss": [round(o.rss, 6) for o in observations]},
        )
        self._schedule(world.time + 1e-3, "localize", node=ev.node, obj=observations)

    def on_localize(self, world: World, ev: Event) -> None:
        truth = world.node(ev.node).position
        try:
            est = tdoa_localize(ev.obj, self.sc.emitter_height)
        except InsufficientObservers as exc:
            world.emit("emitter_estimate", ev.node, {"error": None, "reason": str(exc)})
            return
        err = float(np.linalg.norm(np.asarray(est.position[:2]) - truth[:2]))
        self.metrics.localization_errors.append(err)
        self.metrics.emitter_classes.append(est.classification)
        world.emit(
            "emitter_estimate",
            ev.node,
            {
                "position": list(est.position),
                "error": err,
                "residual": est.residual,
                "class": est.classification,
                "observers": sorted(est.observers),
                "converged": est.converged,
            },
        )

    def on_sar_sample(self, world: World, ev: Event) -> None:
        node = world.node(ev.node)
        self.sar_poses.append(node.pose)
        if not ev.data["last"]:
            return
        s = self.sc.sar
        target = world.node(int(s["target"])).position
        wavelength = 299_792_458.0 / node.sensor.carrier_freq
        precision = float(s.get("path_precision", wavelength * 0.1 / (4 * math.pi)))
        cfg = SarConfig(**{k: float(s[k]) for k in ("antenna_aperture", "single_snapshot_std", "thermal_floor") if k in s})
        poses, bearings = sar_bearings(self.sar_poses, target, precision, self.rng(node.id, ev.seq, 5))
        est = sar_refine_azimuth(poses, bearings, cfg)
        centre = np.mean([p.position[:2] for p in poses], axis=0)
        ref_yaw = poses[len(poses) // 2].yaw
        true_az = wrap_angle(math.atan2(target[1] - centre[1], target[0] - centre[0]) - ref_yaw)
        result = {
            "azimuth": est.azimuth,
            "true_azimuth": true_az,
            "error": abs(wrap_angle(est.azimuth - true_az)),
            "std": est.std,
            "aperture": est.aperture,
        }
        self.metrics.sar.append(result)
        world.emit("sar", node.id, {"target": int(s["target"]), **result})

    def on_fault(self, world: World, ev: Event) -> None:
        node = world.node(ev.node)
        node.failed = True
        self.metrics.faults += 1
        world.emit("fault_injected", node.id, {"kind": node.kind.value})
        self._schedule(world.time, "group_update", data={"periodic": False, "reason": "fault"})

    # --- driver -------------------------------------------------------------

    def run(self) -> MetricsRecord:
        self.start()
        run_events(self.world, self.sc.duration)
        self.metrics.trace_records = len(self.world.trace)
        self.metrics.events = sum(1 for r in self.world.trace if r["kind"] in self.world.handlers)
        return self.metrics


def run(scenario: Scenario, out_dir: str | Path | None = None) -> MetricsRecord:
    """Execute ``scenario`` to its duration; write outputs when ``out_dir`` is given."""
    sim = Simulation(scenario)
    metrics = sim.run()
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.jsonl").write_text(sim.world.trace_jsonl(), encoding="utf-8")
        (out / "metrics.csv").write_text(metrics.to_csv(), encoding="utf-8")
        if sim.map is not None:
            (out / "occupancy.pgm").write_text(sim.map.to_pgm(), encoding="utf-8")
    return metrics


def simulate(scenario: Scenario) -> Simulation:
    """Run and return the whole simulation object (for tests and notebooks)."""
    sim = Simulation(scenario)
    sim.run()
    return sim
