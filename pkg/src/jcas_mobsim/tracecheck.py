"""Offline re-verification of trace-level invariants from ``trace.jsonl``."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

CHECKS = (
    "event_order",
    "raw_data_boundary",
    "metadata_pairing",
    "schedule_validity",
    "leader_membership",
    "cl4_soundness",
    "sync_bounds",
)


@dataclass(frozen=True)
class Violation:
    check: str
    line: int
    message: str


@dataclass
class CheckReport:
    records: int = 0
    examined: dict[str, int] = field(default_factory=lambda: dict.fromkeys(CHECKS, 0))
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def count(self, check: str) -> int:
        return sum(1 for v in self.violations if v.check == check)

    def lines(self) -> list[str]:
        out = []
        for check in CHECKS:
            n = self.count(check)
            status = "PASS" if n == 0 else "FAIL"
            out.append(f"{status} {check}: {self.examined[check]} examined, {n} violations")
        for v in self.violations[:20]:
            out.append(f"  line {v.line}: [{v.check}] {v.message}")
        return out


def read_trace(path: str | Path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "trace.jsonl"
    with path.open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def check_records(records: Iterable[dict]) -> CheckReport:
    rep = CheckReport()
    ex = rep.examined

    def fail(check: str, line: int, message: str) -> None:
        rep.violations.append(Violation(check, line, message))

    last_t = float("-inf")
    slots: dict[int, int] = {}
    period = 1
    edges: set[tuple[int, int]] = set()
    senders: dict[int, set[int]] = {}
    for line, rec in enumerate(records, start=1):
        rep.records += 1
        kind, p = rec["kind"], rec.get("payload") or {}
        ex["event_order"] += 1
        if rec["t"] < last_t:
            fail("event_order", line, f"time {rec['t']} after {last_t}")
        last_t = max(last_t, rec["t"])
        if kind == "group":
            ex["leader_membership"] += 1
            if p["leader"] not in p["members"]:
                fail("leader_membership", line, f"leader {p['leader']} not in {p['members']}")
            if p["level"] == 4:
                ex["cl4_soundness"] += 1
                lacking = [m for m, ok in p["jcas"].items() if not ok]
                if lacking:
                    fail("cl4_soundness", line, f"CL4 group with non-JCAS members {lacking}")
        elif kind == "schedule":
            slots = {int(k): v for k, v in p["slots"].items()}
            period = p["period"]
            edges = {tuple(e) for e in p["edges"]}
            senders = {}
        elif kind == "sync":
            ex["sync_bounds"] += 1
            if abs(p["error"]) > p["bound"]:
                fail("sync_bounds", line, f"node {rec['node']} error {p['error']:.3e} exceeds {p['bound']:.0e}")
        elif kind == "tx_result":
            if p["type"] == "SENSING":
                ex["raw_data_boundary"] += 1
                ex["metadata_pairing"] += 1
                if p.get("level") == 0 and p["src"] != p["dst"]:
                    fail("raw_data_boundary", line, f"level-0 payload {p['src']} -> {p['dst']} ({p['outcome']})")
                if p.get("md_level") is None or p.get("md_level") != p.get("level"):
                    fail("metadata_pairing", line, f"payload level {p.get('level')} with metadata level {p.get('md_level')}")
            if p["outcome"] == "Delivered" and p["link"] == "sidelink":
                ex["schedule_validity"] += 1
                src, abs_slot = p["src"], p["abs_slot"]
                if src in slots and abs_slot % period != slots[src]:
                    fail("schedule_validity", line, f"node {src} sent in slot {abs_slot % period}, owns {slots[src]}")
                same = senders.setdefault(abs_slot, set())
                for other in same:
                    if (min(src, other), max(src, other)) in edges:
                        fail("schedule_validity", line, f"neighbours {src} and {other} both delivered in slot {abs_slot}")
                same.add(src)
    return rep


def check_trace(path: str | Path) -> CheckReport:
    return check_records(read_trace(path))
