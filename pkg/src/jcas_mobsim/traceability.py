"""Requirement traceability: maps each of R1-R26 to covering tests and presets.

Tests claim requirements with ``@pytest.mark.req("R7", ...)`` (or a module
level ``pytestmark``); presets list them under ``requirements``.  The scan is
static (AST only), so no test code is imported.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from pathlib import Path

from .scenario import PRESETS, load_preset

REQUIREMENTS: dict[str, str] = {
    "R1": "sync precision per cooperation level",
    "R2": "balance between own and shared node data",
    "R3": "redundant sensing that survives node loss",
    "R4": "edge processing on the producer or a nearby node",
    "R5": "optional cellular link",
    "R6": "6 GHz antenna with lateral coverage",
    "R7": "interference mitigation between sensing nodes",
    "R8": "tunable carrier and bandwidth for coexistence",
    "R9": "share processed data only, never raw samples",
    "R10": "sensing integrated into the communication platform",
    "R11": "sensor data tagged with source meta-data",
    "R12": "bandwidth for exchanging point clouds",
    "R13": "sharing results with a server or neighbours",
    "R14": "fault-tolerant mono-static sensing",
    "R15": "passive detection of unknown emitters",
    "R16": "synthetic-aperture angle refinement",
    "R17": "fusion of physical and virtual sensors",
    "R18": "distributed fusion among cooperating nodes",
    "R19": "classification of detected emitters",
    "R20": "object and emitter detection with classification",
    "R21": "emitter localisation",
    "R22": "mapping from environment sensing",
    "R23": "on-board map updates",
    "R24": "integrity and authenticity of messages",
    "R25": "privacy-preserving handling of personal data",
    "R26": "use-case-aware security and key management",
}

# Parts of a requirement the simulator deliberately does not model.
SCOPE_NOTES: dict[str, str] = {
    "R3": "functional-safety certification is outside a simulator; only the redundancy behaviour is exercised",
    "R6": "the antenna pattern is reduced to an azimuth field-of-view knob",
    "R24": "confidentiality (encryption) is not modelled; tags cover integrity and authenticity",
    "R25": "legal compliance cannot be shown by code; consent and minimisation under default-deny are the mechanisms",
    "R26": "no real PKI or certificate lifecycle; a key-id registry stands in",
}


@dataclass
class TraceabilityReport:
    tests: dict[str, list[str]] = field(default_factory=dict)
    presets: dict[str, list[str]] = field(default_factory=dict)

    def covered(self, req: str) -> bool:
        return bool(self.tests.get(req) or self.presets.get(req))

    @property
    def missing(self) -> list[str]:
        return [r for r in REQUIREMENTS if not self.covered(r)]

    @property
    def ok(self) -> bool:
        return not self.missing

    def lines(self) -> list[str]:
        out = []
        for req, title in REQUIREMENTS.items():
            tests = self.tests.get(req, [])
            presets = self.presets.get(req, [])
            status = "ok" if self.covered(req) else "MISSING"
            out.append(f"{req:<4} {status:<7} {title}")
            out.append(f"     tests ({len(tests)}): {', '.join(tests[:6])}{' ...' if len(tests) > 6 else ''}")
            out.append(f"     presets: {', '.join(presets) or '-'}")
            if req in SCOPE_NOTES:
                out.append(f"     scope: {SCOPE_NOTES[req]}")
        return out


def _req_ids(decorator: ast.expr) -> list[str]:
    # matches pytest.mark.req("R1", "R2")
    if not isinstance(decorator, ast.Call):
        return []
    f = decorator.func
    if not (isinstance(f, ast.Attribute) and f.attr == "req"):
        return []
    return [a.value for a in decorator.args if isinstance(a, ast.Constant) and isinstance(a.value, str)]


def _marks(node: ast.expr) -> list[str]:
    if isinstance(node, (ast.List, ast.Tuple)):
        return [r for e in node.elts for r in _req_ids(e)]
    return _req_ids(node)


def scan_tests(tests_dir: str | Path) -> dict[str, list[str]]:
    found: dict[str, list[str]] = {}
    root = Path(tests_dir)
    for path in sorted(root.rglob("test_*.py")):
        tree = ast.parse(path.read_text(encoding="utf-8"), filename=str(path))
        module_reqs: list[str] = []
        for stmt in tree.body:
            if isinstance(stmt, ast.Assign) and any(isinstance(t, ast.Name) and t.id == "pytestmark" for t in stmt.targets):
                module_reqs += _marks(stmt.value)
        rel = path.relative_to(root.parent).as_posix()
        for node in ast.walk(tree):
            if isinstance(node, (ast.FunctionDef, ast.ClassDef)) and (node.name.startswith("test") or node.name.startswith("Test")):
                reqs = [r for d in node.decorator_list for r in _req_ids(d)]
                for r in dict.fromkeys(reqs + (module_reqs if isinstance(node, ast.FunctionDef) else [])):
                    found.setdefault(r, []).append(f"{rel}::{node.name}")
    return found


def scan_presets() -> dict[str, list[str]]:
    found: dict[str, list[str]] = {}
    for name in PRESETS:
        for r in load_preset(name).requirements:
            found.setdefault(r, []).append(name)
    return found


def build_report(tests_dir: str | Path = "tests") -> TraceabilityReport:
    tests = scan_tests(tests_dir) if Path(tests_dir).is_dir() else {}
    return TraceabilityReport(tests=tests, presets=scan_presets())
