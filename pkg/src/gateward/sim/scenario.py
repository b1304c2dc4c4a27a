"""Scenario files: canonical JSON, schema version 1."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from decimal import Decimal
from fractions import Fraction
from pathlib import Path
from typing import Any

import jsonschema

from ..canonical import DEFAULT_HASH, SUPPORTED_HASHES, exact_int, exact_number, loads_exact, to_micros
from ..policy import PolicyConfig

SCHEMA_VERSION = 1
PHASES = ("pause", "national_oversight", "international_oversight", "verification_enforcement")
DAY_S = 86_400
QUARTER_S = 90 * DAY_S


class ScenarioError(Exception):
    pass


class ParseError(ScenarioError):
    pass


class SchemaViolation(ScenarioError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


_num = {"type": ["number", "string"]}
_point = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_ids = {"type": "array", "items": {"type": "string"}}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["schema_version", "name"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "until": _num,
        "hash": {"enum": list(SUPPORTED_HASHES)},
        "signature_scheme": {"enum": ["ed25519", "ecdsa-p256"]},
        "policy": {"type": "object"},
        "governance": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "policy_id": {"type": "string"},
                "governors": {**_ids, "minItems": 1},
                "threshold": {"type": "integer", "minimum": 1},
                "unresponsive": _ids,
                "quantum": _num,
                "speed_limit_scope": {"enum": ["chip", "cluster"]},
            },
        },
        "reporting": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "quarter_seconds": _num,
                "joules_per_flop": _num,
                "currency_per_flop": _num,
            },
        },
        "labs": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string"},
                    "developer": {"type": "string"},
                    "jurisdiction": {"type": "string"},
                    "compliant": {"type": "boolean"},
                    "registers": {"type": "boolean"},
                },
            },
        },
        "fleets": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["prefix", "owner", "count", "capacity"],
                "additionalProperties": False,
                "properties": {
                    "prefix": {"type": "string"},
                    "owner": {"type": "string"},
                    "count": {"type": "integer", "minimum": 1},
                    "capacity": _num,
                    "location": _point,
                    "spacing_km": {"type": "number", "minimum": 0},
                    "mesh": {"type": "boolean"},
                    "permits": {"type": "boolean"},
                    "enrolled": {"type": "boolean"},
                    "processing_allowance": {"type": "number", "minimum": 0},
                },
            },
        },
        "chips": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "owner", "capacity"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string"},
                    "owner": {"type": "string"},
                    "capacity": _num,
                    "location": _point,
                    "allow_list": _ids,
                    "enrolled": {"type": "boolean"},
                    "processing_allowance": {"type": "number", "minimum": 0},
                    "processing_time": {"type": "number", "minimum": 0},
                },
            },
        },
        "links": {"type": "array", "items": {**_ids, "minItems": 2, "maxItems": 2}},
        "stations": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "location"],
                "additionalProperties": False,
                "properties": {"id": {"type": "string"}, "location": _point},
            },
        },
        "zones": {"type": "object", "additionalProperties": {"type": "array", "items": _point, "minItems": 3}},
        "latency": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "extra_delay": {"type": "number", "minimum": 0},
                "jitter": {"type": "number", "minimum": 0},
            },
        },
        "phases": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["phase", "at"],
                "additionalProperties": False,
                "properties": {"phase": {"enum": list(PHASES)}, "at": _num},
            },
        },
        "workloads": {"type": "array", "items": {"type": "object", "required": ["kind", "at"]}},
    },
}

WORKLOAD_SCHEMAS: dict[str, dict[str, Any]] = {
    "training": {
        "required": ["lab", "model", "chips", "declared_plan"],
        "properties": {
            "lab": {"type": "string"},
            "model": {"type": "string"},
            "chips": {"oneOf": [_ids, {"type": "string"}]},
            "declared_plan": _num,
            "actual_flop": _num,
            "license_flop": _num,
            "steps_per_license": {"type": "integer", "minimum": 1},
            "parent_models": _ids,
            "fine_tune": {"type": "boolean"},
            "data_prep_flop": _num,
            "attest": {"type": "boolean"},
            "human_data": {"type": "boolean"},
        },
    },
    "inference": {
        "required": ["lab", "model", "chips", "marginal_flop", "hz", "outputs"],
        "properties": {
            "lab": {"type": "string"},
            "model": {"type": "string"},
            "chips": {"oneOf": [_ids, {"type": "string"}]},
            "marginal_flop": _num,
            "hz": _num,
            "outputs": {"type": "integer", "minimum": 1},
            "declared_rate": _num,
        },
    },
    "geo_check": {
        "required": ["chip", "zone"],
        "properties": {"chip": {"type": "string"}, "zone": {"type": "string"}, "stations": _ids},
    },
    "relocate": {"required": ["chip", "location"], "properties": {"chip": {"type": "string"}, "location": _point}},
    "withhold": {
        "required": ["governor", "target"],
        "properties": {"governor": {"type": "string"}, "target": {"type": "string"}},
    },
    "cap_adjustment": {"properties": {"training_cap": _num, "inference_cap": _num}},
}


@dataclass(frozen=True)
class LabSpec:
    lab_id: str
    developer: str
    jurisdiction: str = "us"
    compliant: bool = True
    registers: bool = True


@dataclass(frozen=True)
class ChipSpec:
    chip_id: str
    owner: str
    capacity: int
    location: tuple[float, float] = (0.0, 0.0)
    allow_list: tuple[str, ...] = ()
    enrolled: bool = True
    processing_allowance: float = 0.0
    processing_time: float | None = None


@dataclass(frozen=True)
class Governance:
    policy_id: str = "gate-policy"
    governors: tuple[str, ...] = ("gov-1", "gov-2", "gov-3")
    threshold: int = 2
    unresponsive: tuple[str, ...] = ()
    quantum: int = 10**16
    speed_limit_scope: str = "cluster"


@dataclass(frozen=True)
class Reporting:
    quarter_seconds: int = QUARTER_S
    joules_per_flop: Decimal = Decimal("1e-12")
    currency_per_flop: Decimal = Decimal("1e-18")


@dataclass(frozen=True)
class Workload:
    kind: str
    at_us: int
    params: dict[str, Any]
    index: int

    def __getitem__(self, key: str) -> Any:
        return self.params[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self.params.get(key, default)


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    hash_name: str
    signature_scheme: str
    policy: PolicyConfig
    governance: Governance
    reporting: Reporting
    labs: tuple[LabSpec, ...]
    chips: tuple[ChipSpec, ...]
    links: tuple[tuple[str, str], ...]
    permitted_links: frozenset[frozenset[str]]
    stations: tuple[tuple[str, tuple[float, float]], ...]
    zones: dict[str, tuple[tuple[float, float], ...]]
    latency: dict[str, float]
    phases: tuple[tuple[str, int], ...]
    workloads: tuple[Workload, ...]
    until_us: int | None = None
    source: bytes = field(default=b"", repr=False)

    def with_seed(self, seed: int) -> Scenario:
        return replace(self, seed=seed)

    def lab(self, lab_id: str) -> LabSpec:
        return next(l for l in self.labs if l.lab_id == lab_id)


def _path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def _validate(instance: Any, schema: dict[str, Any], prefix: tuple = ()) -> None:
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(instance), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise SchemaViolation(_path(prefix + tuple(err.absolute_path)), err.message)


def _number(obj: dict, key: str, path: str, default=None, *, integral: bool = True, positive: bool = True):
    if key not in obj:
        return default
    try:
        value = exact_int(obj[key], key) if integral else exact_number(obj[key], key)
    except (ValueError, ArithmeticError) as exc:
        raise SchemaViolation(f"{path}.{key}", str(exc)) from None
    if positive and value <= 0:
        raise SchemaViolation(f"{path}.{key}", "must be positive")
    return value


def _time(obj: dict, key: str, path: str) -> int:
    try:
        value = to_micros(obj[key])
    except (ValueError, ArithmeticError) as exc:
        raise SchemaViolation(f"{path}.{key}", str(exc)) from None
    if value < 0:
        raise SchemaViolation(f"{path}.{key}", "times are non-negative")
    return value


def parse_scenario(data: bytes | str) -> Scenario:
    raw = data.encode("utf-8") if isinstance(data, str) else data
    try:
        obj = loads_exact(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(str(exc)) from None
    return build_scenario(obj, raw)


def load_scenario(path: str | Path) -> Scenario:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ParseError(str(exc)) from None
    return parse_scenario(raw)


def _chip_selector(value: Any, fleets: dict[str, list[str]], chip_ids: set[str], path: str) -> tuple[str, ...]:
    if isinstance(value, str):
        if value not in fleets:
            raise SchemaViolation(path, f"unknown fleet {value!r}")
        return tuple(fleets[value])
    for cid in value:
        if cid not in chip_ids:
            raise SchemaViolation(path, f"unknown chip {cid!r}")
    return tuple(value)


def build_scenario(obj: Any, source: bytes = b"") -> Scenario:
    _validate(obj, SCHEMA)
    try:
        policy = PolicyConfig.from_dict(obj.get("policy"))
    except (ValueError, TypeError) as exc:
        raise SchemaViolation("$.policy", str(exc)) from None

    g = obj.get("governance", {})
    governance = Governance(
        policy_id=g.get("policy_id", "gate-policy"),
        governors=tuple(g.get("governors", Governance.governors)),
        threshold=g.get("threshold", 2),
        unresponsive=tuple(g.get("unresponsive", ())),
        quantum=_number(g, "quantum", "$.governance", 10**16),
        speed_limit_scope=g.get("speed_limit_scope", "cluster"),
    )
    if governance.threshold > len(governance.governors):
        raise SchemaViolation("$.governance.threshold", "threshold exceeds number of governors")
    if not set(governance.unresponsive) <= set(governance.governors):
        raise SchemaViolation("$.governance.unresponsive", "unknown governor")

    r = obj.get("reporting", {})
    reporting = Reporting(
        quarter_seconds=_number(r, "quarter_seconds", "$.reporting", QUARTER_S),
        joules_per_flop=Decimal(str(r.get("joules_per_flop", "1e-12"))),
        currency_per_flop=Decimal(str(r.get("currency_per_flop", "1e-18"))),
    )

    labs = tuple(
        LabSpec(
            l["id"],
            l.get("developer", l["id"]),
            l.get("jurisdiction", "us"),
            l.get("compliant", True),
            l.get("registers", l.get("compliant", True)),
        )
        for l in obj["labs"]
    ) if "labs" in obj else ()
    lab_ids = {l.lab_id for l in labs}
    if len(lab_ids) != len(labs):
        raise SchemaViolation("$.labs", "duplicate lab id")

    chips: list[ChipSpec] = []
    links: list[tuple[str, str]] = []
    permitted: set[frozenset[str]] = set()
    fleets: dict[str, list[str]] = {}
    for i, f in enumerate(obj.get("fleets", ())):
        path = f"$.fleets[{i}]"
        if f["owner"] not in lab_ids:
            raise SchemaViolation(f"{path}.owner", f"unknown lab {f['owner']!r}")
        ids = [f"{f['prefix']}-{k:02d}" for k in range(1, f["count"] + 1)]
        fleets[f["prefix"]] = ids
        mesh = f.get("mesh", True)
        x0, y0 = f.get("location", (0.0, 0.0))
        spacing = f.get("spacing_km", 0.0)
        capacity = _number(f, "capacity", path)
        for k, cid in enumerate(ids):
            chips.append(
                ChipSpec(
                    cid,
                    f["owner"],
                    capacity,
                    (float(x0) + k * float(spacing), float(y0)),
                    tuple(ids) if mesh else (),
                    f.get("enrolled", True),
                    float(f.get("processing_allowance", 0.0)),
                )
            )
        if mesh:
            for a in range(len(ids)):
                for b in range(a + 1, len(ids)):
                    links.append((ids[a], ids[b]))
                    if f.get("permits", False):
                        permitted.add(frozenset((ids[a], ids[b])))
    for i, c in enumerate(obj.get("chips", ())):
        path = f"$.chips[{i}]"
        if c["owner"] not in lab_ids:
            raise SchemaViolation(f"{path}.owner", f"unknown lab {c['owner']!r}")
        chips.append(
            ChipSpec(
                c["id"],
                c["owner"],
                _number(c, "capacity", path),
                tuple(float(v) for v in c.get("location", (0.0, 0.0))),
                tuple(c.get("allow_list", ())),
                c.get("enrolled", True),
                float(c.get("processing_allowance", 0.0)),
                float(c["processing_time"]) if "processing_time" in c else None,
            )
        )
    chip_ids = [c.chip_id for c in chips]
    if len(set(chip_ids)) != len(chip_ids):
        raise SchemaViolation("$.chips", "duplicate chip id")
    for i, (a, b) in enumerate(obj.get("links", ())):
        for cid in (a, b):
            if cid not in chip_ids:
                raise SchemaViolation(f"$.links[{i}]", f"unknown chip {cid!r}")
        links.append((a, b))

    stations = tuple((s["id"], (float(s["location"][0]), float(s["location"][1]))) for s in obj.get("stations", ()))
    zones = {k: tuple((float(x), float(y)) for x, y in v) for k, v in obj.get("zones", {}).items()}
    lat = obj.get("latency", {})
    latency = {"extra_delay": float(lat.get("extra_delay", 0.0)), "jitter": float(lat.get("jitter", 0.0))}

    phases = []
    for i, p in enumerate(obj.get("phases", ())):
        phases.append((p["phase"], _time(p, "at", f"$.phases[{i}]")))
    for i, (name, t) in enumerate(phases):
        if name != PHASES[i]:
            raise SchemaViolation(f"$.phases[{i}].phase", f"expected {PHASES[i]!r}, got {name!r} (phases run in order)")
        if i and t <= phases[i - 1][1]:
            raise SchemaViolation(f"$.phases[{i}].at", "phase times must strictly increase")

    known_chips = set(chip_ids)
    station_ids = {s for s, _ in stations}
    workloads = []
    for i, w in enumerate(obj.get("workloads", ())):
        path = f"$.workloads[{i}]"
        kind = w.get("kind")
        if kind not in WORKLOAD_SCHEMAS:
            raise SchemaViolation(f"{path}.kind", f"unknown workload kind {kind!r}")
        wschema = {"type": "object", "additionalProperties": False, **WORKLOAD_SCHEMAS[kind]}
        wschema["properties"] = {"kind": {}, "at": _num, **wschema.get("properties", {})}
        _validate(w, wschema, ("workloads", i))
        params: dict[str, Any] = {k: v for k, v in w.items() if k not in ("kind", "at")}
        if "lab" in params and params["lab"] not in lab_ids:
            raise SchemaViolation(f"{path}.lab", f"unknown lab {params['lab']!r}")
        if "chips" in params:
            params["chips"] = _chip_selector(params["chips"], fleets, known_chips, f"{path}.chips")
        if "chip" in params and params["chip"] not in known_chips:
            raise SchemaViolation(f"{path}.chip", f"unknown chip {params['chip']!r}")
        if kind == "training":
            params["declared_plan"] = _number(w, "declared_plan", path)
            params["actual_flop"] = _number(w, "actual_flop", path, params["declared_plan"])
            params["license_flop"] = _number(w, "license_flop", path, governance.quantum)
            params["data_prep_flop"] = _number(w, "data_prep_flop", path, 0, positive=False)
        elif kind == "inference":
            params["marginal_flop"] = _number(w, "marginal_flop", path)
            params["hz"] = _number(w, "hz", path, integral=False)
            params["declared_rate"] = _number(w, "declared_rate", path, 0, integral=False, positive=False)
        elif kind == "geo_check":
            if params["zone"] not in zones:
                raise SchemaViolation(f"{path}.zone", f"unknown zone {params['zone']!r}")
            for s in params.get("stations", ()):
                if s not in station_ids:
                    raise SchemaViolation(f"{path}.stations", f"unknown station {s!r}")
        elif kind == "withhold":
            if params["governor"] not in governance.governors:
                raise SchemaViolation(f"{path}.governor", f"unknown governor {params['governor']!r}")
        elif kind == "cap_adjustment":
            for key in ("training_cap", "inference_cap"):
                if key in params:
                    params[key] = _number(w, key, path)
        workloads.append(Workload(kind, _time(w, "at", path), params, i))

    until = _time(obj, "until", "$") if "until" in obj else None
    return Scenario(
        name=obj["name"],
        seed=obj.get("seed", 0),
        hash_name=obj.get("hash", DEFAULT_HASH),
        signature_scheme=obj.get("signature_scheme", "ed25519"),
        policy=policy,
        governance=governance,
        reporting=reporting,
        labs=labs,
        chips=tuple(chips),
        links=tuple(links),
        permitted_links=frozenset(permitted),
        stations=stations,
        zones=zones,
        latency=latency,
        phases=tuple(phases),
        workloads=tuple(workloads),
        until_us=until,
        source=source,
    )


def shipped_scenarios() -> dict[str, Path]:
    root = Path(__file__).with_name("scenarios")
    return {p.stem: p for p in sorted(root.glob("*.json"))}
