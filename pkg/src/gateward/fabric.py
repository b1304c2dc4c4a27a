"""Simulated accelerator fleet: keyed chips, allow-listed links, licensed execution.

Every chip holds a private signing key that never leaves the :class:`Chip`
object. Links are realized only when both endpoints list each other, and a
link that would grow a cluster past the cluster cap needs a governor-signed
permit on every link of the resulting cluster.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable

from .canonical import MICROS, canonical_json, exact_int, seed_bytes, substream
from .crypto import Ed25519Scheme, KeyDirectory, SignatureScheme, SignedEnvelope, SigningKey, fresh_nonce, seal
from .ledger import CausalGraph, ComputeNode
from .licensing import LicenseGrant, LicenseInvalid, MultiSigPolicy, validate_grant

SPEED_LIMIT_SCOPES = ("chip", "cluster")


class FabricError(Exception):
    reason = "fabric_error"


class InvalidCapacity(FabricError, ValueError):
    reason = "invalid_capacity"


class UnknownChip(FabricError, KeyError):
    reason = "unknown_chip"


class NotAllowListed(FabricError):
    reason = "not_allow_listed"


class ClusterCapExceeded(FabricError):
    reason = "cluster_cap"


class PermitInvalid(FabricError):
    reason = "permit_invalid"


class LicenseExhausted(FabricError):
    reason = "license_exhausted"


class SpeedLimitExceeded(FabricError):
    reason = "speed_limit"


class NoResponse(FabricError):
    reason = "no_response"


@dataclass(frozen=True)
class ExecutionRecord:
    chip_id: str
    grant_id: str
    flop: int
    start_us: int
    end_us: int
    node_id: str | None = None
    inference: bool = True

    @property
    def rate(self) -> Fraction:
        return Fraction(self.flop * MICROS, self.end_us - self.start_us)


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    permit_id: str | None = None


@dataclass(frozen=True)
class Cluster:
    member_chips: frozenset[str]
    aggregate_rate: int


@dataclass(eq=False)
class Chip:
    chip_id: str
    capacity: int
    location: tuple[float, float]
    allow_list: frozenset[str]
    processing_allowance: float = 0.0
    processing_time: float = 0.0
    speed_limit: int | None = None
    reachable: bool = True
    _key: SigningKey | None = field(default=None, repr=False)
    grant_balances: dict[str, int] = field(default_factory=dict)
    granted_total: int = 0
    executed_total: int = 0
    withheld: bool = False
    halted: bool = False
    records: list[ExecutionRecord] = field(default_factory=list, repr=False)
    _grants: dict[str, LicenseGrant] = field(default_factory=dict, repr=False)
    _active: list[ExecutionRecord] = field(default_factory=list, repr=False)

    @property
    def public_key(self) -> bytes:
        return self._key.public_bytes

    @property
    def license_balance(self) -> int:
        return sum(self.grant_balances.values())

    def usable_balance(self, now_us: int) -> int:
        return sum(b for gid, b in self.grant_balances.items() if _in_window(self._grants[gid], now_us))

    def permits_link(self, peer: str) -> bool:
        return peer in self.allow_list

    def sign(self, body: dict[str, Any], nonce: bytes) -> SignedEnvelope:
        return seal(body, self.chip_id, self._key, nonce)

    def answer_challenge(self, challenge: SignedEnvelope, nonce: bytes) -> SignedEnvelope:
        body = challenge.body
        return self.sign(
            {
                "type": "ChallengeResponse",
                "chip_id": self.chip_id,
                "station_id": challenge.signer,
                "challenge_nonce": challenge.nonce.hex(),
                "challenge_id": body.get("challenge_id"),
            },
            nonce,
        )


def _in_window(grant: LicenseGrant, now_us: int) -> bool:
    return grant.valid_from_us <= now_us < grant.valid_to_us


class Fabric:
    """The chip population plus its realized interconnect.

    ``cluster_cap`` bounds the aggregate FLOP/s of any connected component
    formed without governor permits. ``speed_limit`` is the governor-set
    FLOP/s limit, enforced per chip or across a chip's whole cluster
    according to ``speed_limit_scope``.
    """

    def __init__(
        self,
        scheme: SignatureScheme | None = None,
        *,
        cluster_cap: int | None = None,
        speed_limit: int | None = None,
        speed_limit_scope: str = "cluster",
        ledger: CausalGraph | None = None,
        seed: int = 0,
    ):
        if speed_limit_scope not in SPEED_LIMIT_SCOPES:
            raise ValueError(f"speed_limit_scope must be one of {SPEED_LIMIT_SCOPES}")
        self.scheme = scheme or Ed25519Scheme()
        self.keys = KeyDirectory(self.scheme)
        self.cluster_cap = cluster_cap
        self.speed_limit = speed_limit
        self.speed_limit_scope = speed_limit_scope
        self.ledger = ledger
        self.seed = seed
        self.chips: dict[str, Chip] = {}
        self.links: dict[frozenset[str], Link] = {}
        self.adjacency: dict[str, set[str]] = {}
        self.permits: dict[str, SignedEnvelope] = {}
        self.revoked_permits: set[str] = set()
        self.withheld_grants: set[str] = set()
        self.refusals: list[dict[str, Any]] = []
        self.location_log: dict[str, list[tuple[int, str]]] = {}
        self.policy: MultiSigPolicy | None = None
        self.operators: set[str] = set()
        self._rng = substream(seed, "fabric")
        self._seq = itertools.count(1)

    # provisioning and trust

    def provision_chip(
        self,
        capacity: int,
        location: tuple[float, float] = (0.0, 0.0),
        allow_list: Iterable[str] = (),
        *,
        chip_id: str | None = None,
        processing_allowance: float = 0.0,
        processing_time: float | None = None,
        speed_limit: int | None = None,
    ) -> Chip:
        capacity = exact_int(capacity, "capacity")
        if capacity <= 0:
            raise InvalidCapacity(f"capacity must be positive, got {capacity}")
        if chip_id is None:
            chip_id = f"chip-{len(self.chips) + 1:05d}"
        if chip_id in self.chips:
            raise ValueError(f"duplicate chip id {chip_id!r}")
        key = self.scheme.key_from_seed(seed_bytes(self.seed, f"chip-key:{chip_id}"))
        chip = Chip(
            chip_id=chip_id,
            capacity=capacity,
            location=(float(location[0]), float(location[1])),
            allow_list=frozenset(allow_list),
            processing_allowance=processing_allowance,
            processing_time=processing_allowance if processing_time is None else processing_time,
            speed_limit=speed_limit,
            _key=key,
        )
        self.chips[chip_id] = chip
        self.adjacency[chip_id] = set()
        self.keys.add(chip_id, key.public_bytes)
        return chip

    def trust(self, policy: MultiSigPolicy, governor_keys: dict[str, bytes]) -> None:
        """Install the governor policy and keys that chips accept grants under."""
        for gid in policy.governors:
            self.keys.add(gid, governor_keys[gid])
        self.policy = policy

    def register_operator(self, operator_id: str, public_key: bytes) -> None:
        self.keys.add(operator_id, public_key)
        self.operators.add(operator_id)

    def chip(self, chip_id: str) -> Chip:
        try:
            return self.chips[chip_id]
        except KeyError:
            raise UnknownChip(chip_id) from None

    def _nonce(self) -> bytes:
        return fresh_nonce(self._rng)

    # topology

    def component(self, chip_id: str) -> set[str]:
        self.chip(chip_id)
        seen = {chip_id}
        queue = deque([chip_id])
        while queue:
            for peer in self.adjacency[queue.popleft()]:
                if peer not in seen:
                    seen.add(peer)
                    queue.append(peer)
        return seen

    def cluster_of(self, chip_id: str) -> Cluster:
        members = self.component(chip_id)
        return Cluster(frozenset(members), sum(self.chips[c].capacity for c in members))

    def cluster_rate(self, chip_id: str) -> int:
        return self.cluster_of(chip_id).aggregate_rate

    def clusters(self) -> list[Cluster]:
        seen: set[str] = set()
        out = []
        for cid in sorted(self.chips):
            if cid not in seen:
                cluster = self.cluster_of(cid)
                seen |= cluster.member_chips
                out.append(cluster)
        return out

    def links_within(self, members: set[str]) -> list[Link]:
        return [link for key, link in self.links.items() if key <= members]

    def _refuse(self, exc: FabricError, **info) -> FabricError:
        self.refusals.append({"reason": exc.reason, "detail": str(exc), **info})
        return exc

    def _check_permit(self, permit: SignedEnvelope, a: str, b: str) -> str:
        if self.policy is None or permit.signer not in self.policy.governors:
            raise PermitInvalid("permit not signed by a trusted governor")
        if not permit.verify(self.keys):
            raise PermitInvalid("permit signature does not verify")
        body = permit.body
        if body.get("type") != "LinkPermit" or {body.get("a"), body.get("b")} != {a, b}:
            raise PermitInvalid("permit does not cover this pair")
        if body["permit_id"] in self.revoked_permits:
            raise PermitInvalid(f"permit {body['permit_id']} revoked")
        return body["permit_id"]

    def connect(self, a: str, b: str, permit: SignedEnvelope | None = None) -> Link | None:
        """Realize a link between two chips, or raise the refusal (also logged)."""
        chip_a, chip_b = self.chip(a), self.chip(b)
        if a == b:
            return None
        key = frozenset((a, b))
        if key in self.links:
            return self.links[key]
        if not (chip_a.permits_link(b) and chip_b.permits_link(a)):
            side = a if not chip_a.permits_link(b) else b
            raise self._refuse(NotAllowListed(f"{side} does not allow-list its peer"), a=a, b=b)
        permit_id = None
        if permit is not None:
            try:
                permit_id = self._check_permit(permit, a, b)
            except PermitInvalid as exc:
                raise self._refuse(exc, a=a, b=b) from None
        comp = self.component(a) | self.component(b)
        merged = sum(self.chips[c].capacity for c in comp)
        if self.cluster_cap is not None and merged > self.cluster_cap:
            unpermitted = [l for l in self.links_within(comp) if l.permit_id is None]
            if permit_id is None or unpermitted:
                raise self._refuse(
                    ClusterCapExceeded(f"cluster would reach {merged} FLOP/s > cap {self.cluster_cap}"),
                    a=a,
                    b=b,
                )
        link = Link(*sorted((a, b)), permit_id=permit_id)
        self.links[key] = link
        self.adjacency[a].add(b)
        self.adjacency[b].add(a)
        return link

    def disconnect(self, a: str, b: str) -> None:
        key = frozenset((a, b))
        if self.links.pop(key, None) is not None:
            self.adjacency[a].discard(b)
            self.adjacency[b].discard(a)

    def revoke_permit(self, revocation: SignedEnvelope) -> list[Link]:
        body = revocation.body
        if self.policy is None or revocation.signer not in self.policy.governors or not revocation.verify(self.keys):
            raise PermitInvalid("revocation not signed by a trusted governor")
        if body.get("type") != "PermitRevocation":
            raise PermitInvalid("not a revocation")
        pid = body["permit_id"]
        self.revoked_permits.add(pid)
        dropped = [l for l in self.links.values() if l.permit_id == pid]
        for link in dropped:
            self.disconnect(link.a, link.b)
        return dropped

    # licensing

    def apply_withhold(self, envelope: SignedEnvelope) -> bool:
        """Process a governor Withhold; returns False if it changed nothing."""
        if self.policy is None or envelope.signer not in self.policy.governors or not envelope.verify(self.keys):
            raise LicenseInvalid("withhold_unverified", envelope.signer)
        body = envelope.body
        if body.get("type") != "Withhold":
            raise LicenseInvalid("not_withhold")
        if "chip_id" in body:
            chip = self.chip(body["chip_id"])
            changed = not chip.withheld
            chip.withheld = True
            return changed
        gid = body["grant_id"]
        changed = gid not in self.withheld_grants
        self.withheld_grants.add(gid)
        return changed

    def install_grant(self, chip_id: str, grant: LicenseGrant, now_us: int) -> int:
        """Validate a grant on a chip and credit its allotment; returns FLOP credited."""
        chip = self.chip(chip_id)
        if grant.grant_id in chip._grants:
            return 0
        if self.policy is None:
            raise LicenseInvalid("no_trusted_policy")
        if chip.withheld or grant.grant_id in self.withheld_grants:
            raise LicenseInvalid("withheld", chip_id)
        validate_grant(grant, self.policy, self.keys, now_us, chip_id)
        allot = grant.allotment(chip_id)
        chip._grants[grant.grant_id] = grant
        chip.grant_balances[grant.grant_id] = allot
        chip.granted_total += allot
        chip.halted = False
        return allot

    def _cluster_load(self, chip_id: str, start_us: int, end_us: int) -> Fraction:
        load = Fraction(0)
        for member in self.component(chip_id):
            chip = self.chips[member]
            chip._active = [r for r in chip._active if r.end_us > start_us]
            load += sum((r.rate for r in chip._active if r.inference and r.start_us < end_us), Fraction(0))
        return load

    def execute(
        self,
        chip_id: str,
        workload_flop: int,
        grant: LicenseGrant | None = None,
        *,
        now_us: int,
        window_us: int | None = None,
        node: dict[str, Any] | None = None,
        inference: bool | None = None,
    ) -> ExecutionRecord:
        """Run a metered workload on one chip.

        The workload starts at ``now_us`` and occupies ``window_us`` (default:
        the chip's full-speed time). ``node``, when given, is written to the
        fabric's ledger as the ComputeNode for this execution.

        The speed limit binds inference only. Whether a workload is inference
        follows the grant's purpose unless ``inference`` says otherwise;
        ungranted workloads count as inference.
        """
        if inference is None:
            inference = grant is None or grant.purpose == "inference"
        chip = self.chip(chip_id)
        workload_flop = exact_int(workload_flop, "workload_flop")
        if workload_flop <= 0:
            raise ValueError("workload must be positive")
        if grant is not None:
            if grant.grant_id in chip._grants:
                if not _in_window(grant, now_us):
                    raise LicenseInvalid("outside_window", f"t={now_us}us")
            else:
                self.install_grant(chip_id, grant, now_us)
        min_window = math.ceil(workload_flop * MICROS / chip.capacity)
        if window_us is None:
            window_us = min_window
        elif window_us < min_window:
            raise ValueError(f"{workload_flop} FLOP cannot finish on {chip_id} in {window_us}us")
        rate = Fraction(workload_flop * MICROS, window_us)
        end_us = now_us + window_us
        if not inference:
            pass
        elif self.speed_limit_scope == "chip":
            limit = chip.speed_limit if chip.speed_limit is not None else self.speed_limit
            if limit is not None and rate > limit:
                raise self._refuse(SpeedLimitExceeded(f"{chip_id}: {rate} FLOP/s > {limit}"), chip=chip_id)
        elif self.speed_limit is not None:
            load = self._cluster_load(chip_id, now_us, end_us) + rate
            if load > self.speed_limit:
                raise self._refuse(
                    SpeedLimitExceeded(f"cluster of {chip_id}: {load} FLOP/s > {self.speed_limit}"),
                    chip=chip_id,
                )
        if grant is not None:
            sources = [grant.grant_id]
        else:
            sources = [g for g in chip.grant_balances if _in_window(chip._grants[g], now_us)]
        available = sum(chip.grant_balances[g] for g in sources)
        if available < workload_flop:
            if chip.usable_balance(now_us) == 0:
                chip.halted = True
            raise self._refuse(
                LicenseExhausted(f"{chip_id}: balance {available} < workload {workload_flop}"), chip=chip_id
            )
        remaining = workload_flop
        charged = sources[0]
        for gid in sources:
            take = min(remaining, chip.grant_balances[gid])
            chip.grant_balances[gid] -= take
            remaining -= take
            if take:
                charged = gid
            if remaining == 0:
                break
        chip.executed_total += workload_flop
        node_id = None
        if node is not None and self.ledger is not None:
            node_id = node.get("node_id") or f"{chip_id}/x{next(self._seq)}"
            self.ledger.add_node(
                ComputeNode(
                    node_id=node_id,
                    kind=node.get("kind", "training"),
                    flop=workload_flop,
                    wall_time=end_us / MICROS,
                    parents=tuple(node.get("parents", ())),
                    human_cutoff=node.get("human_cutoff", False),
                    model_id=node.get("model_id"),
                    output_id=node.get("output_id"),
                )
            )
        record = ExecutionRecord(chip_id, charged, workload_flop, now_us, end_us, node_id, inference)
        chip.records.append(record)
        chip._active.append(record)
        return record

    # telemetry

    def record_location_verdict(self, chip_id: str, t_us: int, verdict: str) -> None:
        self.chip(chip_id)
        self.location_log.setdefault(chip_id, []).append((t_us, verdict))

    def telemetry(self, chip_id: str, start_us: int, end_us: int) -> SignedEnvelope:
        """The chip's signed TelemetryPush for [start_us, end_us)."""
        chip = self.chip(chip_id)
        if not chip.reachable:
            raise NoResponse(chip_id)
        records = [r for r in chip.records if start_us <= r.start_us < end_us]
        peak = max((r.rate for r in records), default=Fraction(0))
        verdicts = [[t, v] for t, v in self.location_log.get(chip_id, []) if start_us <= t < end_us]
        body = {
            "type": "TelemetryPush",
            "chip_id": chip_id,
            "period": [start_us, end_us],
            "executed_flop": sum(r.flop for r in records),
            "workloads": len(records),
            "peak_rate": peak,
            "cluster_members": sorted(self.component(chip_id)),
            "location_verdicts": verdicts,
            "license_balance": chip.license_balance,
        }
        return chip.sign(body, self._nonce())

    # wire interface

    def handle(self, wire: bytes, now_us: int = 0) -> bytes:
        """Process one wire envelope and return the signed reply bytes."""
        env = SignedEnvelope.from_wire(wire)
        if not env.verify(self.keys):
            return self._reply_error("bad_signature", env.signer)
        body = env.body
        kind = body.get("type")
        try:
            if kind == "LinkPermit":
                self._check_permit(env, body.get("a"), body.get("b"))
                self.permits[body["permit_id"]] = env
                return self._reply({"type": "Ack", "for": "LinkPermit", "permit_id": body["permit_id"]})
            if kind == "LinkRequest":
                a, b = body["a"], body["b"]
                if env.signer not in (a, b) and env.signer not in self.operators:
                    return self._reply_error("unauthorized", env.signer)
                permit = self.permits.get(body.get("permit_id")) if body.get("permit_id") else None
                link = self.connect(a, b, permit)
                return self._reply(
                    {
                        "type": "LinkResult",
                        "ok": True,
                        "a": a,
                        "b": b,
                        "cluster_rate": self.cluster_rate(a),
                        "linked": link is not None,
                    },
                    signer=b,
                )
            if kind == "ExecuteRequest":
                if env.signer not in self.operators:
                    return self._reply_error("unauthorized", env.signer)
                grant = LicenseGrant.from_dict(body["grant"]) if body.get("grant") else None
                record = self.execute(
                    body["chip_id"],
                    exact_int(body["workload_flop"]),
                    grant,
                    now_us=exact_int(body.get("now_us", now_us)),
                    window_us=body.get("window_us"),
                )
                chip = self.chips[record.chip_id]
                return self._reply(
                    {
                        "type": "ExecuteResult",
                        "ok": True,
                        "chip_id": record.chip_id,
                        "grant_id": record.grant_id,
                        "flop": record.flop,
                        "start_us": record.start_us,
                        "end_us": record.end_us,
                        "license_balance": chip.license_balance,
                    },
                    signer=record.chip_id,
                )
            if kind == "TelemetryRequest":
                return self.telemetry(body["chip_id"], body["period"][0], body["period"][1]).to_wire()
            if kind == "Withhold":
                changed = self.apply_withhold(env)
                return self._reply({"type": "Ack", "for": "Withhold", "changed": changed})
        except (FabricError, LicenseInvalid, KeyError, ValueError) as exc:
            reason = getattr(exc, "reason", type(exc).__name__)
            return self._reply_error(reason, str(exc))
        return self._reply_error("unknown_message", str(kind))

    def _reply(self, body: dict[str, Any], signer: str | None = None) -> bytes:
        if signer is not None and signer in self.chips:
            return self.chips[signer].sign(body, self._nonce()).to_wire()
        return canonical_json(body)

    def _reply_error(self, reason: str, detail: str) -> bytes:
        return canonical_json({"type": "Error", "ok": False, "reason": reason, "detail": detail})


def parse_reply(data: bytes) -> dict[str, Any]:
    obj = json.loads(data)
    if set(obj) == {"nonce", "payload", "signature", "signer"}:
        return json.loads(obj["payload"])
    return obj
