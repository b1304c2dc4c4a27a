"""Remote governors: metered N-of-M licensing, withholding, telemetry, registry.

Licensing needs N of the M policy governors to sign; any single policy
governor can withhold. A withheld target gets no new grants, and chips refuse
to install grants they have not already installed, so what is left on a chip
is the last balance it will ever spend.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable

from .attestation import AttestationProof, AttestationResult, verify_attestation
from .canonical import canonical_json, digest, exact_int, exact_number, seed_bytes, substream
from .crypto import KeyDirectory, SignedEnvelope, SigningKey, fresh_nonce, seal
from .fabric import Fabric, NoResponse, UnknownChip
from .ledger import CausalGraph
from .licensing import LicenseGrant, MultiSigPolicy, valid_signers
from .policy import PolicyConfig, check_caps, reconcile, registration_required

DEFAULT_QUANTUM = 10**16


class GovernorError(Exception):
    reason = "governor_error"


class LicenseDenied(GovernorError):
    reason = "denied"


class CapWouldBeExceeded(LicenseDenied):
    def __init__(self, reason: str, detail: str):
        super().__init__(detail)
        self.reason = reason


class InsufficientSignatures(LicenseDenied):
    reason = "insufficient_signatures"


class TargetWithheld(LicenseDenied):
    reason = "withheld"


class DuplicateRegistration(GovernorError):
    reason = "duplicate_registration"


class UnknownTarget(GovernorError, KeyError):
    reason = "unknown_target"


class NotPolicyGovernor(GovernorError):
    reason = "not_policy_governor"


@dataclass
class GovernorNode:
    """One independent signer. ``responsive=False`` models a timeout (abstain)."""

    governor_id: str
    key: SigningKey = field(repr=False)
    responsive: bool = True
    refuses: set[str] = field(default_factory=set)

    def review(self, grant: LicenseGrant, withheld: set[str]) -> bytes | None:
        if not self.responsive:
            return None
        targets = set(grant.chip_ids) | {grant.requester, grant.model_id or ""}
        if targets & (self.refuses | withheld):
            return None
        return self.key.sign(grant.signing_input())


@dataclass(frozen=True)
class RegistryEntry:
    model_id: str
    developer_id: str
    training_compute: int
    max_inference_rate: Fraction | int
    quarter: int
    attestation_proof: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": "RegistryEntry",
            "model_id": self.model_id,
            "developer_id": self.developer_id,
            "training_compute": self.training_compute,
            "max_inference_rate": self.max_inference_rate,
            "quarter": self.quarter,
            "attestation_proof": self.attestation_proof,
        }

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> RegistryEntry:
        missing = [k for k in ("model_id", "developer_id", "training_compute", "max_inference_rate", "quarter") if obj.get(k) is None]
        if missing:
            raise ValueError(f"registry entry missing {missing}")
        return cls(
            model_id=obj["model_id"],
            developer_id=obj["developer_id"],
            training_compute=exact_int(obj["training_compute"], "training_compute"),
            max_inference_rate=exact_number(obj["max_inference_rate"], "max_inference_rate"),
            quarter=exact_int(obj["quarter"], "quarter"),
            attestation_proof=obj.get("attestation_proof"),
        )


@dataclass(frozen=True)
class Receipt:
    registry: str
    sequence: int
    entry_hash: str


class Registry:
    """Append-only registry of training runs, optionally mirrored to a file."""

    def __init__(self, name: str = "national", path: str | Path | None = None):
        self.name = name
        self.path = Path(path) if path is not None else None
        self._entries: list[RegistryEntry] = []

    @property
    def entries(self) -> tuple[RegistryEntry, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, model_id: str) -> bool:
        return any(e.model_id == model_id for e in self._entries)

    def register(self, entry: RegistryEntry) -> Receipt:
        if any(e.model_id == entry.model_id and e.quarter == entry.quarter for e in self._entries):
            raise DuplicateRegistration(f"{entry.model_id} already registered for quarter {entry.quarter}")
        self._entries.append(entry)
        line = canonical_json(entry.to_dict())
        if self.path is not None:
            with open(self.path, "ab") as fh:
                fh.write(line + b"\n")
        return Receipt(self.name, len(self._entries), digest(line).hex())

    def query(self, **filters: Any) -> list[RegistryEntry]:
        return [e for e in self._entries if all(getattr(e, k) == v for k, v in filters.items())]

    def models(self) -> set[str]:
        return {e.model_id for e in self._entries}

    @classmethod
    def load(cls, path: str | Path, name: str = "national") -> Registry:
        reg = cls(name)
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    reg.register(RegistryEntry.from_dict(json.loads(line)))
        reg.path = Path(path)
        return reg


@dataclass(frozen=True)
class TelemetryReport:
    chip_id: str
    period: tuple[int, int]
    executed_flop: int
    peak_rate: Fraction
    cluster_members: tuple[str, ...]
    location_verdicts: tuple[tuple[int, str], ...]
    envelope: SignedEnvelope

    @classmethod
    def from_envelope(cls, env: SignedEnvelope) -> TelemetryReport:
        body = env.body
        return cls(
            chip_id=body["chip_id"],
            period=tuple(body["period"]),
            executed_flop=body["executed_flop"],
            peak_rate=exact_number(body["peak_rate"]),
            cluster_members=tuple(body["cluster_members"]),
            location_verdicts=tuple((t, v) for t, v in body["location_verdicts"]),
            envelope=env,
        )


@dataclass(frozen=True)
class AuditFinding:
    model_id: str
    rule: str
    detail: str


def audit_registration(
    graph: CausalGraph,
    registry: Registry,
    config: PolicyConfig | None = None,
    rates: dict[str, Fraction] | None = None,
) -> list[AuditFinding]:
    """Every ledger model above a reporting threshold must have a registry entry.

    Registered models are also reconciled against the ledger, so an entry whose
    run never reached its declared size shows up as a divergence.
    """
    config = config or PolicyConfig()
    rates = rates or {}
    registered = registry.models()
    findings = []
    for model_id in sorted(set(graph.model_index) | set(rates) | registered):
        training = graph.training_compute(model_id) if model_id in graph.model_index else 0
        rate = rates.get(model_id, 0)
        if not registration_required(training, rate, config) and model_id not in registered:
            continue
        if model_id not in registered:
            findings.append(
                AuditFinding(model_id, "registration_required", f"training={training} FLOP, rate={rate} FLOP/s")
            )
            continue
        declared = max(e.training_compute for e in registry.query(model_id=model_id))
        if not reconcile(declared, training):
            findings.append(
                AuditFinding(model_id, "declaration_divergence", f"declared {declared} vs ledger {training}")
            )
    return findings


class GovernorService:
    """The M governors of one policy plus the shared books they keep."""

    def __init__(
        self,
        fabric: Fabric,
        policy: MultiSigPolicy | None = None,
        config: PolicyConfig | None = None,
        *,
        quantum: int = DEFAULT_QUANTUM,
        seed: int = 0,
        enforce_caps: bool = True,
    ):
        self.fabric = fabric
        self.policy = policy or MultiSigPolicy("policy-default", ("gov-1", "gov-2", "gov-3"), 2)
        self.config = config or PolicyConfig()
        self.quantum = quantum
        self.enforce_caps = enforce_caps
        self.nodes = {
            gid: GovernorNode(gid, fabric.scheme.key_from_seed(seed_bytes(seed, f"governor-key:{gid}")))
            for gid in self.policy.governors
        }
        self.keys = KeyDirectory(fabric.scheme, {gid: n.key.public_bytes for gid, n in self.nodes.items()})
        fabric.trust(self.policy, self.keys.keys)
        self.enrolled: set[str] = set()
        self.committed: dict[str, int] = {}
        self.grants: dict[str, LicenseGrant] = {}
        self.withheld: set[str] = set()
        self.flags: list[dict[str, Any]] = []
        self.registry = Registry("national")
        self._rng = substream(seed, "governor")
        self._grant_seq = itertools.count(1)
        self._permit_seq = itertools.count(1)

    # enrollment and books

    def enroll(self, chip_id: str) -> None:
        self.fabric.chip(chip_id)
        self.enrolled.add(chip_id)

    def record_prior_compute(self, model_id: str, flop: int) -> None:
        """Seed a model's committed compute (e.g. inherited from a base model)."""
        self.committed[model_id] = self.committed.get(model_id, 0) + exact_int(flop)

    def cumulative(self, model_id: str) -> int:
        return self.committed.get(model_id, 0)

    def set_config(self, config: PolicyConfig) -> None:
        """Adopt new caps; they apply from the next grant decision onward."""
        self.config = config

    # licensing

    def request_license(
        self,
        requester: str,
        chip_ids: Iterable[str],
        quota: int,
        window: tuple[int, int],
        *,
        model_id: str | None = None,
        projected_rate: int | Fraction = 0,
        purpose: str = "training",
    ) -> LicenseGrant:
        chip_ids = tuple(sorted(set(chip_ids)))
        quota = exact_int(quota, "quota")
        for cid in chip_ids:
            if cid not in self.fabric.chips or cid not in self.enrolled:
                raise UnknownChip(cid)
        blocked = sorted((set(chip_ids) | {requester, model_id}) & self.withheld)
        if blocked:
            raise TargetWithheld(f"withheld: {', '.join(b for b in blocked if b)}")
        account = model_id or requester
        added = quota if purpose == "training" else 0
        projected = self.cumulative(account) + added
        if self.enforce_caps:
            decision = check_caps(projected, projected_rate, self.config)
            if not decision.allowed:
                raise CapWouldBeExceeded(
                    decision.reason,
                    f"{account}: projected {projected} FLOP / {projected_rate} FLOP/s vs caps",
                )
        grant = LicenseGrant(
            grant_id=f"grant-{next(self._grant_seq):06d}",
            chip_ids=chip_ids,
            quota=quota,
            valid_from_us=window[0],
            valid_to_us=window[1],
            policy_id=self.policy.policy_id,
            requester=requester,
            model_id=model_id,
            purpose=purpose,
        )
        for gid in self.policy.governors:
            if len(grant.signatures) >= self.policy.threshold:
                break
            signature = self.nodes[gid].review(grant, self.withheld)
            if signature is not None:
                grant = grant.with_signature(gid, signature)
        if len(valid_signers(grant, self.policy, self.keys)) < self.policy.threshold:
            raise InsufficientSignatures(
                f"{len(grant.signatures)} of {self.policy.threshold} required signatures collected"
            )
        self.committed[account] = projected
        self.grants[grant.grant_id] = grant
        return grant

    def withhold(self, governor_id: str, target: str) -> bool:
        """Stop licensing ``target`` (a chip, grant, requester or model id).

        Returns False when the target was already withheld.
        """
        if governor_id not in self.policy.governors:
            raise NotPolicyGovernor(governor_id)
        known = (
            target in self.fabric.chips
            or target in self.grants
            or any(target in (g.requester, g.model_id) for g in self.grants.values())
        )
        if not known:
            raise UnknownTarget(target)
        if target in self.withheld:
            return False
        self.withheld.add(target)
        node = self.nodes[governor_id]
        chips = self.chips_of(target)
        for cid in chips:
            env = seal({"type": "Withhold", "chip_id": cid}, governor_id, node.key, fresh_nonce(self._rng))
            self.fabric.apply_withhold(env)
        if target in self.grants:
            env = seal({"type": "Withhold", "grant_id": target}, governor_id, node.key, fresh_nonce(self._rng))
            self.fabric.apply_withhold(env)
        return True

    def chips_of(self, target: str) -> list[str]:
        if target in self.fabric.chips:
            return [target]
        if target in self.grants:
            return []
        return sorted({c for g in self.grants.values() if target in (g.requester, g.model_id) for c in g.chip_ids})

    def issue_link_permit(self, governor_id: str, a: str, b: str) -> SignedEnvelope:
        if governor_id not in self.policy.governors:
            raise NotPolicyGovernor(governor_id)
        body = {"type": "LinkPermit", "permit_id": f"permit-{next(self._permit_seq):06d}", "a": a, "b": b}
        return seal(body, governor_id, self.nodes[governor_id].key, fresh_nonce(self._rng))

    def revoke_link_permit(self, governor_id: str, permit_id: str):
        body = {"type": "PermitRevocation", "permit_id": permit_id}
        env = seal(body, governor_id, self.nodes[governor_id].key, fresh_nonce(self._rng))
        return self.fabric.revoke_permit(env)

    # telemetry, registration, attestation

    def collect_telemetry(self, chip_id: str, period: tuple[int, int]) -> TelemetryReport:
        if chip_id not in self.enrolled:
            self.flags.append({"flag": "no_response", "chip_id": chip_id, "why": "not enrolled"})
            raise NoResponse(f"{chip_id} is not enrolled")
        try:
            env = self.fabric.telemetry(chip_id, *period)
        except NoResponse:
            self.flags.append({"flag": "no_response", "chip_id": chip_id, "why": "unreachable"})
            raise
        if not env.verify(self.fabric.keys) or env.signer != chip_id:
            self.flags.append({"flag": "bad_telemetry", "chip_id": chip_id})
            raise NoResponse(f"{chip_id} telemetry signature invalid")
        return TelemetryReport.from_envelope(env)

    def register_training_run(self, entry: RegistryEntry) -> Receipt:
        return self.registry.register(entry)

    def audit(self, graph: CausalGraph, rates: dict[str, Fraction] | None = None) -> list[AuditFinding]:
        return audit_registration(graph, self.registry, self.config, rates)

    def verify_attestation(
        self,
        proof: AttestationProof,
        expected_codes: Iterable[bytes],
        expected_data: Iterable[bytes],
        claimed_flop: int,
    ) -> AttestationResult:
        return verify_attestation(proof, expected_codes, expected_data, claimed_flop, self.fabric.keys)

    # wire interface

    def handle(self, wire: bytes, now_us: int = 0) -> bytes:
        """Serve one LicenseRequest / Withhold / AttestationSubmit message."""
        try:
            msg = json.loads(wire)
        except json.JSONDecodeError:
            return canonical_json({"type": "Error", "reason": "malformed"})
        kind = msg.get("type")
        try:
            if kind == "LicenseRequest":
                grant = self.request_license(
                    msg["requester"],
                    msg["chip_ids"],
                    exact_int(msg["quota"]),
                    (exact_int(msg.get("valid_from_us", now_us)), exact_int(msg["valid_to_us"])),
                    model_id=msg.get("model_id"),
                    projected_rate=exact_number(msg.get("projected_rate", 0)),
                    purpose=msg.get("purpose", "training"),
                )
                return grant.to_wire()
            if kind == "Withhold":
                changed = self.withhold(msg["governor_id"], msg["target"])
                return canonical_json({"type": "WithholdAck", "target": msg["target"], "changed": changed})
            if kind == "AttestationSubmit":
                proof = AttestationProof.from_dict(msg)
                result = self.verify_attestation(
                    proof,
                    [bytes.fromhex(h) for h in msg.get("expected_codes", [s.code_hash.hex() for s in proof.steps])],
                    [bytes.fromhex(h) for h in msg.get("expected_data", [s.data_hash.hex() for s in proof.steps])],
                    exact_int(msg.get("claimed_flop", proof.total_flop)),
                )
                return canonical_json({"type": "AttestationVerdict", "ok": result.ok, "reason": result.reason.value})
            if kind == "TelemetryPush":
                env = SignedEnvelope.from_dict(msg["envelope"])
                ok = env.verify(self.fabric.keys) and env.signer in self.enrolled
                return canonical_json({"type": "Ack", "for": "TelemetryPush", "ok": ok})
        except (GovernorError, UnknownChip, NoResponse, ValueError, KeyError) as exc:
            reason = getattr(exc, "reason", type(exc).__name__)
            return canonical_json({"type": "Denied", "reason": reason, "detail": str(exc)})
        return canonical_json({"type": "Error", "reason": "unknown_message", "detail": str(kind)})
