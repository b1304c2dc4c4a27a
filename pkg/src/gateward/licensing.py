"""License grants and the N-of-M signing policy that validates them."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any

from .canonical import canonical_json, exact_int, length_prefixed
from .crypto import KeyDirectory

GRANT_DOMAIN = b"gateward/license-grant/v1"


class LicenseInvalid(Exception):
    """A grant failed validation on a chip; ``reason`` is a short code."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass(frozen=True)
class MultiSigPolicy:
    policy_id: str
    governors: tuple[str, ...]
    threshold: int

    def __post_init__(self):
        object.__setattr__(self, "governors", tuple(self.governors))
        if len(set(self.governors)) != len(self.governors):
            raise ValueError("governor ids must be distinct")
        if not 1 <= self.threshold <= len(self.governors):
            raise ValueError(f"need 1 <= N <= M, got N={self.threshold}, M={len(self.governors)}")

    @property
    def size(self) -> int:
        return len(self.governors)


@dataclass(frozen=True)
class LicenseGrant:
    grant_id: str
    chip_ids: tuple[str, ...]
    quota: int
    valid_from_us: int
    valid_to_us: int
    policy_id: str
    requester: str
    model_id: str | None = None
    purpose: str = "training"
    signatures: tuple[tuple[str, bytes], ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "chip_ids", tuple(sorted(set(self.chip_ids))))
        object.__setattr__(self, "signatures", tuple((g, bytes(s)) for g, s in self.signatures))
        if self.quota <= 0:
            raise ValueError("quota must be positive")
        if not self.chip_ids:
            raise ValueError("grant must cover at least one chip")
        if self.valid_to_us <= self.valid_from_us:
            raise ValueError("empty validity window")

    def unsigned_body(self) -> dict[str, Any]:
        return {
            "type": "LicenseGrant",
            "grant_id": self.grant_id,
            "chip_ids": list(self.chip_ids),
            "quota": self.quota,
            "valid_from_us": self.valid_from_us,
            "valid_to_us": self.valid_to_us,
            "policy_id": self.policy_id,
            "requester": self.requester,
            "model_id": self.model_id,
            "purpose": self.purpose,
        }

    def payload_bytes(self) -> bytes:
        return canonical_json(self.unsigned_body())

    def signing_input(self) -> bytes:
        return length_prefixed(GRANT_DOMAIN, self.payload_bytes())

    def with_signature(self, governor_id: str, signature: bytes) -> LicenseGrant:
        return replace(self, signatures=self.signatures + ((governor_id, signature),))

    def allotment(self, chip_id: str) -> int:
        """This chip's share of the quota: equal split, remainder to the first chips."""
        try:
            idx = self.chip_ids.index(chip_id)
        except ValueError:
            return 0
        base, extra = divmod(self.quota, len(self.chip_ids))
        return base + (1 if idx < extra else 0)

    def covers(self, chip_id: str) -> bool:
        return chip_id in self.chip_ids

    def to_dict(self) -> dict[str, Any]:
        body = self.unsigned_body()
        body["signatures"] = [[g, s.hex()] for g, s in self.signatures]
        return body

    def to_wire(self) -> bytes:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> LicenseGrant:
        if obj.get("type") != "LicenseGrant":
            raise ValueError("not a LicenseGrant")
        return cls(
            grant_id=obj["grant_id"],
            chip_ids=tuple(obj["chip_ids"]),
            quota=exact_int(obj["quota"], "quota"),
            valid_from_us=exact_int(obj["valid_from_us"]),
            valid_to_us=exact_int(obj["valid_to_us"]),
            policy_id=obj["policy_id"],
            requester=obj["requester"],
            model_id=obj.get("model_id"),
            purpose=obj.get("purpose", "training"),
            signatures=tuple((g, bytes.fromhex(s)) for g, s in obj.get("signatures", [])),
        )

    @classmethod
    def from_wire(cls, data: bytes) -> LicenseGrant:
        return cls.from_dict(json.loads(data))


def valid_signers(grant: LicenseGrant, policy: MultiSigPolicy, keys: KeyDirectory) -> set[str]:
    """Distinct policy governors whose signature over the grant verifies."""
    message = grant.signing_input()
    signers = set()
    for governor_id, signature in grant.signatures:
        if governor_id in signers or governor_id not in policy.governors:
            continue
        if keys.verify(governor_id, signature, message):
            signers.add(governor_id)
    return signers


def validate_grant(
    grant: LicenseGrant,
    policy: MultiSigPolicy,
    keys: KeyDirectory,
    now_us: int,
    chip_id: str | None = None,
) -> None:
    """Raise :class:`LicenseInvalid` unless the grant is usable right now."""
    if grant.policy_id != policy.policy_id:
        raise LicenseInvalid("policy_mismatch", f"grant names {grant.policy_id!r}")
    if chip_id is not None and not grant.covers(chip_id):
        raise LicenseInvalid("not_covered", chip_id)
    if not grant.valid_from_us <= now_us < grant.valid_to_us:
        raise LicenseInvalid("outside_window", f"t={now_us}us")
    count = len(valid_signers(grant, policy, keys))
    if count < policy.threshold:
        raise LicenseInvalid("insufficient_signatures", f"{count} of required {policy.threshold}")
