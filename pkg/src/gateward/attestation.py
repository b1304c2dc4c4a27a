"""Hash-chained, chip-signed training attestations.

Each step links ``chain_i = H(chain_{i-1} || code_i || data_i || flop_i)``
where the hashes are raw 32-byte digests, ``flop_i`` is a 16-byte big-endian
unsigned integer and ``chain_{-1}`` is 32 zero bytes. The executing chip signs
the final link together with the step count and total FLOP.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any, Iterable

from .canonical import DEFAULT_HASH, SUPPORTED_HASHES, canonical_json, digest
from .crypto import EnvelopeError, KeyDirectory, SignedEnvelope, fresh_nonce

GENESIS = bytes(32)
FLOP_BYTES = 16


class Reason(str, enum.Enum):
    OK = "ok"
    EMPTY = "Empty"
    MALFORMED = "Malformed"
    NON_CANONICAL = "NonCanonical"
    UNKNOWN_HASH = "UnknownHash"
    PREV_HASH_MISMATCH = "PrevHashMismatch"
    CHAIN_BROKEN = "ChainBroken"
    BAD_SIGNATURE = "BadSignature"
    SIGNATURE_MISMATCH = "SignatureMismatch"
    TOTAL_MISMATCH = "TotalMismatch"
    UNEXPECTED_CODE = "UnexpectedCode"
    UNEXPECTED_DATA = "UnexpectedData"


@dataclass(frozen=True)
class AttestationResult:
    ok: bool
    reason: Reason
    step: int | None = None

    def __bool__(self) -> bool:
        return self.ok


def chain_link(prev: bytes, code_hash: bytes, data_hash: bytes, step_flop: int, hash_name: str = DEFAULT_HASH) -> bytes:
    if step_flop < 0:
        raise ValueError("step_flop must be non-negative")
    return digest(prev + code_hash + data_hash + step_flop.to_bytes(FLOP_BYTES, "big"), hash_name)


@dataclass(frozen=True)
class Step:
    prev_hash: bytes
    code_hash: bytes
    data_hash: bytes
    step_flop: int
    chain_hash: bytes

    def to_dict(self) -> dict[str, Any]:
        return {
            "prev_hash": self.prev_hash.hex(),
            "code_hash": self.code_hash.hex(),
            "data_hash": self.data_hash.hex(),
            "step_flop": self.step_flop,
            "chain_hash": self.chain_hash.hex(),
        }


@dataclass(frozen=True)
class AttestationProof:
    proof_id: str
    hash_name: str
    steps: tuple[Step, ...]
    final_signature: SignedEnvelope
    total_flop: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": "AttestationSubmit",
            "proof_id": self.proof_id,
            "hash": self.hash_name,
            "steps": [s.to_dict() for s in self.steps],
            "final_signature": self.final_signature.to_dict(),
            "total_flop": self.total_flop,
        }

    def to_bytes(self) -> bytes:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> AttestationProof:
        steps = tuple(
            Step(
                bytes.fromhex(s["prev_hash"]),
                bytes.fromhex(s["code_hash"]),
                bytes.fromhex(s["data_hash"]),
                _strict_int(s["step_flop"]),
                bytes.fromhex(s["chain_hash"]),
            )
            for s in obj["steps"]
        )
        return cls(
            proof_id=obj["proof_id"],
            hash_name=obj["hash"],
            steps=steps,
            final_signature=SignedEnvelope.from_dict(obj["final_signature"]),
            total_flop=_strict_int(obj["total_flop"]),
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> AttestationProof:
        """Parse a proof, rejecting anything that is not byte-canonical."""
        obj = json.loads(data.decode("utf-8"))
        if obj.get("type") != "AttestationSubmit":
            raise ValueError("not an AttestationSubmit")
        proof = cls.from_dict(obj)
        if proof.to_bytes() != data:
            raise EnvelopeError("proof bytes are not canonical")
        return proof

    @property
    def code_hashes(self) -> tuple[bytes, ...]:
        return tuple(s.code_hash for s in self.steps)

    @property
    def data_hashes(self) -> tuple[bytes, ...]:
        return tuple(s.data_hash for s in self.steps)


def _strict_int(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError("expected an integer")
    return value


@dataclass
class AttestedRun:
    """Accumulates steps on a chip and seals them into a proof."""

    chip: Any
    proof_id: str
    hash_name: str = DEFAULT_HASH
    steps: list[Step] = field(default_factory=list)

    @property
    def head(self) -> bytes:
        return self.steps[-1].chain_hash if self.steps else GENESIS

    @property
    def total_flop(self) -> int:
        return sum(s.step_flop for s in self.steps)

    def record(self, code_hash: bytes, data_hash: bytes, step_flop: int) -> Step:
        prev = self.head
        step = Step(prev, code_hash, data_hash, step_flop, chain_link(prev, code_hash, data_hash, step_flop, self.hash_name))
        self.steps.append(step)
        return step

    def seal(self, rng) -> AttestationProof:
        if not self.steps:
            raise ValueError("nothing to attest")
        body = _signed_summary(self.proof_id, self.hash_name, len(self.steps), self.head, self.total_flop)
        envelope = self.chip.sign(body, fresh_nonce(rng))
        return AttestationProof(self.proof_id, self.hash_name, tuple(self.steps), envelope, self.total_flop)


def _signed_summary(proof_id: str, hash_name: str, n_steps: int, head: bytes, total: int) -> dict[str, Any]:
    return {
        "type": "TrainingAttestation",
        "proof_id": proof_id,
        "hash": hash_name,
        "steps": n_steps,
        "final_chain_hash": head.hex(),
        "total_flop": total,
    }


def verify_attestation(
    proof: AttestationProof,
    expected_codes: Iterable[bytes],
    expected_data: Iterable[bytes],
    claimed_flop: int,
    keys: KeyDirectory,
    signer: str | None = None,
) -> AttestationResult:
    """Recompute the chain, check the chip signature and the claimed totals."""
    if not proof.steps:
        return AttestationResult(False, Reason.EMPTY)
    if proof.hash_name not in SUPPORTED_HASHES:
        return AttestationResult(False, Reason.UNKNOWN_HASH)
    prev = GENESIS
    for i, step in enumerate(proof.steps):
        if step.prev_hash != prev:
            return AttestationResult(False, Reason.PREV_HASH_MISMATCH, i)
        if step.step_flop < 0 or len(step.code_hash) != 32 or len(step.data_hash) != 32:
            return AttestationResult(False, Reason.MALFORMED, i)
        if chain_link(prev, step.code_hash, step.data_hash, step.step_flop, proof.hash_name) != step.chain_hash:
            return AttestationResult(False, Reason.CHAIN_BROKEN, i)
        prev = step.chain_hash
    env = proof.final_signature
    if (signer is not None and env.signer != signer) or not env.verify(keys):
        return AttestationResult(False, Reason.BAD_SIGNATURE)
    summed = sum(s.step_flop for s in proof.steps)
    try:
        signed = env.body
    except ValueError:
        return AttestationResult(False, Reason.SIGNATURE_MISMATCH)
    if signed != _signed_summary(proof.proof_id, proof.hash_name, len(proof.steps), prev, signed.get("total_flop")):
        return AttestationResult(False, Reason.SIGNATURE_MISMATCH)
    if not (signed["total_flop"] == proof.total_flop == summed == claimed_flop):
        return AttestationResult(False, Reason.TOTAL_MISMATCH)
    codes, data = set(expected_codes), set(expected_data)
    for i, step in enumerate(proof.steps):
        if step.code_hash not in codes:
            return AttestationResult(False, Reason.UNEXPECTED_CODE, i)
        if step.data_hash not in data:
            return AttestationResult(False, Reason.UNEXPECTED_DATA, i)
    return AttestationResult(True, Reason.OK)


def verify_attestation_bytes(
    data: bytes,
    expected_codes: Iterable[bytes],
    expected_data: Iterable[bytes],
    claimed_flop: int,
    keys: KeyDirectory,
    signer: str | None = None,
) -> AttestationResult:
    """Same as :func:`verify_attestation` for a proof still in wire form."""
    try:
        proof = AttestationProof.from_bytes(data)
    except EnvelopeError:
        return AttestationResult(False, Reason.NON_CANONICAL)
    except (ValueError, KeyError, TypeError, AttributeError, UnicodeDecodeError):
        return AttestationResult(False, Reason.MALFORMED)
    return verify_attestation(proof, expected_codes, expected_data, claimed_flop, keys, signer)
