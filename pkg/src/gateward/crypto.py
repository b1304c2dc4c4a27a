"""Signature schemes and the signed envelope wire format.

The simulator only needs "a key that signs things"; any scheme implementing
:class:`SignatureScheme` can be plugged in. Ed25519 is the default because its
signatures are deterministic, which keeps seeded event logs byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Protocol

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, ed25519

from .canonical import canonical_json, length_prefixed

NONCE_BYTES = 16


class EnvelopeError(ValueError):
    """Raised for malformed or non-canonical wire envelopes."""


class SigningKey(Protocol):
    scheme: str

    @property
    def public_bytes(self) -> bytes: ...

    def sign(self, message: bytes) -> bytes: ...


class SignatureScheme(Protocol):
    name: str

    def key_from_seed(self, seed: bytes) -> SigningKey: ...

    def verify(self, public_key: bytes, signature: bytes, message: bytes) -> bool: ...


class _Ed25519Key:
    scheme = "ed25519"

    def __init__(self, private: ed25519.Ed25519PrivateKey):
        self._private = private
        self._public = private.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )

    @property
    def public_bytes(self) -> bytes:
        return self._public

    def sign(self, message: bytes) -> bytes:
        return self._private.sign(message)

    def __repr__(self) -> str:
        return f"<ed25519 key {self._public[:4].hex()}…>"


class Ed25519Scheme:
    name = "ed25519"

    def key_from_seed(self, seed: bytes) -> _Ed25519Key:
        return _Ed25519Key(ed25519.Ed25519PrivateKey.from_private_bytes(seed[:32]))

    def verify(self, public_key: bytes, signature: bytes, message: bytes) -> bool:
        try:
            ed25519.Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        except (InvalidSignature, ValueError):
            return False
        return True


class _P256Key:
    scheme = "ecdsa-p256"

    def __init__(self, private: ec.EllipticCurvePrivateKey):
        self._private = private
        self._public = private.public_key().public_bytes(
            serialization.Encoding.X962, serialization.PublicFormat.CompressedPoint
        )

    @property
    def public_bytes(self) -> bytes:
        return self._public

    def sign(self, message: bytes) -> bytes:
        return self._private.sign(message, ec.ECDSA(hashes.SHA256()))

    def __repr__(self) -> str:
        return f"<ecdsa-p256 key {self._public[:4].hex()}…>"


class P256Scheme:
    """ECDSA over P-256. Signatures are randomized, so logs are not byte-stable."""

    name = "ecdsa-p256"
    _ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551

    def key_from_seed(self, seed: bytes) -> _P256Key:
        scalar = int.from_bytes(seed, "big") % (self._ORDER - 1) + 1
        return _P256Key(ec.derive_private_key(scalar, ec.SECP256R1()))

    def verify(self, public_key: bytes, signature: bytes, message: bytes) -> bool:
        try:
            key = ec.EllipticCurvePublicKey.from_encoded_point(ec.SECP256R1(), public_key)
            key.verify(signature, message, ec.ECDSA(hashes.SHA256()))
        except (InvalidSignature, ValueError):
            return False
        return True


SCHEMES: dict[str, SignatureScheme] = {"ed25519": Ed25519Scheme(), "ecdsa-p256": P256Scheme()}


@dataclass
class KeyDirectory:
    """Public keys of every party a verifier trusts, by signer id."""

    scheme: SignatureScheme = field(default_factory=Ed25519Scheme)
    keys: dict[str, bytes] = field(default_factory=dict)

    def add(self, signer: str, public_key: bytes) -> None:
        known = self.keys.get(signer)
        if known is not None and known != public_key:
            raise ValueError(f"conflicting public key for {signer!r}")
        self.keys[signer] = public_key

    def __contains__(self, signer: str) -> bool:
        return signer in self.keys

    def verify(self, signer: str, signature: bytes, message: bytes) -> bool:
        key = self.keys.get(signer)
        if key is None:
            return False
        return self.scheme.verify(key, signature, message)


@dataclass(frozen=True)
class SignedEnvelope:
    payload: bytes
    signer: str
    nonce: bytes
    signature: bytes

    def signing_input(self) -> bytes:
        return length_prefixed(self.payload, self.nonce)

    @property
    def body(self) -> dict[str, Any]:
        return json.loads(self.payload)

    @property
    def message_type(self) -> str | None:
        return self.body.get("type")

    def verify(self, directory: KeyDirectory) -> bool:
        return directory.verify(self.signer, self.signature, self.signing_input())

    def to_wire(self) -> bytes:
        return canonical_json(
            {
                "nonce": self.nonce.hex(),
                "payload": self.payload.decode("utf-8"),
                "signature": self.signature.hex(),
                "signer": self.signer,
            }
        )

    def to_dict(self) -> dict[str, str]:
        return json.loads(self.to_wire())

    @classmethod
    def from_dict(cls, obj: Any) -> SignedEnvelope:
        if not isinstance(obj, dict) or set(obj) != {"nonce", "payload", "signature", "signer"}:
            raise EnvelopeError("envelope must have exactly nonce, payload, signature, signer")
        if not all(isinstance(v, str) for v in obj.values()):
            raise EnvelopeError("envelope fields must be strings")
        try:
            nonce = bytes.fromhex(obj["nonce"])
            signature = bytes.fromhex(obj["signature"])
        except ValueError as exc:
            raise EnvelopeError("bad hex field") from exc
        if len(nonce) != NONCE_BYTES:
            raise EnvelopeError("nonce must be 128 bits")
        env = cls(obj["payload"].encode("utf-8"), obj["signer"], nonce, signature)
        if env.to_dict() != obj:
            raise EnvelopeError("non-canonical hex encoding")
        return env

    @classmethod
    def from_wire(cls, data: bytes) -> SignedEnvelope:
        try:
            obj = json.loads(data.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise EnvelopeError("envelope is not JSON") from exc
        env = cls.from_dict(obj)
        if env.to_wire() != data:
            raise EnvelopeError("envelope bytes are not canonical")
        try:
            if canonical_json(json.loads(env.payload)) != env.payload:
                raise EnvelopeError("payload bytes are not canonical")
        except json.JSONDecodeError as exc:
            raise EnvelopeError("payload is not JSON") from exc
        return env


def seal(body: dict[str, Any], signer: str, key: SigningKey, nonce: bytes) -> SignedEnvelope:
    """Sign a message body under ``signer``'s key."""
    if len(nonce) != NONCE_BYTES:
        raise ValueError("nonce must be 128 bits")
    payload = canonical_json(body)
    return SignedEnvelope(payload, signer, nonce, key.sign(length_prefixed(payload, nonce)))


def fresh_nonce(rng) -> bytes:
    return rng.getrandbits(8 * NONCE_BYTES).to_bytes(NONCE_BYTES, "big")
