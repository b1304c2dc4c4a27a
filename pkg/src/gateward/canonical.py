"""Canonical byte encodings shared by signatures, hash chains and record files.

Everything that gets signed or hashed goes through :func:`canonical_json`, so
two runs that build the same objects produce the same bytes.
"""

from __future__ import annotations

import enum
import hashlib
import json
import random
from dataclasses import asdict, is_dataclass
from decimal import Decimal
from fractions import Fraction
from typing import Any

MICROS = 1_000_000
DEFAULT_HASH = "sha256"
SUPPORTED_HASHES = ("sha256", "sha3_256", "blake2s")


def to_jsonable(value: Any) -> Any:
    """Lower a value to plain JSON types without losing exactness.

    Integral fractions become ints, other fractions become ``"n/d"`` strings,
    decimals become their normalized string form and bytes become lowercase hex.
    """
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, enum.Enum):
        return to_jsonable(value.value)
    if isinstance(value, int):
        return value
    if isinstance(value, Fraction):
        if value.denominator == 1:
            return value.numerator
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, Decimal):
        if value == value.to_integral_value():
            return int(value)
        return format(value.normalize(), "f")
    if isinstance(value, float):
        if value.is_integer() and abs(value) < 2**53:
            return int(value)
        return value
    if isinstance(value, (bytes, bytearray)):
        return bytes(value).hex()
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (set, frozenset)):
        return sorted(to_jsonable(v) for v in value)
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if is_dataclass(value) and not isinstance(value, type):
        return to_jsonable(asdict(value))
    raise TypeError(f"cannot encode {type(value).__name__}")


def canonical_json(value: Any) -> bytes:
    """UTF-8, lexicographically sorted keys, no insignificant whitespace."""
    return json.dumps(
        to_jsonable(value), sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def loads_exact(text: str | bytes) -> Any:
    """Parse JSON keeping non-integer numbers as :class:`Decimal`."""
    return json.loads(text, parse_float=Decimal)


def exact_int(value: Any, what: str = "value") -> int:
    """Coerce ``value`` to an exact integer.

    Accepts ints, integral decimals, floats that are exact powers written like
    ``1e26`` (through their shortest repr), and numeric strings such as
    ``"2.5e25"``.
    """
    if isinstance(value, bool):
        raise ValueError(f"{what}: expected a number, got a boolean")
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        value = Decimal(repr(value))
    if isinstance(value, str):
        try:
            value = Decimal(value)
        except ArithmeticError as exc:
            raise ValueError(f"{what}: not a number: {value!r}") from exc
    if isinstance(value, Fraction):
        if value.denominator != 1:
            raise ValueError(f"{what}: not integral: {value}")
        return value.numerator
    if isinstance(value, Decimal):
        if not value.is_finite() or value != value.to_integral_value():
            raise ValueError(f"{what}: not integral: {value}")
        return int(value)
    raise ValueError(f"{what}: expected a number, got {type(value).__name__}")


def exact_number(value: Any, what: str = "value") -> Fraction:
    if isinstance(value, bool):
        raise ValueError(f"{what}: expected a number, got a boolean")
    if isinstance(value, float):
        value = Decimal(repr(value))
    if isinstance(value, str):
        if "/" in value:
            return Fraction(value)
        value = Decimal(value)
    if isinstance(value, (int, Decimal, Fraction)):
        return Fraction(value)
    raise ValueError(f"{what}: expected a number, got {type(value).__name__}")


def to_micros(seconds: Any) -> int:
    """Seconds to the 1 µs simulation grid (round half to even)."""
    return round(exact_number(seconds, "seconds") * MICROS)


def length_prefixed(*fields: bytes) -> bytes:
    """Concatenate fields, each preceded by its 8-byte big-endian length."""
    return b"".join(len(f).to_bytes(8, "big") + f for f in fields)


def digest(data: bytes, hash_name: str = DEFAULT_HASH) -> bytes:
    if hash_name not in SUPPORTED_HASHES:
        raise ValueError(f"unsupported hash {hash_name!r}")
    return hashlib.new(hash_name, data).digest()


def substream(seed: int, name: str) -> random.Random:
    """Independent, reproducible RNG for one actor of a seeded run."""
    material = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return random.Random(int.from_bytes(material[:16], "big"))


def seed_bytes(seed: int, name: str, size: int = 32) -> bytes:
    out = b""
    counter = 0
    while len(out) < size:
        out += hashlib.sha256(f"{seed}:{name}:{counter}".encode()).digest()
        counter += 1
    return out[:size]
