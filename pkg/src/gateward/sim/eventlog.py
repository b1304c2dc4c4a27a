"""Append-only, hash-chained event log (line-delimited canonical JSON)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator

from ..canonical import DEFAULT_HASH, canonical_json, digest

GENESIS = bytes(32)


class LogCorrupted(ValueError):
    pass


@dataclass(frozen=True)
class LogEntry:
    seq: int
    t_us: int
    actor: str
    kind: str
    payload: dict[str, Any]
    hash: str

    def body(self) -> dict[str, Any]:
        return {"seq": self.seq, "t_us": self.t_us, "actor": self.actor, "kind": self.kind, "payload": self.payload}

    def to_dict(self) -> dict[str, Any]:
        return {**self.body(), "hash": self.hash}


def link_hash(prev: bytes, body: dict[str, Any], hash_name: str = DEFAULT_HASH) -> bytes:
    return digest(prev + canonical_json(body), hash_name)


class EventLog:
    """Entries carry the running hash ``h_i = H(h_{i-1} || canonical(body_i))``.

    Payloads are stored as they read back from their canonical encoding, so
    consumers of a live log and of a file see the same values.
    """

    def __init__(self, hash_name: str = DEFAULT_HASH):
        self.hash_name = hash_name
        self.entries: list[LogEntry] = []
        self.head = GENESIS
        self._lines: list[bytes] = []

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[LogEntry]:
        return iter(self.entries)

    def append(self, t_us: int, actor: str, kind: str, payload: dict[str, Any] | None = None) -> LogEntry:
        if self.entries and t_us < self.entries[-1].t_us:
            raise ValueError("log time went backwards")
        body = {"seq": len(self.entries), "t_us": t_us, "actor": actor, "kind": kind, "payload": payload or {}}
        body = json.loads(canonical_json(body))
        self.head = link_hash(self.head, body, self.hash_name)
        entry = LogEntry(hash=self.head.hex(), **body)
        self.entries.append(entry)
        self._lines.append(canonical_json(entry.to_dict()))
        return entry

    def of_kind(self, *kinds: str) -> list[LogEntry]:
        return [e for e in self.entries if e.kind in kinds]

    @property
    def chain_hash(self) -> str:
        return self.head.hex()

    def trailer(self) -> bytes:
        return canonical_json({"chain_hash": self.chain_hash, "entries": len(self.entries), "hash": self.hash_name})

    def to_bytes(self) -> bytes:
        return b"".join(line + b"\n" for line in self._lines) + self.trailer() + b"\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_lines(cls, lines: Iterable[bytes | str]) -> EventLog:
        """Rebuild a log, verifying every running hash and the trailer."""
        raw = [l.encode() if isinstance(l, str) else l for l in lines]
        raw = [l.strip() for l in raw if l.strip()]
        if not raw:
            raise LogCorrupted("empty log")
        try:
            trailer = json.loads(raw[-1])
            records = [json.loads(l) for l in raw[:-1]]
        except json.JSONDecodeError as exc:
            raise LogCorrupted(str(exc)) from None
        if set(trailer) != {"chain_hash", "entries", "hash"}:
            raise LogCorrupted("missing chain-hash trailer")
        log = cls(trailer["hash"])
        for i, rec in enumerate(records):
            claimed = rec.pop("hash", None)
            entry = log.append(rec["t_us"], rec["actor"], rec["kind"], rec["payload"])
            if rec.get("seq") != i or entry.hash != claimed or log._lines[-1] != raw[i]:
                raise LogCorrupted(f"entry {i} does not chain")
        if trailer["chain_hash"] != log.chain_hash or trailer["entries"] != len(log):
            raise LogCorrupted("trailer does not match the chain")
        return log

    @classmethod
    def read(cls, path: str | Path) -> EventLog:
        return cls.from_lines(Path(path).read_bytes().splitlines())
