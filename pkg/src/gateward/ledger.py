"""Compute causal graph and the Training / Output / Inference-rate tallies.

FLOP counts are exact integers of FP16 operations. A node flagged
``human_cutoff`` still counts its own FLOP, but the backward walk does not
continue into its parents. A node flagged ``discarded`` is kept for the audit
trail, contributes nothing, and is not walked through.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .canonical import MICROS, exact_int, to_micros


class LedgerError(Exception):
    pass


class UnknownParent(LedgerError):
    pass


class CycleDetected(LedgerError):
    pass


class CausalityViolation(CycleDetected):
    """A parent is not strictly earlier than its child."""


class NegativeFlop(LedgerError):
    pass


class DuplicateNode(LedgerError):
    pass


class UnknownModel(LedgerError, KeyError):
    pass


class UnknownOutput(LedgerError, KeyError):
    pass


class UnknownNode(LedgerError, KeyError):
    pass


class StreamTooShort(LedgerError):
    pass


class NonMonotonicTimestamps(LedgerError):
    pass


class NodeKind(str, enum.Enum):
    DATA_PREP = "data_prep"
    TRAINING = "training"
    FINE_TUNE = "fine_tune"
    INFERENCE = "inference"
    HUMAN_INPUT = "human_input"


RECORD_FIELDS = (
    "node_id",
    "kind",
    "flop",
    "wall_time",
    "parents",
    "human_cutoff",
    "discarded",
    "model_id",
    "output_id",
)


@dataclass(frozen=True)
class ComputeNode:
    node_id: str
    kind: NodeKind
    flop: int
    wall_time: float
    parents: tuple[str, ...] = ()
    human_cutoff: bool = False
    discarded: bool = False
    model_id: str | None = None
    output_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", NodeKind(self.kind))
        object.__setattr__(self, "parents", tuple(self.parents))

    @property
    def time_us(self) -> int:
        return to_micros(self.wall_time)

    def to_record(self) -> dict:
        return {name: _record_value(getattr(self, name)) for name in RECORD_FIELDS}

    @classmethod
    def from_record(cls, rec: dict) -> ComputeNode:
        missing = [f for f in RECORD_FIELDS if f not in rec]
        if missing:
            raise LedgerError(f"record missing fields {missing}")
        return cls(
            node_id=str(rec["node_id"]),
            kind=NodeKind(rec["kind"]),
            flop=exact_int(rec["flop"], "flop"),
            wall_time=float(rec["wall_time"]),
            parents=tuple(rec["parents"]),
            human_cutoff=bool(rec["human_cutoff"]),
            discarded=bool(rec["discarded"]),
            model_id=rec["model_id"],
            output_id=rec["output_id"],
        )


def _record_value(value):
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, tuple):
        return list(value)
    return value


@dataclass(frozen=True)
class OutputRecord:
    output_id: str
    terminal_node: str
    emitted_at: float
    marginal_flop: int
    proof_id: str | None = None

    def __post_init__(self):
        if self.marginal_flop < 0:
            raise ValueError("marginal_flop must be non-negative")


@dataclass
class CausalGraph:
    """Append-mostly DAG of compute events.

    Mutations (``add_node``, ``mark_*``) are meant to come from a single owner;
    readers that need a stable view should take :meth:`snapshot`.
    """

    nodes: dict[str, ComputeNode] = field(default_factory=dict)
    model_index: dict[str, set[str]] = field(default_factory=dict)
    output_index: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.nodes

    def __iter__(self) -> Iterator[ComputeNode]:
        return iter(self.nodes.values())

    def add_node(self, node: ComputeNode) -> str:
        if node.node_id in self.nodes:
            raise DuplicateNode(node.node_id)
        if node.flop < 0:
            raise NegativeFlop(f"{node.node_id}: flop={node.flop}")
        if node.kind is NodeKind.HUMAN_INPUT and node.flop != 0:
            raise LedgerError(f"{node.node_id}: human_input nodes carry no FLOP")
        if node.node_id in node.parents:
            raise CycleDetected(f"{node.node_id} lists itself as a parent")
        t = node.time_us
        for pid in node.parents:
            parent = self.nodes.get(pid)
            if parent is None:
                raise UnknownParent(f"{node.node_id}: parent {pid!r} not in graph")
            if parent.time_us >= t:
                raise CausalityViolation(
                    f"{node.node_id} at {node.wall_time}s has parent {pid} at {parent.wall_time}s"
                )
        if node.output_id is not None and node.output_id in self.output_index:
            raise DuplicateNode(f"output {node.output_id!r} already has a terminal node")
        self.nodes[node.node_id] = node
        if node.model_id is not None:
            self.model_index.setdefault(node.model_id, set()).add(node.node_id)
        if node.output_id is not None:
            self.output_index[node.output_id] = node.node_id
        return node.node_id

    def add(self, node_id: str, kind, flop: int, wall_time: float, parents: Iterable[str] = (), **flags) -> str:
        return self.add_node(ComputeNode(node_id, kind, flop, wall_time, tuple(parents), **flags))

    def _get(self, node_id: str) -> ComputeNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def mark_human_cutoff(self, node_id: str) -> CausalGraph:
        node = self._get(node_id)
        if not node.human_cutoff:
            self.nodes[node_id] = replace(node, human_cutoff=True)
        return self

    def mark_discarded(self, node_id: str) -> CausalGraph:
        node = self._get(node_id)
        if not node.discarded:
            self.nodes[node_id] = replace(node, discarded=True)
        return self

    def snapshot(self) -> CausalGraph:
        return CausalGraph(
            dict(self.nodes),
            {k: set(v) for k, v in self.model_index.items()},
            dict(self.output_index),
        )

    def tally_set(self, roots: Iterable[str]) -> set[str]:
        """Node ids that count toward a tally rooted at ``roots``."""
        seen: set[str] = set()
        stack = list(roots)
        while stack:
            nid = stack.pop()
            if nid in seen:
                continue
            node = self.nodes[nid]
            if node.discarded:
                continue
            seen.add(nid)
            if not node.human_cutoff:
                stack.extend(p for p in node.parents if p not in seen)
        return seen

    def flop_of(self, node_ids: Iterable[str]) -> int:
        return sum(self.nodes[n].flop for n in node_ids)

    def model_nodes(self, model_id: str) -> set[str]:
        try:
            return self.model_index[model_id]
        except KeyError:
            raise UnknownModel(model_id) from None

    def terminal_of(self, output_id: str) -> str:
        try:
            return self.output_index[output_id]
        except KeyError:
            raise UnknownOutput(output_id) from None

    def training_compute(self, model_id: str) -> int:
        """Total FLOP in the model's causal graph (data prep, training, fine-tuning)."""
        return self.flop_of(self.tally_set(self.model_nodes(model_id)))

    def output_compute(self, output_id: str) -> int:
        """Total FLOP behind one output, contributing models' training included once."""
        return self.flop_of(self.tally_set([self.terminal_of(output_id)]))

    def marginal_compute(self, output_id: str, previous: str | None = None) -> int:
        """FLOP behind ``output_id`` not already behind ``previous``."""
        current = self.tally_set([self.terminal_of(output_id)])
        if previous is not None:
            current -= self.tally_set([self.terminal_of(previous)])
        return self.flop_of(current)

    def output_stream(self, output_ids: Sequence[str]) -> list[OutputRecord]:
        records = []
        prev = None
        for oid in output_ids:
            terminal = self.terminal_of(oid)
            records.append(
                OutputRecord(oid, terminal, self.nodes[terminal].wall_time, self.marginal_compute(oid, prev))
            )
            prev = oid
        return records

    def inference_rate(self, output_ids: Sequence[str]) -> Fraction:
        return inference_rate(self.output_stream(output_ids))

    # record file

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.iter_lines():
                fh.write(line + "\n")

    def iter_lines(self) -> Iterator[str]:
        for node in self.nodes.values():
            yield json.dumps(node.to_record(), separators=(",", ":"), ensure_ascii=False)

    @classmethod
    def read(cls, path: str | Path) -> CausalGraph:
        with open(path, encoding="utf-8") as fh:
            return cls.from_lines(fh)

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> CausalGraph:
        graph = cls()
        for lineno, line in enumerate(lines, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LedgerError(f"line {lineno}: {exc}") from exc
            graph.add_node(ComputeNode.from_record(rec))
        return graph


def _intervals(stream: Sequence[OutputRecord]) -> Iterator[tuple[int, int]]:
    if len(stream) < 2:
        raise StreamTooShort(f"need at least 2 outputs, got {len(stream)}")
    times = [to_micros(r.emitted_at) for r in stream]
    for i in range(1, len(stream)):
        dt = times[i] - times[i - 1]
        if dt <= 0:
            raise NonMonotonicTimestamps(
                f"{stream[i].output_id} emitted at {stream[i].emitted_at}s, not after {stream[i - 1].emitted_at}s"
            )
        yield stream[i].marginal_flop, dt


def inference_rate(stream: Sequence[OutputRecord]) -> Fraction:
    """Peak Inference Compute Rate of a stream, in FLOP/s (exact)."""
    return max(Fraction(flop * MICROS, dt) for flop, dt in _intervals(stream))


def mean_inference_rate(stream: Sequence[OutputRecord]) -> Fraction:
    total_flop = total_dt = 0
    for flop, dt in _intervals(stream):
        total_flop += flop
        total_dt += dt
    return Fraction(total_flop * MICROS, total_dt)
