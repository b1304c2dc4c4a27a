"""Quarterly compute reports, rebuilt purely from event-log entries.

The simulator feeds its own log through :class:`ReportBuilder` as it goes,
so a report produced live is by construction the one ``gateward report``
recomputes from the log file.
"""

from __future__ import annotations

import decimal
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Any, Iterable

from ..canonical import canonical_json, exact_number, to_jsonable
from ..ledger import CausalGraph, ComputeNode
from ..policy import PolicyConfig, check_caps, registration_required
from .eventlog import EventLog, LogEntry

_CTX = decimal.Context(prec=80)


class PeriodOpen(Exception):
    pass


@dataclass(frozen=True)
class ModelFigures:
    training_compute: int
    peak_inference_rate: Fraction

    def to_dict(self) -> dict[str, Any]:
        return {"training_compute": self.training_compute, "peak_inference_rate": self.peak_inference_rate}


@dataclass(frozen=True)
class QuarterlyReport:
    period: int
    start_us: int
    end_us: int
    models: dict[str, ModelFigures]
    executed_flop: int
    energy_joules: Decimal
    financial_cost: Decimal
    registration_required: tuple[str, ...]
    registered: tuple[str, ...]
    violations: tuple[dict[str, Any], ...]
    cap_check: dict[str, str]

    @property
    def registration_complete(self) -> bool:
        return set(self.registration_required) <= set(self.registered)

    @property
    def missing_registrations(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.registration_required) - set(self.registered)))

    def to_dict(self) -> dict[str, Any]:
        return to_jsonable(
            {
                "period": self.period,
                "start_us": self.start_us,
                "end_us": self.end_us,
                "models": {m: f.to_dict() for m, f in sorted(self.models.items())},
                "executed_flop": self.executed_flop,
                "energy_joules": self.energy_joules,
                "financial_cost": self.financial_cost,
                "registration": {
                    "required": list(self.registration_required),
                    "registered": list(self.registered),
                    "missing": list(self.missing_registrations),
                    "complete": self.registration_complete,
                },
                "violations": list(self.violations),
                "cap_check": dict(sorted(self.cap_check.items())),
            }
        )

    def to_bytes(self) -> bytes:
        return canonical_json(self.to_dict())


@dataclass
class ReportBuilder:
    quarter_us: int = 90 * 86_400 * 1_000_000
    joules_per_flop: Decimal = Decimal("1e-12")
    currency_per_flop: Decimal = Decimal("1e-18")
    config: PolicyConfig = field(default_factory=PolicyConfig)
    graph: CausalGraph = field(default_factory=CausalGraph)
    registered: set[str] = field(default_factory=set)
    reports: list[QuarterlyReport] = field(default_factory=list)
    now_us: int = 0
    _executions: list[tuple[int, int]] = field(default_factory=list)
    _outputs: list[tuple[int, str, str, str | None]] = field(default_factory=list)
    _last_output: dict[str, str] = field(default_factory=dict)
    _peak_ever: dict[str, Fraction] = field(default_factory=dict)
    _violations: list[dict[str, Any]] = field(default_factory=list)

    def feed(self, entry: LogEntry) -> QuarterlyReport | None:
        self.now_us = entry.t_us
        p = entry.payload
        kind = entry.kind
        if kind == "sim_start":
            r = p["reporting"]
            self.quarter_us = r["quarter_us"]
            self.joules_per_flop = Decimal(r["joules_per_flop"])
            self.currency_per_flop = Decimal(r["currency_per_flop"])
            self.config = PolicyConfig.from_dict(p["policy"])
        elif kind == "cap_adjusted":
            self.config = PolicyConfig.from_dict(p["policy"])
        elif kind == "ledger_node":
            self.graph.add_node(ComputeNode.from_record(p["record"]))
        elif kind == "execute":
            self._executions.append((p["start_us"], p["flop"]))
        elif kind == "output":
            self._on_output(entry.t_us, p)
        elif kind == "registered" and p["registry"] == "national":
            self.registered.add(p["entry"]["model_id"])
        elif kind == "violation":
            self._violations.append({"t_us": entry.t_us, **p})
        elif kind == "quarter_end":
            report = self._close(p["period"], p["start_us"], p["end_us"])
            self.reports.append(report)
            return report
        return None

    def _on_output(self, t_us: int, p: dict[str, Any]) -> None:
        stream, oid, model = p["stream"], p["output_id"], p["model"]
        prev = self._last_output.get(stream)
        self._last_output[stream] = oid
        rate = None
        if prev is not None:
            rate = self.graph.inference_rate([prev, oid])
            self._peak_ever[model] = max(self._peak_ever.get(model, Fraction(0)), rate)
        self._outputs.append((t_us, model, oid, rate))

    def _close(self, period: int, start_us: int, end_us: int) -> QuarterlyReport:
        models: dict[str, ModelFigures] = {}
        peaks: dict[str, Fraction] = {}
        for t, model, _, rate in self._outputs:
            if start_us <= t < end_us:
                peaks.setdefault(model, Fraction(0))
                if rate is not None:
                    peaks[model] = max(peaks[model], rate)
        names = set(self.graph.model_index) | set(peaks)
        for m in sorted(names):
            tc = self.graph.training_compute(m) if m in self.graph.model_index else 0
            models[m] = ModelFigures(tc, peaks.get(m, Fraction(0)))
        executed = sum(f for s, f in self._executions if start_us <= s < end_us)
        required = tuple(
            sorted(
                m
                for m in models
                if registration_required(models[m].training_compute, self._peak_ever.get(m, 0), self.config)
            )
        )
        cap_check = {}
        for m, fig in models.items():
            decision = check_caps(fig.training_compute, fig.peak_inference_rate, self.config)
            cap_check[m] = "ok" if decision.allowed else decision.reason
        return QuarterlyReport(
            period=period,
            start_us=start_us,
            end_us=end_us,
            models=models,
            executed_flop=executed,
            energy_joules=_scaled(executed, self.joules_per_flop),
            financial_cost=_scaled(executed, self.currency_per_flop),
            registration_required=required,
            registered=tuple(sorted(self.registered)),
            violations=tuple(v for v in self._violations if _in_period(v, period, start_us, end_us)),
            cap_check=cap_check,
        )

    def peak_rate_ever(self, model: str) -> Fraction:
        return self._peak_ever.get(model, Fraction(0))


def _scaled(flop: int, factor: Decimal) -> Decimal:
    value = _CTX.multiply(Decimal(flop), factor)
    return value.normalize(_CTX) if value else Decimal(0)


def _in_period(v: dict[str, Any], period: int, start_us: int, end_us: int) -> bool:
    # findings of a quarter-end audit carry the period they close
    if "period" in v:
        return v["period"] == period
    return start_us <= v["t_us"] < end_us


def reports_from_log(log: EventLog | Iterable[LogEntry]) -> list[QuarterlyReport]:
    builder = ReportBuilder()
    for entry in log:
        builder.feed(entry)
    return builder.reports


def report_from_dict(obj: dict[str, Any]) -> dict[str, Any]:
    """Normalize a serialized report for comparisons (numbers become exact)."""
    out = dict(obj)
    out["models"] = {
        m: {"training_compute": f["training_compute"], "peak_inference_rate": exact_number(f["peak_inference_rate"])}
        for m, f in obj["models"].items()
    }
    return out
