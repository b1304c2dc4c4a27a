"""Discrete-event simulation of the phased compute-governance rollout.

Everything runs on one logical clock at 1 µs resolution. Each actor draws
randomness from its own named substream of the scenario seed, and every
observable action lands in the hash-chained :class:`EventLog`.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Callable

from ..attestation import AttestedRun
from ..canonical import MICROS, digest, substream, to_micros
from ..crypto import SCHEMES
from ..fabric import Fabric, FabricError, NoResponse, SpeedLimitExceeded, UnknownChip
from ..geo import EmptyRegion, LatencyModel, Station, locate, measure_bounds, verify_within
from ..governor import (
    CapWouldBeExceeded,
    GovernorError,
    GovernorService,
    InsufficientSignatures,
    LicenseDenied,
    Registry,
    RegistryEntry,
    TargetWithheld,
    UnknownTarget,
)
from ..ledger import ComputeNode, NodeKind
from ..licensing import LicenseGrant, LicenseInvalid, MultiSigPolicy
from ..policy import PolicyConfig, registration_required
from .eventlog import EventLog
from .report import PeriodOpen, QuarterlyReport, ReportBuilder
from .scenario import PHASES, LabSpec, Scenario, Workload

BASELINE = "baseline"
PHASE_ORDER = (BASELINE,) + PHASES
DEFAULT_UNTIL_S = 365 * 86_400

_ADDED = {
    BASELINE: (),
    "pause": ("pause_plan", "license_caps", "speed_limit"),
    "national_oversight": ("registration", "cluster_verification", "custodian_reporting"),
    "international_oversight": ("dual_reporting", "registry_mirror"),
    "verification_enforcement": ("direct_agency_telemetry", "agency_cap_adjustment"),
}


def _accumulate() -> dict[str, frozenset[str]]:
    active: set[str] = set()
    out = {}
    for phase in PHASE_ORDER:
        active |= set(_ADDED[phase])
        out[phase] = frozenset(active)
    return out


# checks switched on at each phase; each set contains the one before it
PHASE_CHECKS = _accumulate()

# event priorities at equal timestamps: close the books first, then rule changes
_P_QUARTER, _P_PHASE, _P_CAPS, _P_WORK = 0, 1, 2, 3


class PhaseOrderViolation(Exception):
    pass


@dataclass
class TrainingRun:
    run_id: str
    lab: LabSpec
    model: str
    chips: tuple[str, ...]
    declared_plan: int
    actual_flop: int
    license_flop: int
    steps: int
    kind: NodeKind
    attest: bool
    base: int = 0
    executed: int = 0
    licenses: int = 0
    grant: LicenseGrant | None = None
    left: dict[str, int] = field(default_factory=dict)
    step_in_license: int = 0
    frontier: list[str] = field(default_factory=list)
    attested: AttestedRun | None = None
    data_hashes: list[bytes] = field(default_factory=list)
    status: str = "running"


@dataclass
class InferenceStream:
    stream_id: str
    lab: LabSpec
    model: str
    chips: tuple[str, ...]
    marginal_flop: int
    period_us: int
    outputs: int
    declared_rate: Fraction
    grant: LicenseGrant | None = None
    emitted: int = 0
    last_output: str | None = None
    peak_rate: Fraction = Fraction(0)
    status: str = "running"


class Simulation:
    def __init__(self, scenario: Scenario, seed: int | None = None):
        self.scenario = scenario if seed is None else scenario.with_seed(seed)
        s = self.scenario
        self.seed = s.seed
        self.config: PolicyConfig = s.policy
        self.q_us = s.reporting.quarter_seconds * MICROS
        self.fabric = Fabric(
            SCHEMES[s.signature_scheme],
            cluster_cap=self.config.cluster_cap,
            speed_limit_scope=s.governance.speed_limit_scope,
            seed=self.seed,
        )
        gov = s.governance
        self.governor = GovernorService(
            self.fabric,
            MultiSigPolicy(gov.policy_id, gov.governors, gov.threshold),
            self.config,
            quantum=gov.quantum,
            seed=self.seed,
            enforce_caps=False,
        )
        for gid in gov.unresponsive:
            self.governor.nodes[gid].responsive = False
        self.enforcer = gov.governors[0]
        self.agency_registry = Registry("international_agency")
        for spec in s.chips:
            self.fabric.provision_chip(
                spec.capacity,
                spec.location,
                spec.allow_list,
                chip_id=spec.chip_id,
                processing_allowance=spec.processing_allowance,
                processing_time=spec.processing_time,
            )
            if spec.enrolled:
                self.governor.enroll(spec.chip_id)
        self.owner = {c.chip_id: c.owner for c in s.chips}
        self.stations = {sid: Station.create(sid, loc, self.fabric.scheme, self.seed) for sid, loc in s.stations}
        self.latency = LatencyModel(s.latency["extra_delay"], jitter=s.latency["jitter"], seed=self.seed)
        self.builder = ReportBuilder()
        self.graph = self.builder.graph  # the builder's ledger is the only ledger
        self.log = EventLog(s.hash_name)
        self.reports: list[QuarterlyReport] = []
        self.violations: list[dict[str, Any]] = []
        self.phase_index = 0
        self.now = 0
        self.runs: dict[str, TrainingRun] = {}
        self.streams: dict[str, InferenceStream] = {}
        self.heads: dict[str, list[tuple[int, list[str]]]] = {}
        self._queue: list[tuple[int, int, int, Callable, tuple]] = []
        self._seq = itertools.count()
        self._reported: set[tuple[str, ...]] = set()
        self._geo_rng = substream(self.seed, "geo")
        self._started = False

    # plumbing

    @property
    def phase(self) -> str:
        return PHASE_ORDER[self.phase_index]

    @property
    def checks(self) -> frozenset[str]:
        return PHASE_CHECKS[self.phase]

    def quarter(self, t_us: int | None = None) -> int:
        return (self.now if t_us is None else t_us) // self.q_us + 1

    def emit(self, actor: str, kind: str, payload: dict[str, Any] | None = None):
        entry = self.log.append(self.now, actor, kind, payload)
        report = self.builder.feed(entry)
        if report is not None:
            self.reports.append(report)
        return entry

    def violation(self, actor: str, kind: str, rule: str, **detail: Any) -> None:
        payload = {"kind": kind, "rule": rule, **detail}
        self.violations.append({"t_us": self.now, **payload})
        self.emit(actor, "violation", payload)

    def schedule(self, t_us: int, prio: int, fn: Callable, *args: Any) -> None:
        heapq.heappush(self._queue, (t_us, prio, next(self._seq), fn, args))

    def add_node(self, actor: str, node: ComputeNode) -> str:
        self.emit(actor, "ledger_node", {"record": node.to_record()})
        return node.node_id

    def _heads(self, model: str) -> list[str]:
        for t, ids in reversed(self.heads.get(model, ())):
            if t <= self.now:
                return list(ids)
        return []

    # lifecycle

    def start(self, until_us: int) -> None:
        s = self.scenario
        self._started = True
        self.until_us = until_us
        self.emit(
            "sim",
            "sim_start",
            {
                "scenario": s.name,
                "scenario_digest": digest(s.source, s.hash_name).hex(),
                "seed": self.seed,
                "until_us": until_us,
                "policy": self.config.to_dict(),
                "reporting": {
                    "quarter_us": self.q_us,
                    "joules_per_flop": str(s.reporting.joules_per_flop),
                    "currency_per_flop": str(s.reporting.currency_per_flop),
                },
                "governance": {
                    "policy_id": s.governance.policy_id,
                    "governors": list(s.governance.governors),
                    "threshold": s.governance.threshold,
                },
            },
        )
        for spec in s.chips:
            self.emit("fabric", "chip_provisioned", {"chip": spec.chip_id, "owner": spec.owner, "capacity": spec.capacity, "enrolled": spec.enrolled})
        for a, b in s.links:
            self._link(a, b)
        for phase, t in s.phases:
            self.schedule(t, _P_PHASE, self._phase_event, phase)
        for w in sorted(s.workloads, key=lambda w: (w.at_us, w.index)):
            handler = getattr(self, f"_on_{w.kind}")
            self.schedule(w.at_us, _P_CAPS if w.kind == "cap_adjustment" else _P_WORK, handler, w)
        k = 1
        while k * self.q_us <= until_us:
            self.schedule(k * self.q_us, _P_QUARTER, self._quarter_end, k)
            k += 1

    def run(self, until_s: Any = None) -> tuple[EventLog, list[QuarterlyReport]]:
        if until_s is not None:
            until_us = to_micros(until_s)
        elif self.scenario.until_us is not None:
            until_us = self.scenario.until_us
        else:
            until_us = DEFAULT_UNTIL_S * MICROS
        self.start(until_us)
        while self._queue and self._queue[0][0] <= until_us:
            t, _, _, fn, args = heapq.heappop(self._queue)
            self.now = t
            fn(*args)
        self.now = max(self.now, until_us)
        if "registration" in self.checks:
            self._audit(self.quarter(), final=True)
        self.emit("sim", "sim_end", {"violations": len(self.violations), "reports": len(self.reports)})
        return self.log, self.reports

    def emit_report(self, period: int) -> QuarterlyReport:
        if period < 1 or period * self.q_us > self.now or period > len(self.reports):
            raise PeriodOpen(f"period {period} is not closed at t={self.now}us")
        return self.reports[period - 1]

    # phases and caps

    def _phase_event(self, phase: str) -> None:
        self.advance_phase(phase)

    def advance_phase(self, phase: str) -> None:
        if phase not in PHASE_ORDER or PHASE_ORDER.index(phase) != self.phase_index + 1:
            raise PhaseOrderViolation(f"cannot move from {self.phase} to {phase}")
        self.phase_index += 1
        checks = self.checks
        self.emit("agency", "phase_advanced", {"phase": phase, "checks": sorted(checks)})
        if "license_caps" in checks:
            self.governor.enforce_caps = True
        if "speed_limit" in checks:
            self.fabric.speed_limit = self.config.inference_cap
        if phase == "national_oversight":
            for run in self.runs.values():
                self._maybe_register(run.model, run.lab, self._declared_total(run), Fraction(0))
            self._verify_clusters()
        if phase == "international_oversight":
            for entry in self.governor.registry.entries:
                self._mirror(entry)

    def _on_cap_adjustment(self, w: Workload) -> None:
        if "agency_cap_adjustment" not in self.checks:
            self.emit("agency", "cap_adjustment_rejected", {"reason": "phase", "phase": self.phase})
            return
        c = self.config
        tc = w.get("training_cap", c.training_cap)
        ic = w.get("inference_cap", c.inference_cap)
        try:
            new = replace(
                c,
                training_cap=tc,
                inference_cap=ic,
                harbor_training=min(c.harbor_training, tc // 10),
                harbor_rate=min(c.harbor_rate, ic // 10),
            )
        except ValueError as exc:
            self.emit("agency", "cap_adjustment_rejected", {"reason": "invalid", "detail": str(exc)})
            return
        self.config = new
        self.governor.set_config(new)
        if "speed_limit" in self.checks:
            self.fabric.speed_limit = ic
        self.emit("agency", "cap_adjusted", {"policy": new.to_dict()})

    # topology

    def _link(self, a: str, b: str) -> None:
        permit = None
        if frozenset((a, b)) in self.scenario.permitted_links:
            permit = self.governor.issue_link_permit(self.enforcer, a, b)
        try:
            link = self.fabric.connect(a, b, permit)
        except FabricError as exc:
            self.emit(self.owner[a], "link_refused", {"a": a, "b": b, "reason": exc.reason, "detail": str(exc)})
            return
        self.emit(self.owner[a], "link", {"a": link.a, "b": link.b, "permit_id": link.permit_id})

    def _verify_clusters(self) -> None:
        for cluster in self.fabric.clusters():
            if cluster.aggregate_rate <= self.config.cluster_cap:
                continue
            members = set(cluster.member_chips)
            unpermitted = [l for l in self.fabric.links_within(members) if l.permit_id is None]
            unenrolled = sorted(members - self.governor.enrolled)
            key = ("cluster", *sorted(members))
            if (unpermitted or unenrolled) and key not in self._reported:
                self._reported.add(key)
                self.violation(
                    "agency",
                    "unverified_cluster",
                    "cluster_verification",
                    members=sorted(members),
                    aggregate_rate=cluster.aggregate_rate,
                    unenrolled=unenrolled,
                )

    # registration

    def _declared_total(self, run: TrainingRun) -> int:
        return run.base + run.declared_plan

    def _maybe_register(self, model: str, lab: LabSpec, training: int, rate: Fraction) -> None:
        if "registration" not in self.checks or not lab.registers or model in self.governor.registry:
            return
        if not registration_required(training, rate, self.config):
            return
        entry = RegistryEntry(model, lab.developer, training, rate, self.quarter())
        receipt = self.governor.register_training_run(entry)
        self.emit(lab.lab_id, "registered", {"registry": "national", "entry": entry.to_dict(), "receipt": receipt.entry_hash})
        if "registry_mirror" in self.checks:
            self._mirror(entry)

    def _mirror(self, entry: RegistryEntry) -> None:
        if any(e == entry for e in self.agency_registry.entries):
            return
        receipt = self.agency_registry.register(entry)
        self.emit("international_agency", "registered", {"registry": "international_agency", "entry": entry.to_dict(), "receipt": receipt.entry_hash})

    def _audit(self, period: int, final: bool = False) -> None:
        rates = {st.model: st.peak_rate for st in self.streams.values() if st.peak_rate}
        running = {r.model for r in self.runs.values() if r.status == "running"}
        for f in self.governor.audit(self.graph, rates):
            if f.rule == "declaration_divergence" and f.model_id in running and not final:
                continue
            key = (f.rule, f.model_id)
            if key in self._reported:
                continue
            self._reported.add(key)
            self.violation("custodian", f.rule, "registration", model=f.model_id, detail=f.detail, period=period)

    # training

    def _on_training(self, w: Workload) -> None:
        lab = self.scenario.lab(w["lab"])
        run_id = f"run-{len(self.runs) + 1:04d}"
        kind = NodeKind.FINE_TUNE if w.get("fine_tune", False) else NodeKind.TRAINING
        run = TrainingRun(
            run_id,
            lab,
            w["model"],
            w["chips"],
            w["declared_plan"],
            w["actual_flop"],
            w["license_flop"],
            w.get("steps_per_license", 1),
            kind,
            w.get("attest", True),
        )
        parents = [h for m in w.get("parent_models", ()) for h in self._heads(m)]
        frontier = sorted(set(parents) | set(self._heads(run.model)))
        inherited = self.graph.flop_of(self.graph.tally_set(frontier))
        if self.governor.cumulative(run.model) == 0:
            self.governor.record_prior_compute(run.model, inherited)
        run.base = self.governor.cumulative(run.model)
        self.runs[run_id] = run
        projected = run.base + run.declared_plan
        self.emit(
            lab.lab_id,
            "training_requested",
            {"run": run_id, "model": run.model, "declared_plan": run.declared_plan, "projected": projected, "chips": list(run.chips), "parents": list(w.get("parent_models", ()))},
        )
        if "pause_plan" in self.checks and projected > self.config.training_cap:
            run.status = "refused"
            self.emit("governor", "training_refused", {"run": run_id, "model": run.model, "reason": "pause", "projected": projected, "cap": self.config.training_cap})
            return
        self._maybe_register(run.model, lab, projected, Fraction(0))
        if w.get("human_data", False):
            hid = self.add_node(lab.lab_id, ComputeNode(f"{run_id}/human", NodeKind.HUMAN_INPUT, 0, self.now / MICROS, human_cutoff=True))
            frontier.append(hid)
        run.frontier = frontier
        if run.attest:
            run.attested = AttestedRun(self.fabric.chip(run.chips[0]), f"proof-{run_id}", self.scenario.hash_name)
        self._request_training_license(run)

    def _request_training_license(self, run: TrainingRun) -> None:
        remaining = run.actual_flop - run.executed
        if remaining <= 0:
            self._finish_training(run, "complete")
            return
        quota = min(run.license_flop, remaining)
        per_chip = math.ceil(quota / len(run.chips))
        duration = max(math.ceil(per_chip * MICROS / self.fabric.chips[c].capacity) for c in run.chips)
        window = (self.now, self.now + 2 * duration + MICROS)
        try:
            grant = self.governor.request_license(run.lab.lab_id, run.chips, quota, window, model_id=run.model)
        except LicenseDenied as exc:
            self._license_denied(run.run_id, run.model, exc)
            self._finish_training(run, "denied")
            return
        except UnknownChip as exc:
            self.emit("governor", "license_denied", {"run": run.run_id, "model": run.model, "reason": "unknown_chip", "detail": str(exc)})
            self._finish_training(run, "denied")
            return
        run.licenses += 1
        run.grant = grant
        run.left = {c: grant.allotment(c) for c in run.chips}
        run.step_in_license = 0
        self.emit(
            "governor",
            "license_granted",
            {
                "run": run.run_id,
                "model": run.model,
                "grant_id": grant.grant_id,
                "quota": quota,
                "license": run.licenses,
                "cumulative": self.governor.cumulative(run.model),
                "signers": sorted(grant.signatures),
            },
        )
        self._training_step(run)

    def _license_denied(self, subject: str, model: str, exc: Exception) -> None:
        if isinstance(exc, CapWouldBeExceeded):
            reason = exc.reason
        elif isinstance(exc, TargetWithheld):
            reason = "withheld"
        elif isinstance(exc, InsufficientSignatures):
            reason = "insufficient_signatures"
        else:
            reason = getattr(exc, "reason", type(exc).__name__)
        self.emit(
            "governor",
            "license_denied",
            {"subject": subject, "model": model, "reason": reason, "detail": str(exc), "cumulative": self.governor.cumulative(model)},
        )

    def _training_step(self, run: TrainingRun) -> None:
        if run.status != "running":
            return
        steps_left = run.steps - run.step_in_license
        end = self.now
        fresh: list[str] = []
        code_hash = digest(f"code:{run.model}".encode(), self.scenario.hash_name)
        for cid in run.chips:
            left = run.left.get(cid, 0)
            if left == 0:
                continue
            flop = left if steps_left <= 1 else math.ceil(left / steps_left)
            try:
                rec = self.fabric.execute(cid, flop, run.grant, now_us=self.now, inference=False)
            except (FabricError, LicenseInvalid) as exc:
                run.left[cid] = 0
                self.emit(cid, "execution_refused", {"run": run.run_id, "chip": cid, "reason": getattr(exc, "reason", type(exc).__name__), "detail": str(exc)})
                continue
            run.left[cid] -= flop
            run.executed += flop
            node_id = f"{run.run_id}/l{run.licenses:03d}/s{run.step_in_license:03d}/{cid}"
            self.add_node(cid, ComputeNode(node_id, run.kind, flop, rec.end_us / MICROS, tuple(run.frontier), model_id=run.model))
            self.emit(cid, "execute", {"chip": cid, "grant": rec.grant_id, "flop": flop, "start_us": rec.start_us, "end_us": rec.end_us, "node": node_id, "purpose": "training", "balance": self.fabric.chips[cid].license_balance})
            if run.attested is not None:
                data_hash = digest(f"data:{run.model}:{run.licenses}:{run.step_in_license}:{cid}".encode(), self.scenario.hash_name)
                run.data_hashes.append(data_hash)
                run.attested.record(code_hash, data_hash, flop)
            fresh.append(node_id)
            end = max(end, rec.end_us)
        if not fresh:
            self._finish_training(run, "halted")
            return
        run.frontier = fresh
        self.heads.setdefault(run.model, []).append((end, fresh))
        run.step_in_license += 1
        if run.step_in_license >= run.steps or not any(run.left.values()):
            self.schedule(end, _P_WORK, self._request_training_license, run)
        else:
            self.schedule(end, _P_WORK, self._training_step, run)

    def _finish_training(self, run: TrainingRun, status: str) -> None:
        run.status = status
        tc = self.graph.training_compute(run.model) if run.model in self.graph.model_index else 0
        if status == "complete":
            self.emit(run.lab.lab_id, "training_complete", {"run": run.run_id, "model": run.model, "executed": run.executed, "training_compute": tc})
        else:
            halted = sorted(c for c in run.chips if self.fabric.chips[c].usable_balance(self.now) == 0)
            for c in halted:
                self.fabric.chips[c].halted = True
            self.emit("governor", "halt", {"run": run.run_id, "model": run.model, "reason": status, "executed": run.executed, "training_compute": tc, "chips": halted})
        if run.attested is not None and run.attested.steps:
            self._attest(run)

    def _attest(self, run: TrainingRun) -> None:
        proof = run.attested.seal(substream(self.seed, f"attest:{run.run_id}"))
        code_hash = digest(f"code:{run.model}".encode(), self.scenario.hash_name)
        result = self.governor.verify_attestation(proof, [code_hash], run.data_hashes, run.executed)
        self.emit(
            run.chips[0],
            "attestation",
            {
                "run": run.run_id,
                "proof_id": proof.proof_id,
                "ok": result.ok,
                "reason": result.reason.value,
                "steps": len(proof.steps),
                "total_flop": proof.total_flop,
                "digest": digest(proof.to_bytes(), self.scenario.hash_name).hex(),
            },
        )
        if not result.ok:
            self.violation("governor", "attestation_failed", "attested_training", run=run.run_id, reason=result.reason.value)

    # inference

    def _on_inference(self, w: Workload) -> None:
        lab = self.scenario.lab(w["lab"])
        sid = f"stream-{len(self.streams) + 1:04d}"
        period = Fraction(MICROS) / w["hz"]
        st = InferenceStream(sid, lab, w["model"], w["chips"], w["marginal_flop"], round(period), w["outputs"], w["declared_rate"])
        self.streams[sid] = st
        self.emit(lab.lab_id, "inference_requested", {"stream": sid, "model": st.model, "hz": w["hz"], "marginal_flop": st.marginal_flop, "outputs": st.outputs, "declared_rate": st.declared_rate})
        tc = self.graph.training_compute(st.model) if st.model in self.graph.model_index else 0
        self._maybe_register(st.model, lab, tc, st.declared_rate)
        window = (self.now, self.now + st.period_us * (st.outputs + 1) + MICROS)
        try:
            st.grant = self.governor.request_license(
                lab.lab_id, st.chips, st.marginal_flop * st.outputs, window,
                model_id=st.model, projected_rate=st.declared_rate, purpose="inference",
            )
        except LicenseDenied as exc:
            st.status = "denied"
            self._license_denied(sid, st.model, exc)
            return
        except UnknownChip as exc:
            st.status = "denied"
            self.emit("governor", "license_denied", {"subject": sid, "model": st.model, "reason": "unknown_chip", "detail": str(exc)})
            return
        self.emit("governor", "license_granted", {"stream": sid, "model": st.model, "grant_id": st.grant.grant_id, "quota": st.grant.quota, "signers": sorted(st.grant.signatures)})
        self._output(st)

    def _output(self, st: InferenceStream) -> None:
        if st.status != "running":
            return
        i = st.emitted
        n = len(st.chips)
        base, extra = divmod(st.marginal_flop, n)
        parents = tuple(self._heads(st.model))
        oid = f"{st.stream_id}/o{i:06d}"
        parts = []
        for k, cid in enumerate(st.chips):
            flop = base + (1 if k < extra else 0)
            if flop == 0:
                continue
            try:
                rec = self.fabric.execute(cid, flop, st.grant, now_us=self.now, window_us=st.period_us, inference=True)
            except SpeedLimitExceeded as exc:
                self.violation(cid, "speed_limit_exceeded", "inference_cap", stream=st.stream_id, model=st.model, chip=cid, detail=str(exc), limit=self.fabric.speed_limit)
                self._halt_stream(st, "speed_limit")
                return
            except (FabricError, LicenseInvalid, ValueError) as exc:
                self.emit(cid, "execution_refused", {"stream": st.stream_id, "chip": cid, "reason": getattr(exc, "reason", type(exc).__name__), "detail": str(exc)})
                self._halt_stream(st, "refused")
                return
            node_id = oid if n == 1 else f"{oid}/{cid}"
            self.add_node(cid, ComputeNode(node_id, NodeKind.INFERENCE, flop, rec.end_us / MICROS, parents, output_id=oid if n == 1 else None))
            self.emit(cid, "execute", {"chip": cid, "grant": rec.grant_id, "flop": flop, "start_us": rec.start_us, "end_us": rec.end_us, "node": node_id, "purpose": "inference", "balance": self.fabric.chips[cid].license_balance})
            parts.append((node_id, rec.end_us))
        emitted_us = max(e for _, e in parts)
        if n > 1:
            emitted_us += 1
            self.add_node(st.lab.lab_id, ComputeNode(oid, NodeKind.INFERENCE, 0, emitted_us / MICROS, tuple(p for p, _ in parts), output_id=oid))
        self.emit(st.lab.lab_id, "output", {"stream": st.stream_id, "output_id": oid, "model": st.model, "index": i, "emitted_us": emitted_us})
        if st.last_output is not None:
            rate = self.graph.inference_rate([st.last_output, oid])
            st.peak_rate = max(st.peak_rate, rate)
            if "speed_limit" in self.checks and rate > self.config.inference_cap:
                self.violation("custodian", "inference_cap_exceeded", "inference_cap", stream=st.stream_id, model=st.model, rate=rate)
                self._halt_stream(st, "inference_cap")
                return
        st.last_output = oid
        st.emitted += 1
        if st.emitted < st.outputs:
            self.schedule(self.now + st.period_us, _P_WORK, self._output, st)
        else:
            st.status = "complete"
            self.emit(st.lab.lab_id, "stream_complete", {"stream": st.stream_id, "outputs": st.emitted, "peak_rate": st.peak_rate})

    def _halt_stream(self, st: InferenceStream, reason: str) -> None:
        st.status = "halted"
        withheld = False
        if st.grant is not None:
            withheld = self.governor.withhold(self.enforcer, st.grant.grant_id)
        self.emit("governor", "halt", {"stream": st.stream_id, "model": st.model, "reason": reason, "chips": list(st.chips), "grant_withheld": withheld, "outputs": st.emitted})

    # geolocation and off-switch

    def _on_relocate(self, w: Workload) -> None:
        chip = self.fabric.chip(w["chip"])
        chip.location = (float(w["location"][0]), float(w["location"][1]))
        self.emit(self.owner[chip.chip_id], "relocated", {"chip": chip.chip_id, "location": list(chip.location)})

    def _on_geo_check(self, w: Workload) -> None:
        chip = self.fabric.chip(w["chip"])
        ids = w.get("stations") or sorted(self.stations)
        stations = [self.stations[s] for s in ids]
        try:
            bounds = measure_bounds(stations, chip, self.latency, self.fabric.keys, rng=self._geo_rng)
        except NoResponse:
            self.violation("agency", "geolocation_unanswered", "location_verification", chip=chip.chip_id)
            return
        region = locate(bounds)
        try:
            verdict = verify_within(region, self.scenario.zones[w["zone"]]).value
        except EmptyRegion:
            verdict = "empty_region"
        self.fabric.record_location_verdict(chip.chip_id, self.now, verdict)
        self.emit("agency", "geo_verdict", {"chip": chip.chip_id, "zone": w["zone"], "verdict": verdict, "bounds": [[s.station_id, km] for s, km in bounds]})
        if verdict in ("confirmed_outside", "empty_region"):
            self.violation("agency", "geolocation", "location_verification", chip=chip.chip_id, verdict=verdict, zone=w["zone"])
            self._withhold(self.enforcer, chip.chip_id)

    def _on_withhold(self, w: Workload) -> None:
        self._withhold(w["governor"], w["target"])

    def _withhold(self, governor_id: str, target: str) -> None:
        balances = {c: self.fabric.chips[c].license_balance for c in self.governor.chips_of(target)}
        try:
            changed = self.governor.withhold(governor_id, target)
        except (UnknownTarget, GovernorError) as exc:
            self.emit(governor_id, "withhold_failed", {"target": target, "reason": type(exc).__name__})
            return
        self.emit(governor_id, "withhold", {"target": target, "changed": changed, "balances": balances})

    # quarter close

    def _quarter_end(self, k: int) -> None:
        start, end = (k - 1) * self.q_us, k * self.q_us
        checks = self.checks
        if "custodian_reporting" in checks:
            dest = ["national_agency"]
            if "dual_reporting" in checks:
                dest.append("international_agency")
            if "direct_agency_telemetry" in checks:
                dest.append("international_agency_direct")
            for cid in sorted(self.fabric.chips):
                try:
                    rep = self.governor.collect_telemetry(cid, (start, end))
                except NoResponse as exc:
                    self.violation("custodian", "telemetry_missing", "custodian_reporting", chip=cid, detail=str(exc), period=k)
                    continue
                self.emit(cid, "telemetry", {"chip": cid, "period": k, "executed_flop": rep.executed_flop, "peak_rate": rep.peak_rate, "destinations": dest})
        if "cluster_verification" in checks:
            self._verify_clusters()
        if "registration" in checks:
            self._audit(k)
        self.emit("custodian", "quarter_end", {"period": k, "start_us": start, "end_us": end})


def run(scenario: Scenario, until: Any = None, seed: int | None = None) -> tuple[EventLog, list[QuarterlyReport]]:
    return Simulation(scenario, seed).run(until)
