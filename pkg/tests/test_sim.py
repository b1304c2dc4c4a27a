import copy
import json
from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gateward.canonical import canonical_json
from gateward.policy import PolicyConfig
from gateward.sim import (
    PHASE_CHECKS,
    PHASE_ORDER,
    EventLog,
    LogCorrupted,
    ParseError,
    PeriodOpen,
    PhaseOrderViolation,
    SchemaViolation,
    Simulation,
    build_scenario,
    load_scenario,
    parse_scenario,
    reports_from_log,
    shipped_scenarios,
)

DAY = 86_400
ALL_PHASES = [{"phase": p, "at": i} for i, p in enumerate(PHASE_ORDER[1:])]


def mini(**over):
    obj = {
        "schema_version": 1,
        "name": "mini",
        "seed": 5,
        "until": 90 * DAY,
        "labs": [{"id": "lab", "developer": "Lab"}],
        "chips": [{"id": "c1", "owner": "lab", "capacity": "1e20"}],
        "phases": ALL_PHASES,
        "workloads": [],
    }
    obj.update(over)
    return build_scenario(obj)


def training(model="m", plan="3e25", **kw):
    return {"kind": "training", "at": 10, "lab": "lab", "model": model, "chips": ["c1"], "declared_plan": plan, "license_flop": "1e25", **kw}


def kinds(log, kind):
    return [e.payload for e in log.of_kind(kind)]


def test_minimal_scenario_defaults():
    s = parse_scenario(json.dumps({"schema_version": 1, "name": "empty"}))
    assert s.policy == PolicyConfig()
    assert s.governance.threshold == 2 and len(s.governance.governors) == 3
    log, reports = Simulation(s).run(10)
    assert [e.kind for e in log] == ["sim_start", "sim_end"]


def test_bad_inputs():
    with pytest.raises(ParseError):
        parse_scenario(b"{nope")
    with pytest.raises(SchemaViolation) as exc:
        parse_scenario(json.dumps({"schema_version": 1, "name": "x", "chips": [{"id": "a"}]}))
    assert exc.value.path == "$.chips[0]"
    with pytest.raises(SchemaViolation):
        mini(phases=[{"phase": "national_oversight", "at": 0}])
    with pytest.raises(SchemaViolation):
        mini(workloads=[{"kind": "teleport", "at": 0}])


def test_phase_checks_are_cumulative():
    for a, b in zip(PHASE_ORDER, PHASE_ORDER[1:]):
        assert PHASE_CHECKS[a] < PHASE_CHECKS[b]


def test_phase_order_enforced_at_runtime():
    sim = Simulation(mini(phases=[]))
    sim.start(10)
    sim.advance_phase("pause")
    with pytest.raises(PhaseOrderViolation):
        sim.advance_phase("international_oversight")
    with pytest.raises(PhaseOrderViolation):
        sim.advance_phase("pause")


def test_energy_and_cost():
    s = mini(workloads=[training("m", "3e25", license_flop="3e25")], until=100 * DAY)
    sim = Simulation(s)
    log, (report,) = sim.run()
    assert report.executed_flop == 3 * 10**25
    assert report.energy_joules == Decimal("3e13")
    assert report.financial_cost == Decimal("3e7")
    assert report.models["m"].training_compute == 3 * 10**25
    assert report.registration_complete


def test_idle_quarter():
    log, (report,) = Simulation(mini(until=90 * DAY)).run()
    assert report.executed_flop == 0 and report.energy_joules == 0 and report.violations == ()


def test_period_open():
    sim = Simulation(mini(until=30 * DAY))
    sim.run()
    with pytest.raises(PeriodOpen):
        sim.emit_report(1)


def test_unregistered_run_is_violation():
    labs = [{"id": "lab", "developer": "Lab", "registers": False}]
    sim = Simulation(mini(labs=labs, workloads=[training()]))
    log, (report,) = sim.run()
    assert report.missing_registrations == ("m",)
    assert [v["kind"] for v in report.violations] == ["registration_required"]


def test_small_run_needs_no_registration():
    sim = Simulation(mini(workloads=[training(plan="1e24", license_flop="1e24")]))
    log, (report,) = sim.run()
    assert report.registration_required == () and not sim.violations


def test_mirror_to_agency_registry():
    sim = Simulation(mini(workloads=[training()]))
    sim.run()
    assert [e.model_id for e in sim.agency_registry.entries] == ["m"]
    regs = kinds(sim.log, "registered")
    assert {r["registry"] for r in regs} == {"national", "international_agency"}


def test_pause_refuses_plans_over_cap():
    sim = Simulation(mini(workloads=[training(plan="2e27")]))
    log, _ = sim.run()
    (refusal,) = kinds(log, "training_refused")
    assert refusal["reason"] == "pause"
    assert not log.of_kind("license_granted")


def test_cap_adjustment_only_when_enforcing():
    wl = [{"kind": "cap_adjustment", "at": 5, "training_cap": "2e25"}, training(plan="3e25", license_flop="1e25")]
    sim = Simulation(mini(workloads=wl))
    log, _ = sim.run()
    assert sim.config.training_cap == 2 * 10**25
    assert sim.config.harbor_training == 2 * 10**24
    assert kinds(log, "training_refused")[0]["reason"] == "pause"
    early = mini(workloads=wl, phases=ALL_PHASES[:2])
    log2, _ = Simulation(early).run()
    assert kinds(log2, "cap_adjustment_rejected")[0]["reason"] == "phase"


def test_denial_logged_with_reason():
    wl = [training(plan="1e25", actual_flop="3e25", license_flop="1e25"), {"kind": "cap_adjustment", "at": 5, "training_cap": "2e25"}]
    sim = Simulation(mini(workloads=wl))
    log, _ = sim.run()
    assert len(log.of_kind("license_granted")) == 2
    assert kinds(log, "license_denied")[0]["reason"] == "training_cap"


def test_withhold_workload_halts_training():
    wl = [
        training(plan="5e24", license_flop="1e23", steps_per_license=2),
        {"kind": "withhold", "at": 30, "governor": "gov-2", "target": "m"},
    ]
    sim = Simulation(mini(workloads=wl))
    log, _ = sim.run()
    (w,) = kinds(log, "withhold")
    assert w["changed"] and w["balances"]["c1"] >= 0
    assert kinds(log, "license_denied")[-1]["reason"] == "withheld"


def test_report_equals_log_rebuild(tmp_path):
    s = load_scenario(shipped_scenarios()["compliant_lab"])
    sim = Simulation(s)
    log, reports = sim.run()
    path = tmp_path / "log.jsonl"
    log.write(path)
    rebuilt = reports_from_log(EventLog.read(path))
    assert [r.to_bytes() for r in rebuilt] == [r.to_bytes() for r in reports]


def test_log_tamper_detected(tmp_path):
    log, _ = Simulation(mini(workloads=[training()])).run()
    lines = log.to_bytes().splitlines()
    forged = lines[3].replace(b'"seq":3', b'"seq":4')
    assert forged != lines[3]
    with pytest.raises(LogCorrupted):
        EventLog.from_lines(lines[:3] + [forged] + lines[4:])
    with pytest.raises(LogCorrupted):
        EventLog.from_lines(lines[:-1])


@pytest.mark.parametrize("name", sorted(shipped_scenarios()))
def test_seed_changes_output(name):
    s = load_scenario(shipped_scenarios()[name])
    a, _ = Simulation(s).run()
    b, _ = Simulation(s, seed=s.seed + 1).run()
    assert a.chain_hash != b.chain_hash


@settings(max_examples=15, deadline=None)
@given(
    st.lists(st.integers(1, 40), min_size=1, max_size=4),
    st.integers(0, 2**16),
    st.integers(1, 3),
)
def test_cumulative_never_exceeds_cap(plans, seed, steps):
    cap = 10**26
    wl = [
        {"kind": "cap_adjustment", "at": 5, "training_cap": cap},
        *[training("m", str(p * 10**25), license_flop="1e25", steps_per_license=steps) for p in plans],
    ]
    for w, p in zip(wl[1:], plans):
        w["actual_flop"] = str(p * 10**25)
        w["declared_plan"] = "1e25"
    sim = Simulation(mini(workloads=wl, seed=seed))
    log, _ = sim.run()
    assert log.of_kind("cap_adjusted")
    assert sim.graph.training_compute("m") <= cap
    assert sim.governor.cumulative("m") <= cap


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 4))
def test_reached_phase_checks_stay_active(k):
    sim = Simulation(mini(phases=ALL_PHASES[:k]))
    log, _ = sim.run()
    seen = [frozenset(e.payload["checks"]) for e in log.of_kind("phase_advanced")]
    assert all(a < b for a, b in zip(seen, seen[1:]))
    assert sim.phase == PHASE_ORDER[k]
