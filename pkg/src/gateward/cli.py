"""``gateward`` command line.

Exit codes: 0 clean, 2 violations logged (or a check failed), 1 error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Any, Sequence

from .canonical import canonical_json, exact_int, exact_number, loads_exact, to_jsonable
from .ledger import CausalGraph
from .policy import (
    Incident,
    PolicyConfig,
    SystemDossier,
    check_caps,
    check_safe_harbor,
    classify_tier,
    evaluate_liability,
    injunction_check,
)

EXIT_OK, EXIT_ERROR, EXIT_VIOLATIONS = 0, 1, 2


def _emit(obj: Any) -> None:
    sys.stdout.write(canonical_json(to_jsonable(obj)).decode("utf-8") + "\n")


def _read_json(path: str) -> Any:
    text = sys.stdin.read() if path == "-" else Path(path).read_text(encoding="utf-8")
    return loads_exact(text)


def _config(args) -> PolicyConfig:
    return PolicyConfig.from_dict(_read_json(args.policy)) if getattr(args, "policy", None) else PolicyConfig()


# run / report


def _scenario_path(name: str) -> Path:
    from .sim import shipped_scenarios

    p = Path(name)
    if p.exists():
        return p
    shipped = shipped_scenarios()
    if name in shipped:
        return shipped[name]
    raise FileNotFoundError(f"no scenario file or shipped scenario named {name!r} (shipped: {', '.join(shipped)})")


def cmd_run(args) -> int:
    from .sim import Simulation, load_scenario

    scenario = load_scenario(_scenario_path(args.scenario))
    sim = Simulation(scenario, args.seed)
    log, reports = sim.run(args.until)
    if args.log:
        log.write(args.log)
    if args.reports:
        Path(args.reports).write_bytes(canonical_json([r.to_dict() for r in reports]) + b"\n")
    _emit(
        {
            "scenario": scenario.name,
            "seed": sim.seed,
            "events": len(log),
            "chain_hash": log.chain_hash,
            "reports": len(reports),
            "violations": [{k: v for k, v in viol.items()} for viol in sim.violations],
        }
    )
    return EXIT_VIOLATIONS if sim.violations else EXIT_OK


def cmd_report(args) -> int:
    from .sim import EventLog, reports_from_log

    log = EventLog.read(args.logfile)
    reports = reports_from_log(log)
    if args.period is not None:
        reports = [r for r in reports if r.period == args.period]
    for r in reports:
        _emit(r.to_dict())
    return EXIT_VIOLATIONS if log.of_kind("violation") else EXIT_OK


# ledger


def cmd_ledger(args) -> int:
    graph = CausalGraph.read(args.file)
    if args.ledger_cmd == "validate":
        _emit({"nodes": len(graph), "models": sorted(graph.model_index), "outputs": sorted(graph.output_index)})
    elif args.ledger_cmd == "tally":
        out: dict[str, Any] = {}
        for m in args.model or ():
            out.setdefault("training_compute", {})[m] = graph.training_compute(m)
        for o in args.output or ():
            out.setdefault("output_compute", {})[o] = graph.output_compute(o)
        if not out:
            out["training_compute"] = {m: graph.training_compute(m) for m in sorted(graph.model_index)}
        _emit(out)
    elif args.ledger_cmd == "rate":
        stream = graph.output_stream(args.outputs)
        _emit(
            {
                "inference_rate": graph.inference_rate(args.outputs),
                "stream": [
                    {"output_id": r.output_id, "emitted_at": r.emitted_at, "marginal_flop": r.marginal_flop}
                    for r in stream
                ],
            }
        )
    return EXIT_OK


# policy


def cmd_policy(args) -> int:
    config = _config(args)
    if args.policy_cmd == "caps":
        decision = check_caps(exact_int(args.training), exact_number(args.rate), config)
        _emit({"allowed": decision.allowed, "reasons": list(decision.reasons)})
        return EXIT_OK if decision.allowed else EXIT_VIOLATIONS
    dossier = SystemDossier.from_dict(_read_json(args.dossier))
    if args.policy_cmd == "classify":
        tier = classify_tier(dossier, config)
        verdict, why = injunction_check(dossier, config)
        _emit({**tier.to_dict(), "injunction": verdict.value, "injunction_reason": why})
    elif args.policy_cmd == "harbor":
        _emit({"model_id": dossier.model_id, "harbors": sorted(h.value for h in check_safe_harbor(dossier, config))})
    elif args.policy_cmd == "liability":
        incident = Incident.from_dict(_read_json(args.incident))
        harbors = check_safe_harbor(dossier, config) if args.harbors is None else args.harbors
        _emit(evaluate_liability(dossier, harbors, incident).to_dict())
    return EXIT_OK


# geoverify


def cmd_geoverify(args) -> int:
    from .geo import EmptyRegion, distance_bound, locate, regular_polygon, verify_within

    if args.geo_cmd == "bound":
        _emit({"bound_km": distance_bound(args.rtt, args.allowance, mode=args.mode)})
        return EXIT_OK
    spec = _read_json(args.file)
    bounds = []
    for m in spec["measurements"]:
        km = m["bound_km"] if "bound_km" in m else distance_bound(float(m["rtt"]), float(m.get("allowance", 0.0)), mode=spec.get("mode", "round_trip"))
        bounds.append(((float(m["location"][0]), float(m["location"][1])), float(km)))
    if "zone" in spec:
        zone = [(float(x), float(y)) for x, y in spec["zone"]]
    else:
        c = spec["zone_circle"]
        zone = regular_polygon((float(c["center"][0]), float(c["center"][1])), float(c["radius_km"]), int(c.get("sides", 16)))
    region = locate(bounds)
    try:
        verdict = verify_within(region, zone).value
    except EmptyRegion:
        verdict = "empty_region"
    _emit({"verdict": verdict, "witness": region.witness(), "bounds_km": [km for _, km in bounds]})
    return EXIT_OK if verdict != "confirmed_outside" and verdict != "empty_region" else EXIT_VIOLATIONS


# governor


def cmd_governor(args) -> int:
    from .governor import GovernorService, Registry, audit_registration

    if args.gov_cmd == "serve":
        from .fabric import Fabric

        fabric = Fabric(seed=args.seed)
        for i in range(args.chips):
            fabric.provision_chip(exact_int(args.capacity), chip_id=f"chip-{i + 1:05d}")
        service = GovernorService(fabric, seed=args.seed)
        for cid in fabric.chips:
            service.enroll(cid)
        for line in sys.stdin.buffer:
            if line.strip():
                sys.stdout.write(service.handle(line.strip()).decode("utf-8") + "\n")
                sys.stdout.flush()
        return EXIT_OK
    if args.gov_cmd == "registry":
        reg = Registry.load(args.file)
        filters = {"model_id": args.model} if args.model else {}
        if args.developer:
            filters["developer_id"] = args.developer
        for entry in reg.query(**filters):
            _emit(entry.to_dict())
        return EXIT_OK
    if args.gov_cmd == "audit":
        graph = CausalGraph.read(args.ledger)
        reg = Registry.load(args.registry) if args.registry else Registry()
        findings = audit_registration(graph, reg, _config(args))
        for f in findings:
            _emit({"model_id": f.model_id, "rule": f.rule, "detail": f.detail})
        return EXIT_VIOLATIONS if findings else EXIT_OK
    return EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gateward", description="Compute governance toolkit and simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and print a summary")
    p.add_argument("scenario", help="scenario file, or the name of a shipped scenario")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--until", type=float, default=None, help="simulation horizon in seconds")
    p.add_argument("--log", help="write the event log here")
    p.add_argument("--reports", help="write quarterly reports (JSON) here")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="rebuild quarterly reports from an event log")
    p.add_argument("logfile")
    p.add_argument("--period", type=int)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("ledger", help="compute ledger tallies")
    lsub = p.add_subparsers(dest="ledger_cmd", required=True)
    q = lsub.add_parser("validate")
    q.add_argument("file")
    q = lsub.add_parser("tally")
    q.add_argument("file")
    q.add_argument("--model", action="append")
    q.add_argument("--output", action="append")
    q = lsub.add_parser("rate")
    q.add_argument("file")
    q.add_argument("outputs", nargs="+")
    p.set_defaults(func=cmd_ledger)

    p = sub.add_parser("policy", help="risk tiers, caps, safe harbors, liability")
    psub = p.add_subparsers(dest="policy_cmd", required=True)
    for name in ("classify", "harbor", "liability"):
        q = psub.add_parser(name)
        q.add_argument("dossier")
        q.add_argument("--policy", help="PolicyConfig JSON")
        if name == "liability":
            q.add_argument("--incident", required=True)
            q.add_argument("--harbors", nargs="*", default=None, help="established harbors (default: derived)")
    q = psub.add_parser("caps")
    q.add_argument("--training", required=True)
    q.add_argument("--rate", default="0")
    q.add_argument("--policy")
    p.set_defaults(func=cmd_policy)

    p = sub.add_parser("geoverify", help="distance bounds and zone verdicts")
    gsub = p.add_subparsers(dest="geo_cmd", required=True)
    q = gsub.add_parser("bound")
    q.add_argument("--rtt", type=float, required=True, help="round trip in seconds")
    q.add_argument("--allowance", type=float, default=0.0)
    q.add_argument("--mode", choices=("round_trip", "literal"), default="round_trip")
    q = gsub.add_parser("verify")
    q.add_argument("file", help="JSON with measurements and zone or zone_circle")
    p.set_defaults(func=cmd_geoverify)

    p = sub.add_parser("governor", help="licensing service and registry tools")
    vsub = p.add_subparsers(dest="gov_cmd", required=True)
    q = vsub.add_parser("serve", help="answer wire messages from stdin")
    q.add_argument("--chips", type=int, default=1)
    q.add_argument("--capacity", default="1e15")
    q.add_argument("--seed", type=int, default=0)
    q = vsub.add_parser("audit")
    q.add_argument("ledger")
    q.add_argument("--registry")
    q.add_argument("--policy")
    q = vsub.add_parser("registry")
    rsub = q.add_subparsers(dest="registry_cmd", required=True)
    r = rsub.add_parser("query")
    r.add_argument("file")
    r.add_argument("--model")
    r.add_argument("--developer")
    p.set_defaults(func=cmd_governor)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # any scenario, ledger, policy or geo error is exit 1
        sys.stderr.write(f"gateward: error: {type(exc).__name__}: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
