#!/usr/bin/env python3
"""Run every shipped scenario, write its log and reports, and summarize."""

from __future__ import annotations

import argparse
import collections
from pathlib import Path

from gateward.canonical import canonical_json
from gateward.sim import EventLog, Simulation, load_scenario, reports_from_log, shipped_scenarios


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    for name, path in shipped_scenarios().items():
        sim = Simulation(load_scenario(path), args.seed)
        log, reports = sim.run()
        log_path = args.out / f"{name}.log.jsonl"
        log.write(log_path)
        (args.out / f"{name}.reports.json").write_bytes(canonical_json([r.to_dict() for r in reports]) + b"\n")

        # the reports must come back identically from the file alone
        rebuilt = reports_from_log(EventLog.read(log_path))
        same = [r.to_bytes() for r in rebuilt] == [r.to_bytes() for r in reports]

        counts = collections.Counter(e.kind for e in log)
        violations = collections.Counter(v["kind"] for v in sim.violations)
        print(f"{name}  seed={sim.seed}  events={len(log)}  chain={log.chain_hash[:16]}  reports_from_log={'ok' if same else 'MISMATCH'}")
        print(f"  grants={counts['license_granted']}  denials={counts['license_denied']}  halts={counts['halt']}  withholds={counts['withhold']}")
        for r in reports:
            print(f"  Q{r.period}: executed={r.executed_flop:.3e} FLOP  energy={r.energy_joules:.4e} J  missing_registrations={list(r.missing_registrations)}")
        print(f"  violations: {dict(violations) or 'none'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
