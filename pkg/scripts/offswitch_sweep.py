#!/usr/bin/env python3
"""Time from a withhold to the halt, across license quanta and chip speeds.

Without fresh signatures a chip runs only until its installed balance is spent,
so the halt delay is bounded by quantum / capacity.
"""

from __future__ import annotations

import argparse
import random

from gateward.sim import Simulation, build_scenario


def delay_s(seed: int, quantum: int, capacity: int) -> tuple[float, float]:
    rng = random.Random(seed)
    obj = {
        "schema_version": 1,
        "name": "offswitch",
        "seed": seed,
        "until": 40 * quantum // capacity + 100,
        "labs": [{"id": "lab"}],
        "chips": [{"id": "c0", "owner": "lab", "capacity": str(capacity)}],
        "governance": {"quantum": str(quantum)},
        "workloads": [
            {"kind": "training", "at": 0, "lab": "lab", "model": "m", "chips": ["c0"], "declared_plan": str(quantum * 30),
             "license_flop": str(quantum), "steps_per_license": rng.randint(1, 5), "attest": False},
            {"kind": "withhold", "at": round(rng.uniform(1, 20 * quantum / capacity), 6), "governor": "gov-1", "target": "m"},
        ],
    }
    log, _ = Simulation(build_scenario(obj)).run()
    (w,) = log.of_kind("withhold")
    halt = next(e for e in log.of_kind("halt") if e.t_us >= w.t_us)
    return (halt.t_us - w.t_us) / 1e6, quantum / capacity


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--schedules", type=int, default=50)
    args = ap.parse_args()
    for quantum, capacity in ((10**16, 10**15), (10**17, 10**15), (10**18, 10**16)):
        delays = [delay_s(s, quantum, capacity)[0] for s in range(args.schedules)]
        bound = quantum / capacity
        print(f"quantum={quantum:.0e} capacity={capacity:.0e}  bound={bound:g}s  max delay={max(delays):.3f}s  within={sum(d <= bound for d in delays)}/{len(delays)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
