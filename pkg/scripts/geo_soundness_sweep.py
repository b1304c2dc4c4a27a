#!/usr/bin/env python3
"""Sweep random chip placements and report how the feasible region behaves.

Soundness (true location always inside) is the hard requirement; the mean
feasible-region span and the verdict mix show how much extra delay costs in
precision.
"""

from __future__ import annotations

import argparse
import random
import statistics

from gateward.crypto import KeyDirectory
from gateward.fabric import Fabric
from gateward.geo import EmptyRegion, LatencyModel, Station, locate, measure_bounds, regular_polygon, verify_within

ZONE = regular_polygon((500.0, 500.0), 100.0, 16)


def trial(rng: random.Random, seed: int, extra: float):
    fabric = Fabric(seed=seed)
    at = (rng.uniform(0, 1000), rng.uniform(0, 1000))
    chip = fabric.provision_chip(10**15, location=at, processing_time=1e-5, processing_allowance=1e-5)
    stations = [Station.create(f"st{i}", (rng.uniform(0, 1000), rng.uniform(0, 1000)), fabric.scheme, seed) for i in range(rng.randint(3, 5))]
    keys = KeyDirectory(fabric.scheme, {**fabric.keys.keys, **{s.station_id: s.public_key for s in stations}})
    bounds = measure_bounds(stations, chip, LatencyModel(extra_delay=extra, jitter=extra, seed=seed), keys)
    region = locate(bounds)
    try:
        verdict = verify_within(region, ZONE).value
    except EmptyRegion:
        verdict = "empty_region"
    return region.contains(at), min(km for _, km in bounds), verdict


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for extra in (0.0, 1e-5, 1e-4, 1e-3):
        rng = random.Random(args.seed)
        results = [trial(rng, args.seed + k, extra) for k in range(args.trials)]
        sound = sum(ok for ok, _, _ in results)
        tightest = statistics.mean(km for _, km, _ in results)
        mix = {v: sum(1 for *_, w in results if w == v) for v in sorted({w for *_, w in results})}
        print(f"extra_delay={extra:g}s  sound={sound}/{args.trials}  mean tightest bound={tightest:.1f} km  verdicts={mix}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
