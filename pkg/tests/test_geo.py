import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import light_rtt_km

from gateward.crypto import KeyDirectory
from gateward.fabric import Fabric, NoResponse
from gateward.geo import (
    SPEED_OF_LIGHT_KM_S,
    BadSignature,
    EmptyRegion,
    LatencyModel,
    Station,
    Verdict,
    distance_bound,
    locate,
    measure_bounds,
    regular_polygon,
    run_challenge,
    verify_within,
)

ZONE = regular_polygon((0.0, 0.0), 100.0, 16)


def setup(chip_at, station_at, *, processing=0.0, seed=0):
    fabric = Fabric(seed=seed)
    chip = fabric.provision_chip(10**15, location=chip_at, processing_time=processing, processing_allowance=processing)
    stations = [Station.create(f"st-{i}", p, fabric.scheme, seed) for i, p in enumerate(station_at)]
    keys = KeyDirectory(fabric.scheme, {**fabric.keys.keys, **{s.station_id: s.public_key for s in stations}})
    return fabric, chip, stations, keys


def test_bound_of_one_millisecond():
    assert distance_bound(1e-3) == pytest.approx(149.896229, abs=1e-6)
    assert distance_bound(1e-3, mode="literal") == pytest.approx(299.792458, abs=1e-6)
    assert distance_bound(1e-3, 1e-3) == 0.0
    with pytest.raises(ValueError):
        distance_bound(-1.0)


def test_rtt_matches_light_time():
    _, chip, (st,), keys = setup((300.0, 400.0), [(0.0, 0.0)])
    rtt = run_challenge(st, chip, LatencyModel(), keys)
    assert rtt == pytest.approx(light_rtt_km(500.0), rel=1e-12)
    assert distance_bound(rtt) == pytest.approx(500.0, rel=1e-9)


def test_spoofed_chip_is_outside():
    _, chip, stations, keys = setup((400.0, 0.0), [(0.0, 0.0), (500.0, 200.0), (500.0, -200.0)])
    region = locate(measure_bounds(stations, chip, LatencyModel(extra_delay=1e-5), keys))
    assert region.contains((400.0, 0.0))
    assert verify_within(region, ZONE) is Verdict.CONFIRMED_OUTSIDE


def test_inside_and_indeterminate():
    stations = [(0.0, 0.0), (60.0, 0.0), (0.0, 60.0)]
    _, chip, sts, keys = setup((10.0, 10.0), stations)
    tight = locate(measure_bounds(sts, chip, LatencyModel(), keys))
    assert verify_within(tight, ZONE) is Verdict.CONFIRMED_INSIDE
    loose = locate(measure_bounds(sts, chip, LatencyModel(extra_delay=1e-3), keys))
    assert verify_within(loose, ZONE) is Verdict.INDETERMINATE


def test_empty_region():
    region = locate([((0.0, 0.0), 1.0), ((10.0, 0.0), 1.0)])
    assert region.is_empty()
    with pytest.raises(EmptyRegion):
        verify_within(region, ZONE)


def test_non_convex_zone_rejected():
    region = locate([((0.0, 0.0), 1.0)])
    with pytest.raises(ValueError):
        verify_within(region, [(0, 0), (10, 0), (1, 1), (0, 10)])


def test_tampered_response_rejected():
    _, chip, (st,), keys = setup((1.0, 0.0), [(0.0, 0.0)])

    def flip(env):
        sig = bytearray(env.signature)
        sig[0] ^= 1
        return type(env)(env.payload, env.signer, env.nonce, bytes(sig))

    with pytest.raises(BadSignature):
        run_challenge(st, chip, LatencyModel(), keys, intercept=flip)


def test_unreachable_chip():
    _, chip, (st,), keys = setup((1.0, 0.0), [(0.0, 0.0)])
    chip.reachable = False
    with pytest.raises(NoResponse):
        run_challenge(st, chip, LatencyModel(), keys)


def test_latency_cannot_undercut_light():
    with pytest.raises(ValueError):
        LatencyModel(extra_delay=-1e-6)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32))
def test_region_contains_truth(seed):
    rng = random.Random(seed)
    n = rng.randint(3, 5)
    at = (rng.uniform(0, 1000), rng.uniform(0, 1000))
    processing = rng.choice([0.0, 1e-5])
    stations = [(rng.uniform(0, 1000), rng.uniform(0, 1000)) for _ in range(n)]
    _, chip, sts, keys = setup(at, stations, processing=processing, seed=seed)
    model = LatencyModel(extra_delay=rng.uniform(0, 1e-4), jitter=rng.uniform(0, 1e-4), seed=seed)
    region = locate(measure_bounds(sts, chip, model, keys))
    assert region.contains(at)
    assert not region.is_empty()


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_bound_monotone_in_allowance(rtt, a, b):
    lo, hi = min(a, b), max(a, b)
    assert distance_bound(rtt, hi) <= distance_bound(rtt, lo)
    assert distance_bound(rtt, lo) <= distance_bound(rtt, lo, mode="literal")


def test_light_speed_constant():
    assert SPEED_OF_LIGHT_KM_S == 299_792.458
    assert math.isclose(light_rtt_km(SPEED_OF_LIGHT_KM_S / 2), 1.0)
