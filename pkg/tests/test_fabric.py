import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gateward.canonical import canonical_json, length_prefixed
from gateward.crypto import SCHEMES, KeyDirectory, SignedEnvelope, seal
from gateward.fabric import (
    ClusterCapExceeded,
    Fabric,
    InvalidCapacity,
    LicenseExhausted,
    NotAllowListed,
    PermitInvalid,
    SpeedLimitExceeded,
    parse_reply,
)
from gateward.governor import GovernorService
from gateward.licensing import LicenseGrant, LicenseInvalid

DAY_US = 86_400 * 10**6


def world(capacities, *, cluster_cap=None, speed_limit=None, scope="cluster", mesh=True, seed=0):
    fabric = Fabric(cluster_cap=cluster_cap, speed_limit=speed_limit, speed_limit_scope=scope, seed=seed)
    ids = [f"c{i:03d}" for i in range(len(capacities))]
    for cid, cap in zip(ids, capacities):
        fabric.provision_chip(cap, allow_list=ids if mesh else (), chip_id=cid)
    gov = GovernorService(fabric, seed=seed)
    for cid in ids:
        gov.enroll(cid)
    return fabric, gov, ids


def grant_for(gov, chips, quota, purpose="training"):
    return gov.request_license("lab", chips, quota, (0, DAY_US), model_id="m", purpose=purpose)


def test_isolated_chip():
    fabric = Fabric()
    chip = fabric.provision_chip(10**15)
    assert chip.chip_id == "chip-00001"
    assert fabric.cluster_of(chip.chip_id).member_chips == {chip.chip_id}
    assert fabric.cluster_rate(chip.chip_id) == 10**15


def test_zero_capacity():
    with pytest.raises(InvalidCapacity):
        Fabric().provision_chip(0)


def test_hundred_chip_mesh_reaches_oversight_threshold():
    fabric, _, ids = world([10**16] * 100)
    for i in range(1, 100):
        fabric.connect(ids[0], ids[i])
    (cluster,) = fabric.clusters()
    assert cluster.aggregate_rate == 10**18
    assert len(cluster.member_chips) == 100


def test_connect_rules():
    fabric = Fabric(cluster_cap=10**18)
    a = fabric.provision_chip(10**15, allow_list={"chip-00002"})
    b = fabric.provision_chip(10**15, allow_list={"chip-00001"})
    c = fabric.provision_chip(10**15, allow_list={"chip-00001"})
    assert fabric.connect(a.chip_id, b.chip_id) is not None
    with pytest.raises(NotAllowListed):
        fabric.connect(a.chip_id, c.chip_id)
    assert fabric.refusals[-1]["reason"] == "not_allow_listed"


def test_merging_two_big_clusters_refused():
    caps = [3 * 10**17] * 4
    fabric, _, ids = world(caps, cluster_cap=10**18)
    fabric.connect(ids[0], ids[1])
    fabric.connect(ids[2], ids[3])
    before = fabric.cluster_rate(ids[0])
    with pytest.raises(ClusterCapExceeded):
        fabric.connect(ids[1], ids[2])
    assert fabric.cluster_rate(ids[0]) == before == 6 * 10**17


def test_permits_allow_big_clusters():
    fabric, gov, ids = world([6 * 10**17] * 3, cluster_cap=10**18)
    for a, b in [(ids[0], ids[1]), (ids[1], ids[2])]:
        permit = gov.issue_link_permit("gov-1", a, b)
        fabric.connect(a, b, permit)
    assert fabric.cluster_rate(ids[0]) == 18 * 10**17
    # a permit for another pair does not transfer
    fabric2, gov2, ids2 = world([6 * 10**17] * 2, cluster_cap=10**18)
    wrong = gov2.issue_link_permit("gov-1", ids2[0], "elsewhere")
    with pytest.raises(PermitInvalid):
        fabric2.connect(ids2[0], ids2[1], wrong)


def test_revoked_permit_drops_link():
    fabric, gov, ids = world([6 * 10**17] * 2, cluster_cap=10**18)
    permit = gov.issue_link_permit("gov-1", ids[0], ids[1])
    link = fabric.connect(ids[0], ids[1], permit)
    dropped = gov.revoke_link_permit("gov-1", link.permit_id)
    assert dropped == [link]
    assert fabric.cluster_rate(ids[0]) == 6 * 10**17
    with pytest.raises(PermitInvalid):
        fabric.connect(ids[0], ids[1], permit)


def test_path_connected_rate():
    fabric, _, ids = world([10**15, 2 * 10**15, 3 * 10**15])
    fabric.connect(ids[0], ids[1])
    fabric.connect(ids[1], ids[2])
    assert fabric.cluster_rate(ids[2]) == 6 * 10**15


def test_execute_debits_balance():
    fabric, gov, ids = world([10**15])
    g = grant_for(gov, ids, 10**16)
    fabric.execute(ids[0], 10**15, g, now_us=0)
    assert fabric.chip(ids[0]).license_balance == 9 * 10**15


def test_zero_balance_halts():
    fabric, gov, ids = world([10**15])
    with pytest.raises(LicenseExhausted):
        fabric.execute(ids[0], 10**15, now_us=0)
    assert fabric.chip(ids[0]).halted


def test_speed_limit_binds_inference():
    fabric, gov, ids = world([10**21], speed_limit=10**20)
    g = grant_for(gov, ids, 10**21, purpose="inference")
    with pytest.raises(SpeedLimitExceeded):
        fabric.execute(ids[0], 2 * 10**19, g, now_us=0, window_us=100_000)
    fabric.execute(ids[0], 10**19, g, now_us=0, window_us=100_000)
    t = grant_for(gov, ids, 10**22)
    fabric.execute(ids[0], 2 * 10**19, t, now_us=0, window_us=100_000)


def test_speed_limit_scope_cluster_sums_members():
    for scope, blocked in (("cluster", True), ("chip", False)):
        fabric, gov, ids = world([10**20] * 2, speed_limit=10**20, scope=scope)
        fabric.connect(ids[0], ids[1])
        g = grant_for(gov, ids, 10**21, purpose="inference")
        fabric.execute(ids[0], 6 * 10**19, g, now_us=0, window_us=10**6)
        if blocked:
            with pytest.raises(SpeedLimitExceeded):
                fabric.execute(ids[1], 6 * 10**19, g, now_us=0, window_us=10**6)
        else:
            fabric.execute(ids[1], 6 * 10**19, g, now_us=0, window_us=10**6)


def test_physical_window():
    fabric, gov, ids = world([10**15])
    g = grant_for(gov, ids, 10**16)
    with pytest.raises(ValueError):
        fabric.execute(ids[0], 10**15, g, now_us=0, window_us=10)


def test_forged_grant_rejected():
    fabric, gov, ids = world([10**15])
    g = grant_for(gov, ids, 10**16)
    inflated = LicenseGrant(**{**g.__dict__, "quota": 10**20})
    with pytest.raises(LicenseInvalid) as exc:
        fabric.execute(ids[0], 10**15, inflated, now_us=0)
    assert exc.value.reason == "insufficient_signatures"
    doubled = LicenseGrant(**{**g.__dict__, "signatures": (g.signatures[0], g.signatures[0])})
    with pytest.raises(LicenseInvalid):
        fabric.install_grant(ids[0], doubled, 0)


def test_grant_outside_window():
    fabric, gov, ids = world([10**15])
    g = gov.request_license("lab", ids, 10**16, (10, 20))
    with pytest.raises(LicenseInvalid):
        fabric.execute(ids[0], 10, g, now_us=30)


def test_telemetry_signed_and_summed():
    fabric, gov, ids = world([10**15, 10**15])
    g = grant_for(gov, ids[:1], 10**16)
    for k in range(3):
        fabric.execute(ids[0], 10**15, g, now_us=k * 2 * 10**6)
    rep = gov.collect_telemetry(ids[0], (0, DAY_US))
    assert rep.executed_flop == 3 * 10**15
    idle = gov.collect_telemetry(ids[1], (0, DAY_US))
    assert idle.executed_flop == 0 and idle.envelope.verify(fabric.keys)


def test_wire_roundtrip():
    fabric, gov, ids = world([10**15])
    operator = SCHEMES["ed25519"].key_from_seed(b"\x01" * 32)
    fabric.register_operator("op", operator.public_bytes)
    g = grant_for(gov, ids, 10**16)
    req = seal({"type": "ExecuteRequest", "chip_id": ids[0], "workload_flop": 10**15, "grant": g.to_dict(), "now_us": 0}, "op", operator, b"\x00" * 16)
    reply = fabric.handle(req.to_wire())
    body = parse_reply(reply)
    assert body["ok"] and body["license_balance"] == 9 * 10**15
    env = SignedEnvelope.from_wire(reply)
    assert env.signer == ids[0] and env.verify(fabric.keys)


@pytest.mark.parametrize("scheme", sorted(SCHEMES))
def test_envelope_byte_tamper(scheme):
    key = SCHEMES[scheme].key_from_seed(b"\x07" * 32)
    keys = KeyDirectory(SCHEMES[scheme], {"s": key.public_bytes})
    env = seal({"type": "X", "n": 1}, "s", key, b"\x02" * 16)
    assert env.verify(keys)
    assert env.signing_input() == length_prefixed(canonical_json({"type": "X", "n": 1}), b"\x02" * 16)
    for i in range(len(env.payload)):
        bad = bytearray(env.payload)
        bad[i] ^= 0x01
        assert not SignedEnvelope(bytes(bad), env.signer, env.nonce, env.signature).verify(keys)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32))
def test_random_operations_keep_invariants(seed):
    rng = random.Random(seed)
    n = rng.randint(2, 8)
    caps = [rng.choice([10**16, 10**17, 3 * 10**17, 6 * 10**17]) for _ in range(n)]
    fabric = Fabric(cluster_cap=10**18, seed=seed)
    ids = [f"c{i}" for i in range(n)]
    for cid, cap in zip(ids, caps):
        allow = {x for x in ids if rng.random() < 0.7}
        fabric.provision_chip(cap, allow_list=allow, chip_id=cid)
    gov = GovernorService(fabric, seed=seed)
    for cid in ids:
        gov.enroll(cid)
    t = 0
    for _ in range(30):
        op = rng.random()
        a, b = rng.sample(ids, 2)
        try:
            if op < 0.4:
                permit = gov.issue_link_permit("gov-1", a, b) if rng.random() < 0.3 else None
                fabric.connect(a, b, permit)
            elif op < 0.5:
                fabric.disconnect(a, b)
            else:
                g = gov.request_license("lab", [a], rng.randint(1, 10**17), (0, 10**15))
                fabric.execute(a, rng.randint(1, 10**17), g if rng.random() < 0.7 else None, now_us=t)
        except Exception:
            pass
        t += 10**6
    for link in fabric.links.values():
        assert fabric.chip(link.a).permits_link(link.b) and fabric.chip(link.b).permits_link(link.a)
    for cluster in fabric.clusters():
        if cluster.aggregate_rate > 10**18:
            assert all(l.permit_id for l in fabric.links_within(set(cluster.member_chips)))
    for chip in fabric.chips.values():
        assert chip.executed_total <= chip.granted_total
        assert chip.license_balance >= 0
