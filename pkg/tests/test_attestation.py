import hashlib
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gateward.attestation import (
    AttestationProof,
    AttestedRun,
    Reason,
    Step,
    chain_link,
    verify_attestation,
    verify_attestation_bytes,
)
from gateward.fabric import Fabric

CODE = hashlib.sha256(b"train.py").digest()
DATA = hashlib.sha256(b"corpus").digest()


@pytest.fixture(scope="module")
def fabric():
    f = Fabric(seed=3)
    f.provision_chip(10**15, chip_id="chip-a")
    f.provision_chip(10**15, chip_id="chip-b")
    return f


def proof(fabric, flops, chip="chip-a", seed=0):
    import random

    run = AttestedRun(fabric.chip(chip), "run-1")
    for f in flops:
        run.record(CODE, DATA, f)
    return run.seal(random.Random(seed))


def test_chain_link_layout():
    manual = hashlib.sha256(bytes(32) + CODE + DATA + (7).to_bytes(16, "big")).digest()
    assert chain_link(bytes(32), CODE, DATA, 7) == manual


def test_valid_proof(fabric):
    p = proof(fabric, [10**20, 2 * 10**20])
    assert verify_attestation(p, [CODE], [DATA], 3 * 10**20, fabric.keys)
    assert verify_attestation_bytes(p.to_bytes(), [CODE], [DATA], 3 * 10**20, fabric.keys)
    assert AttestationProof.from_bytes(p.to_bytes()) == p


def test_total_mismatch(fabric):
    p = proof(fabric, [10**20])
    res = verify_attestation(p, [CODE], [DATA], 10**20 + 1, fabric.keys)
    assert res.reason is Reason.TOTAL_MISMATCH


def test_unexpected_code_and_data(fabric):
    p = proof(fabric, [1])
    assert verify_attestation(p, [DATA], [DATA], 1, fabric.keys).reason is Reason.UNEXPECTED_CODE
    assert verify_attestation(p, [CODE], [CODE], 1, fabric.keys).reason is Reason.UNEXPECTED_DATA


def test_step_edit_breaks_chain(fabric):
    p = proof(fabric, [5, 6, 7])
    s = p.steps[1]
    edited = Step(s.prev_hash, s.code_hash, s.data_hash, s.step_flop + 1, s.chain_hash)
    bad = AttestationProof(p.proof_id, p.hash_name, (p.steps[0], edited, p.steps[2]), p.final_signature, p.total_flop)
    res = verify_attestation(bad, [CODE], [DATA], 18, fabric.keys)
    assert res.reason is Reason.CHAIN_BROKEN and res.step == 1


def test_wrong_signer(fabric):
    p = proof(fabric, [5])
    assert verify_attestation(p, [CODE], [DATA], 5, fabric.keys, signer="chip-b").reason is Reason.BAD_SIGNATURE


def test_empty_and_garbage(fabric):
    assert verify_attestation_bytes(b"{", [], [], 0, fabric.keys).reason is Reason.MALFORMED
    p = proof(fabric, [5])
    loose = json.dumps(p.to_dict(), indent=1).encode()
    assert verify_attestation_bytes(loose, [CODE], [DATA], 5, fabric.keys).reason is Reason.NON_CANONICAL


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 10**24), min_size=1, max_size=6), st.integers(0, 2**32), st.data())
def test_single_byte_tamper_fails(fabric, flops, seed, data):
    p = proof(fabric, flops, seed=seed)
    wire = p.to_bytes()
    assert verify_attestation_bytes(wire, [CODE], [DATA], sum(flops), fabric.keys)
    i = data.draw(st.integers(0, len(wire) - 1))
    delta = data.draw(st.integers(1, 255))
    bad = bytearray(wire)
    bad[i] = (bad[i] + delta) % 256
    assert not verify_attestation_bytes(bytes(bad), [CODE], [DATA], sum(flops), fabric.keys)
