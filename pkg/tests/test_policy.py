import itertools
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gateward.policy import (
    CORE_HARBORS,
    CapabilityProfile,
    HarborKind,
    IncompleteDossier,
    Incident,
    Injunction,
    NoPartiesNamed,
    Party,
    PolicyConfig,
    Regime,
    SafetyCase,
    SystemDossier,
    Tier,
    check_caps,
    check_safe_harbor,
    classify_tier,
    evaluate_liability,
    injunction_check,
    reconcile,
)

FLAGS = list(itertools.product((False, True), repeat=3))
INCIDENT = Incident("harm", (Party("dev"), Party("host", "deployer")))


def dossier(flags=(False, False, False), training=10**24, rate=10**17, cases=(), **kw):
    return SystemDossier("m", CapabilityProfile.from_flags(*flags), training, rate, tuple(cases), **kw)


@pytest.mark.parametrize("flags", FLAGS)
@pytest.mark.parametrize("bucket", ["below", "training", "rate"])
def test_tier_table(flags, bucket):
    training, rate = {"below": (10**26, 10**19), "training": (10**27 + 1, 0), "rate": (0, 10**20 + 1)}[bucket]
    tier = classify_tier(dossier(flags, training, rate))
    assert tier.tier == (Tier.RT4 if bucket != "below" else Tier(sum(flags)))


def test_cap_boundary_is_strict():
    assert check_caps(10**27, 10**20).allowed
    assert check_caps(10**27 + 1, 0).reason == "training_cap"
    assert check_caps(0, Fraction(10**40 + 1, 10**20)).reason == "inference_cap"
    assert check_caps(10**27 + 1, 10**20 + 1).reasons == ("training_cap", "inference_cap")


def test_rt1_requirements_depend_on_flag():
    assert classify_tier(dossier((True, False, False))).deployment_requirements == ()
    assert classify_tier(dossier((True, False, False), risk_flag=True)).deployment_requirements


def test_incomplete_dossier():
    with pytest.raises(IncompleteDossier):
        classify_tier(SystemDossier("m", None, 1, 1))


@pytest.mark.parametrize(
    "training,rate,granted",
    [
        (10**26 - 1, 10**19 - 1, True),
        (10**26, 10**19 - 1, False),
        (10**26 - 1, 10**19, False),
        (10**26 + 1, 10**19 - 1, False),
        (10**26 - 1, 10**19 + 1, False),
    ],
)
def test_compute_harbor_boundary(training, rate, granted):
    harbors = check_safe_harbor(dossier(training=training, rate=rate))
    assert (HarborKind.COMPUTE_BELOW_THRESHOLD in harbors) is granted


def test_capability_harbors_need_weak_axis_and_approval():
    approved = [SafetyCase(k, approved_by="agency") for k in ("weak", "narrow", "passive")]
    strong = dossier((True, True, True), training=10**26, cases=approved)
    assert check_safe_harbor(strong) == frozenset()
    weak = dossier((False, False, False), training=10**26, cases=approved)
    assert check_safe_harbor(weak) == {HarborKind.WEAK, HarborKind.NARROW, HarborKind.PASSIVE}
    unapproved = dossier(training=10**26, cases=[SafetyCase("weak")])
    assert check_safe_harbor(unapproved) == frozenset()


def test_guaranteed_safe_threshold():
    ok = SafetyCase("guaranteed_safe", approved_by="agency", bounded_risk=1e-7)
    loose = SafetyCase("guaranteed_safe", approved_by="agency", bounded_risk=1e-3)
    assert HarborKind.GUARANTEED_SAFE in check_safe_harbor(dossier((1, 1, 1), 10**26, cases=[ok]))
    assert check_safe_harbor(dossier((1, 1, 1), 10**26, cases=[loose])) == frozenset()


@pytest.mark.parametrize("flags", FLAGS)
@pytest.mark.parametrize("harbor", [None, *CORE_HARBORS])
def test_liability_dichotomy(flags, harbor):
    ruling = evaluate_liability(dossier(flags), [] if harbor is None else [harbor], INCIDENT)
    strict = all(flags) and harbor is None
    assert ruling.regime is (Regime.STRICT_JOINT_AND_SEVERAL if strict else Regime.FAULT_BASED)
    assert ruling.parties == ("dev", "host")


def test_personal_liability_and_parties():
    gross = Incident("x", (Party("a"),), gross_negligence=True)
    assert evaluate_liability(dossier(), [], gross).personal_liability
    with pytest.raises(NoPartiesNamed):
        evaluate_liability(dossier(), [], Incident("x", ()))


def test_injunctions():
    assert injunction_check(dossier(training=10**27 + 1))[0] is Injunction.RECOMMENDED
    assert injunction_check(dossier((1, 1, 1)))[0] is Injunction.RECOMMENDED
    assert injunction_check(dossier((1, 1, 1), safety_plan_approved=True))[0] is Injunction.NONE
    assert injunction_check(dossier(training=10**25 + 1))[0] is Injunction.RECOMMENDED
    assert injunction_check(dossier(training=10**25 + 1, registered=True))[0] is Injunction.NONE


def test_config_roundtrip_and_validation():
    cfg = PolicyConfig(training_cap=10**26, harbor_training=10**25)
    assert PolicyConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        PolicyConfig(training_cap=10**26)
    with pytest.raises(ValueError):
        PolicyConfig.from_dict({"bogus": 1})


def test_dossier_from_dict():
    d = SystemDossier.from_dict(
        {
            "model_id": "m",
            "profile": {"autonomy": "strong", "generality": "weak", "intelligence": "strong"},
            "training_compute": "1e25",
            "max_inference_rate": 10**18,
        }
    )
    assert d.training_compute == 10**25 and classify_tier(d).tier is Tier.RT2


def test_reconcile():
    assert reconcile(101, 100) and not reconcile(102, 100)
    assert reconcile(0, 0) and not reconcile(1, 0)


@given(st.integers(0, 10**28), st.integers(0, 10**21), st.tuples(st.booleans(), st.booleans(), st.booleans()))
def test_tier_is_monotone_in_compute(training, rate, flags):
    base = classify_tier(dossier(flags, training, rate)).tier
    assert classify_tier(dossier(flags, training + 10**27, rate)).tier >= base
    assert classify_tier(dossier(flags, training, rate + 10**20)).tier >= base
