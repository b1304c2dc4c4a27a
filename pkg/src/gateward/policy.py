"""Risk tiers, hard compute caps, safe harbors and the liability regime.

Capability flags and safety-case approvals are inputs: someone (an auditor,
a scenario) has assessed them. This module only decides consequences. All
compute comparisons are exact: a value equal to a cap is allowed, one FLOP
more is a breach; safe-harbor thresholds are strict less-than.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable

from .canonical import canonical_json, exact_int, exact_number


class PolicyError(Exception):
    pass


class IncompleteDossier(PolicyError):
    pass


class NoPartiesNamed(PolicyError):
    pass


class Level(str, enum.Enum):
    WEAK = "weak"
    STRONG = "strong"


class Tier(enum.IntEnum):
    RT0 = 0
    RT1 = 1
    RT2 = 2
    RT3 = 3
    RT4 = 4

    @property
    def label(self) -> str:
        return f"RT-{self.value}"

    @classmethod
    def parse(cls, label: str) -> Tier:
        return cls(int(label.removeprefix("RT-")))


class HarborKind(str, enum.Enum):
    COMPUTE_BELOW_THRESHOLD = "compute_below_threshold"
    WEAK = "weak"
    NARROW = "narrow"
    PASSIVE = "passive"
    GUARANTEED_SAFE = "guaranteed_safe"
    REGULATORY_APPROVAL = "regulatory_approval"


HARBOR_KINDS = tuple(HarborKind)
CORE_HARBORS = HARBOR_KINDS[:5]


class Regime(str, enum.Enum):
    STRICT_JOINT_AND_SEVERAL = "strict_joint_and_several"
    FAULT_BASED = "fault_based"


@dataclass(frozen=True)
class CapabilityProfile:
    autonomy: Level = Level.WEAK
    generality: Level = Level.WEAK
    intelligence: Level = Level.WEAK

    def __post_init__(self):
        for name in ("autonomy", "generality", "intelligence"):
            object.__setattr__(self, name, Level(getattr(self, name)))

    @property
    def strong_count(self) -> int:
        return sum(v is Level.STRONG for v in (self.autonomy, self.generality, self.intelligence))

    @property
    def all_strong(self) -> bool:
        return self.strong_count == 3

    @classmethod
    def from_flags(cls, autonomy: bool, generality: bool, intelligence: bool) -> CapabilityProfile:
        pick = lambda b: Level.STRONG if b else Level.WEAK  # noqa: E731
        return cls(pick(autonomy), pick(generality), pick(intelligence))


@dataclass(frozen=True)
class SafetyCase:
    kind: HarborKind
    evidence: dict[str, Any] = field(default_factory=dict)
    approved_by: str | None = None
    bounded_risk: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", HarborKind(self.kind))

    @property
    def approved(self) -> bool:
        # a compute harbor is checked mechanically against the dossier numbers
        return self.kind is HarborKind.COMPUTE_BELOW_THRESHOLD or self.approved_by is not None


@dataclass(frozen=True)
class SystemDossier:
    model_id: str
    profile: CapabilityProfile | None
    training_compute: int | None
    max_inference_rate: Fraction | int | None
    safety_cases: tuple[SafetyCase, ...] = ()
    registered: bool = False
    risk_flag: bool = False
    safety_plan_approved: bool = False
    audited: bool = False

    def require_complete(self) -> None:
        missing = [
            name
            for name in ("model_id", "profile", "training_compute", "max_inference_rate")
            if getattr(self, name) is None
        ]
        if missing:
            raise IncompleteDossier(f"{self.model_id or '<unnamed>'}: missing {', '.join(missing)}")
        if self.training_compute < 0 or self.max_inference_rate < 0:
            raise IncompleteDossier("compute figures must be non-negative")

    def approved_case(self, kind: HarborKind) -> SafetyCase | None:
        for case in self.safety_cases:
            if case.kind is kind and case.approved:
                return case
        return None

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> SystemDossier:
        profile = obj.get("profile")
        rate = obj.get("max_inference_rate")
        training = obj.get("training_compute")
        return cls(
            model_id=obj.get("model_id"),
            profile=CapabilityProfile(**profile) if profile is not None else None,
            training_compute=exact_int(training, "training_compute") if training is not None else None,
            max_inference_rate=exact_number(rate, "max_inference_rate") if rate is not None else None,
            safety_cases=tuple(
                SafetyCase(
                    kind=c["kind"],
                    evidence=c.get("evidence", {}),
                    approved_by=c.get("approved_by"),
                    bounded_risk=float(c["bounded_risk"]) if c.get("bounded_risk") is not None else None,
                )
                for c in obj.get("safety_cases", ())
            ),
            registered=bool(obj.get("registered", False)),
            risk_flag=bool(obj.get("risk_flag", False)),
            safety_plan_approved=bool(obj.get("safety_plan_approved", False)),
            audited=bool(obj.get("audited", False)),
        )


@dataclass(frozen=True)
class PolicyConfig:
    training_cap: int = 10**27
    inference_cap: int = 10**20
    registration_training: int = 10**25
    registration_rate: int = 10**18
    harbor_training: int = 10**26
    harbor_rate: int = 10**19
    cluster_cap: int = 10**18
    negligible_risk: float = 1e-6
    authorized_major_harm: float = 1e-4

    def __post_init__(self):
        if self.harbor_training * 10 > self.training_cap or self.harbor_rate * 10 > self.inference_cap:
            raise ValueError("safe-harbor thresholds must sit at least 10x below the caps")
        if min(self.training_cap, self.inference_cap, self.registration_training, self.registration_rate) <= 0:
            raise ValueError("thresholds must be positive")

    @classmethod
    def from_dict(cls, obj: dict[str, Any] | None) -> PolicyConfig:
        if not obj:
            return cls()
        ints = {
            "training_cap",
            "inference_cap",
            "registration_training",
            "registration_rate",
            "harbor_training",
            "harbor_rate",
            "cluster_cap",
        }
        unknown = set(obj) - ints - {"negligible_risk", "authorized_major_harm"}
        if unknown:
            raise ValueError(f"unknown policy fields {sorted(unknown)}")
        kwargs: dict[str, Any] = {k: exact_int(v, k) for k, v in obj.items() if k in ints}
        for k in ("negligible_risk", "authorized_major_harm"):
            if k in obj:
                kwargs[k] = float(obj[k])
        return cls(**kwargs)

    def to_dict(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# requirement ids per tier; texts are short labels for reports
REQUIREMENTS: dict[Tier, tuple[tuple[str, ...], tuple[str, ...]]] = {
    Tier.RT0: ((), ()),
    Tier.RT1: ((), ("safety_case_if_risk_flagged",)),
    Tier.RT2: (
        ("national_registration",),
        ("safety_case_bounded_major_harm", "independent_safety_audit"),
    ),
    Tier.RT3: (
        ("safety_security_plan_preapproval",),
        (
            "safety_case_guaranteed_bounded_harm",
            "cybersecurity",
            "controllability",
            "non_removable_killswitch",
            "value_alignment",
            "misuse_robustness",
        ),
    ),
    Tier.RT4: (("prohibited",), ("prohibited",)),
}

TIER_ROWS = {
    Tier.RT0: "tier table row RT-0: weak in autonomy, generality and intelligence",
    Tier.RT1: "tier table row RT-1: strong in one of autonomy, generality, intelligence",
    Tier.RT2: "tier table row RT-2: strong in two of autonomy, generality, intelligence",
    Tier.RT3: "tier table row RT-3: strong in all three",
    Tier.RT4: "tier table row RT-4: training or inference compute above the cap",
}


@dataclass(frozen=True)
class RiskTier:
    tier: Tier
    training_requirements: tuple[str, ...]
    deployment_requirements: tuple[str, ...]
    citation: str

    @property
    def label(self) -> str:
        return self.tier.label

    @property
    def prohibited(self) -> bool:
        return self.tier is Tier.RT4

    def to_dict(self) -> dict[str, Any]:
        return {
            "tier": self.label,
            "training_requirements": list(self.training_requirements),
            "deployment_requirements": list(self.deployment_requirements),
            "citation": self.citation,
        }


@dataclass(frozen=True)
class CapDecision:
    allowed: bool
    reasons: tuple[str, ...] = ()

    @property
    def reason(self) -> str | None:
        return self.reasons[0] if self.reasons else None


def check_caps(projected_training: int, projected_rate, config: PolicyConfig | None = None) -> CapDecision:
    """Deny iff either projection strictly exceeds its cap."""
    config = config or PolicyConfig()
    if projected_training < 0 or projected_rate < 0:
        raise ValueError("projections must be non-negative")
    reasons = []
    if projected_training > config.training_cap:
        reasons.append("training_cap")
    if projected_rate > config.inference_cap:
        reasons.append("inference_cap")
    return CapDecision(not reasons, tuple(reasons))


def classify_tier(dossier: SystemDossier, config: PolicyConfig | None = None) -> RiskTier:
    config = config or PolicyConfig()
    dossier.require_complete()
    if not check_caps(dossier.training_compute, dossier.max_inference_rate, config).allowed:
        tier = Tier.RT4
    else:
        tier = Tier(dossier.profile.strong_count)
    training, deployment = REQUIREMENTS[tier]
    if tier is Tier.RT1 and not dossier.risk_flag:
        deployment = ()
    return RiskTier(tier, training, deployment, TIER_ROWS[tier])


def check_safe_harbor(dossier: SystemDossier, config: PolicyConfig | None = None) -> frozenset[HarborKind]:
    config = config or PolicyConfig()
    dossier.require_complete()
    profile = dossier.profile
    harbors = set()
    if dossier.training_compute < config.harbor_training and dossier.max_inference_rate < config.harbor_rate:
        harbors.add(HarborKind.COMPUTE_BELOW_THRESHOLD)
    for kind, flag in (
        (HarborKind.WEAK, profile.intelligence),
        (HarborKind.NARROW, profile.generality),
        (HarborKind.PASSIVE, profile.autonomy),
    ):
        if flag is Level.WEAK and dossier.approved_case(kind) is not None:
            harbors.add(kind)
    safe = dossier.approved_case(HarborKind.GUARANTEED_SAFE)
    if safe is not None and safe.bounded_risk is not None and safe.bounded_risk <= config.negligible_risk:
        harbors.add(HarborKind.GUARANTEED_SAFE)
    if dossier.approved_case(HarborKind.REGULATORY_APPROVAL) is not None:
        harbors.add(HarborKind.REGULATORY_APPROVAL)
    return frozenset(harbors)


@dataclass(frozen=True)
class Party:
    name: str
    role: str = "developer"


@dataclass(frozen=True)
class Incident:
    description: str
    parties: tuple[Party, ...]
    gross_negligence: bool = False
    willful_misconduct: bool = False

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> Incident:
        return cls(
            description=obj.get("description", ""),
            parties=tuple(Party(p["name"], p.get("role", "developer")) for p in obj.get("parties", ())),
            gross_negligence=bool(obj.get("gross_negligence", False)),
            willful_misconduct=bool(obj.get("willful_misconduct", False)),
        )


@dataclass(frozen=True)
class LiabilityRuling:
    model_id: str
    regime: Regime
    parties: tuple[str, ...]
    harbors: tuple[str, ...]
    personal_liability: bool
    citation: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "model_id": self.model_id,
            "regime": self.regime.value,
            "parties": list(self.parties),
            "harbors": list(self.harbors),
            "personal_liability": self.personal_liability,
            "citation": self.citation,
        }

    def to_bytes(self) -> bytes:
        return canonical_json(self.to_dict())


def evaluate_liability(
    dossier: SystemDossier, harbors: Iterable[HarborKind | str], incident: Incident
) -> LiabilityRuling:
    """Strict joint-and-several liability only at the all-strong, no-harbor point.

    ``harbors`` is taken as established (normally the output of
    :func:`check_safe_harbor`); it is not re-derived here.
    """
    if not incident.parties:
        raise NoPartiesNamed(incident.description or "incident")
    if dossier.profile is None:
        raise IncompleteDossier(f"{dossier.model_id}: missing profile")
    harbor_set = sorted(HarborKind(h).value for h in harbors)
    names = tuple(sorted({p.name for p in incident.parties}))
    personal = incident.gross_negligence or incident.willful_misconduct
    if dossier.profile.all_strong and not harbor_set:
        return LiabilityRuling(
            dossier.model_id,
            Regime.STRICT_JOINT_AND_SEVERAL,
            names,
            (),
            personal,
            "liability regime: highly autonomous, general and capable system without a safe harbor",
        )
    if harbor_set:
        why = "liability regime: safe harbor claimed (" + ", ".join(harbor_set) + ")"
    else:
        why = "liability regime: outside the autonomy/generality/intelligence intersection"
    return LiabilityRuling(dossier.model_id, Regime.FAULT_BASED, names, tuple(harbor_set), personal, why)


class Injunction(str, enum.Enum):
    NONE = "none"
    RECOMMENDED = "injunction_recommended"


def registration_required(training_compute: int, rate, config: PolicyConfig) -> bool:
    return training_compute > config.registration_training or rate > config.registration_rate


def injunction_check(dossier: SystemDossier, config: PolicyConfig | None = None) -> tuple[Injunction, str]:
    config = config or PolicyConfig()
    tier = classify_tier(dossier, config)
    if tier.tier is Tier.RT4:
        return Injunction.RECOMMENDED, "RT-4 systems are prohibited"
    if tier.tier is Tier.RT3 and not dossier.safety_plan_approved:
        return Injunction.RECOMMENDED, "RT-3 without a pre-approved safety and security plan"
    if not dossier.registered and registration_required(
        dossier.training_compute, dossier.max_inference_rate, config
    ):
        return Injunction.RECOMMENDED, "mandatory registration missing above reporting thresholds"
    return Injunction.NONE, f"{tier.label} requirements not contravened"


def reconcile(declared: int, measured: int, tolerance: Fraction = Fraction(1, 100)) -> bool:
    """True when a declared figure is within ``tolerance`` of the ledger tally."""
    if measured == 0:
        return declared == 0
    return abs(Fraction(declared - measured, measured)) <= tolerance
