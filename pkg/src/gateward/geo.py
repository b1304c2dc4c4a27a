"""Latency-based distance bounding and feasible-region checks.

A station times a signed challenge/response with a chip. Light cannot travel
faster than ``c``, so the round trip caps how far away the chip can be. The
intersection of several such disks is the set of places the chip could be.

Geometry is planar, in km. All region tests are exact candidate-point tests
(disk centers, polygon vertices, boundary intersections) with a 1e-9 km
tolerance; nothing is sampled.
"""

from __future__ import annotations

import enum
import itertools
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .canonical import seed_bytes, substream
from .clock import SimClock
from .crypto import Ed25519Scheme, KeyDirectory, SignatureScheme, SignedEnvelope, SigningKey, fresh_nonce, seal
from .fabric import Chip, NoResponse

SPEED_OF_LIGHT_KM_S = 299_792.458
TOLERANCE_KM = 1e-9
BOUND_MODES = ("round_trip", "literal")

Point = tuple[float, float]


class GeoError(Exception):
    pass


class BadSignature(GeoError):
    pass


class EmptyRegion(GeoError):
    """The distance bounds are mutually inconsistent: spoofing evidence."""


class Verdict(str, enum.Enum):
    CONFIRMED_INSIDE = "confirmed_inside"
    CONFIRMED_OUTSIDE = "confirmed_outside"
    INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class Station:
    station_id: str
    location: Point
    key: SigningKey = field(repr=False, compare=False)

    @classmethod
    def create(
        cls, station_id: str, location: Point, scheme: SignatureScheme | None = None, seed: int = 0
    ) -> Station:
        scheme = scheme or Ed25519Scheme()
        key = scheme.key_from_seed(seed_bytes(seed, f"station-key:{station_id}"))
        return cls(station_id, (float(location[0]), float(location[1])), key)

    @property
    def public_key(self) -> bytes:
        return self.key.public_bytes


@dataclass
class LatencyModel:
    """One-way latency = light time + extra delay + uniform jitter in [0, jitter]."""

    extra_delay: float = 0.0
    per_link: dict[tuple[str, str], float] = field(default_factory=dict)
    jitter: float = 0.0
    seed: int = 0
    _rng: random.Random | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.extra_delay < 0 or self.jitter < 0 or any(v < 0 for v in self.per_link.values()):
            raise ValueError("latency can never undercut the light-propagation minimum")

    @property
    def rng(self) -> random.Random:
        if self._rng is None:
            self._rng = substream(self.seed, "latency")
        return self._rng

    def one_way(self, station: Station, chip: Chip) -> float:
        light = distance(station.location, chip.location) / SPEED_OF_LIGHT_KM_S
        extra = self.per_link.get((station.station_id, chip.chip_id), self.extra_delay)
        jitter = self.rng.uniform(0.0, self.jitter) if self.jitter else 0.0
        return light + extra + jitter


def distance(p: Point, q: Point) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


def run_challenge(
    station: Station,
    chip: Chip,
    model: LatencyModel,
    keys: KeyDirectory,
    *,
    rng: random.Random | None = None,
    intercept: Callable[[SignedEnvelope], SignedEnvelope] | None = None,
    clock: SimClock | None = None,
) -> float:
    """Time one signed challenge/response exchange; returns the round trip in seconds.

    ``intercept`` lets a test or adversary rewrite the response in flight.
    The clock, if given, advances by the round trip rounded up to the next µs.
    """
    if not chip.reachable:
        raise NoResponse(chip.chip_id)
    rng = rng or substream(0, f"challenge:{station.station_id}")
    challenge = seal(
        {"type": "Challenge", "challenge_id": rng.getrandbits(64), "chip_id": chip.chip_id},
        station.station_id,
        station.key,
        fresh_nonce(rng),
    )
    outbound = model.one_way(station, chip)
    response = chip.answer_challenge(challenge, fresh_nonce(rng))
    if intercept is not None:
        response = intercept(response)
    inbound = model.one_way(station, chip)
    if response.signer != chip.chip_id or not response.verify(keys):
        raise BadSignature(f"response from {chip.chip_id} does not verify")
    body = response.body
    if body.get("challenge_nonce") != challenge.nonce.hex() or body.get("station_id") != station.station_id:
        raise BadSignature("response does not answer this challenge")
    rtt = outbound + chip.processing_time + inbound
    if clock is not None:
        clock.advance(math.ceil(rtt * 1_000_000))
    return rtt


def distance_bound(rtt: float, processing_allowance: float = 0.0, *, mode: str = "round_trip") -> float:
    """Upper bound in km on the chip's distance from the station.

    ``round_trip`` credits light for both legs: c * (rtt - allowance) / 2.
    ``literal`` charges the whole interval to one leg, c * (rtt - allowance),
    which is looser and still sound.
    """
    if rtt < 0:
        raise ValueError("rtt must be non-negative")
    if mode not in BOUND_MODES:
        raise ValueError(f"mode must be one of {BOUND_MODES}")
    effective = max(0.0, rtt - processing_allowance)
    if mode == "round_trip":
        return SPEED_OF_LIGHT_KM_S * effective / 2
    return SPEED_OF_LIGHT_KM_S * effective


@dataclass(frozen=True)
class Disk:
    center: Point
    radius: float

    def contains(self, p: Point, tol: float = TOLERANCE_KM) -> bool:
        return distance(self.center, p) <= self.radius + tol


@dataclass(frozen=True)
class FeasibleRegion:
    disks: tuple[Disk, ...]

    def contains(self, p: Point, tol: float = TOLERANCE_KM) -> bool:
        return all(d.contains(p, tol) for d in self.disks)

    def witness(self) -> Point | None:
        """A point of the region, or None when the disks do not intersect."""
        for p in _disk_candidates(self.disks):
            if self.contains(p):
                return p
        return None

    def is_empty(self) -> bool:
        return self.witness() is None


def locate(bounds: Iterable[tuple[Station | Point, float]]) -> FeasibleRegion:
    disks = []
    for anchor, radius in bounds:
        center = anchor.location if isinstance(anchor, Station) else (float(anchor[0]), float(anchor[1]))
        if radius < 0:
            raise ValueError("distance bounds are non-negative")
        disks.append(Disk(center, float(radius)))
    if not disks:
        raise ValueError("need at least one bound")
    return FeasibleRegion(tuple(disks))


def circle_intersections(a: Disk, b: Disk) -> list[Point]:
    (x0, y0), (x1, y1) = a.center, b.center
    d = distance(a.center, b.center)
    if d == 0 or d > a.radius + b.radius + TOLERANCE_KM or d < abs(a.radius - b.radius) - TOLERANCE_KM:
        return []
    along = (a.radius**2 - b.radius**2 + d**2) / (2 * d)
    h = math.sqrt(max(0.0, a.radius**2 - along**2))
    mx, my = x0 + along * (x1 - x0) / d, y0 + along * (y1 - y0) / d
    ox, oy = -h * (y1 - y0) / d, h * (x1 - x0) / d
    if h == 0:
        return [(mx, my)]
    return [(mx + ox, my + oy), (mx - ox, my - oy)]


def segment_circle_intersections(disk: Disk, p: Point, q: Point) -> list[Point]:
    dx, dy = q[0] - p[0], q[1] - p[1]
    fx, fy = p[0] - disk.center[0], p[1] - disk.center[1]
    a = dx * dx + dy * dy
    if a == 0:
        return []
    b = 2 * (fx * dx + fy * dy)
    c = fx * fx + fy * fy - disk.radius**2
    disc = b * b - 4 * a * c
    if disc < 0:
        # tangent within tolerance still touches
        t = -b / (2 * a)
        foot = (p[0] + t * dx, p[1] + t * dy)
        if 0 <= t <= 1 and abs(distance(foot, disk.center) - disk.radius) <= TOLERANCE_KM:
            return [foot]
        return []
    root = math.sqrt(disc)
    out = []
    for t in ((-b - root) / (2 * a), (-b + root) / (2 * a)):
        if 0 <= t <= 1:
            out.append((p[0] + t * dx, p[1] + t * dy))
    return out


def _disk_candidates(disks: Sequence[Disk]) -> Iterable[Point]:
    for d in disks:
        yield d.center
    for a, b in itertools.combinations(disks, 2):
        yield from circle_intersections(a, b)


def _ccw(polygon: Sequence[Point]) -> list[Point]:
    pts = [(float(x), float(y)) for x, y in polygon]
    if len(pts) < 3:
        raise ValueError("zone polygon needs at least 3 vertices")
    area2 = sum(pts[i][0] * pts[i - 1][1] - pts[i - 1][0] * pts[i][1] for i in range(len(pts)))
    return pts if area2 < 0 else pts[::-1]


def _edges(poly: Sequence[Point]) -> Iterable[tuple[Point, Point]]:
    for i in range(len(poly)):
        yield poly[i], poly[(i + 1) % len(poly)]


def _outward_halfplanes(poly: Sequence[Point]) -> Iterable[tuple[tuple[float, float], float]]:
    """(unit outward normal, offset) for each edge of a CCW convex polygon."""
    for p, q in _edges(poly):
        ex, ey = q[0] - p[0], q[1] - p[1]
        length = math.hypot(ex, ey)
        n = (ey / length, -ex / length)
        yield n, n[0] * p[0] + n[1] * p[1]


def in_polygon(p: Point, poly: Sequence[Point], tol: float = TOLERANCE_KM) -> bool:
    return all(n[0] * p[0] + n[1] * p[1] <= h + tol for n, h in _outward_halfplanes(poly))


def _check_convex(poly: Sequence[Point]) -> None:
    for i in range(len(poly)):
        a, b, c = poly[i - 2], poly[i - 1], poly[i]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if cross < -TOLERANCE_KM:
            raise ValueError("zone polygon must be convex")


def region_meets_zone(region: FeasibleRegion, zone: Sequence[Point]) -> bool:
    poly = _ccw(zone)
    candidates = list(_disk_candidates(region.disks)) + list(poly)
    for disk in region.disks:
        for p, q in _edges(poly):
            candidates.extend(segment_circle_intersections(disk, p, q))
    return any(region.contains(c) and in_polygon(c, poly) for c in candidates)


def region_within_zone(region: FeasibleRegion, zone: Sequence[Point]) -> bool:
    poly = _ccw(zone)
    vertices = [p for p in _disk_candidates(region.disks) if region.contains(p)]
    for n, h in _outward_halfplanes(poly):
        extreme = [(d.center[0] + d.radius * n[0], d.center[1] + d.radius * n[1]) for d in region.disks]
        points = vertices + [p for p in extreme if region.contains(p)]
        if max(n[0] * p[0] + n[1] * p[1] for p in points) > h + TOLERANCE_KM:
            return False
    return True


def verify_within(region: FeasibleRegion, zone: Sequence[Point]) -> Verdict:
    """Decide whether every / no / some feasible location lies in a convex zone."""
    poly = _ccw(zone)
    _check_convex(poly)
    if region.is_empty():
        raise EmptyRegion("distance bounds have no common point")
    if not region_meets_zone(region, poly):
        return Verdict.CONFIRMED_OUTSIDE
    if region_within_zone(region, poly):
        return Verdict.CONFIRMED_INSIDE
    return Verdict.INDETERMINATE


def regular_polygon(center: Point, circumradius: float, sides: int = 16) -> list[Point]:
    return [
        (
            center[0] + circumradius * math.cos(2 * math.pi * k / sides),
            center[1] + circumradius * math.sin(2 * math.pi * k / sides),
        )
        for k in range(sides)
    ]


def measure_bounds(
    stations: Sequence[Station],
    chip: Chip,
    model: LatencyModel,
    keys: KeyDirectory,
    *,
    allowance: float | None = None,
    mode: str = "round_trip",
    rng: random.Random | None = None,
    clock: SimClock | None = None,
) -> list[tuple[Station, float]]:
    """Challenge the chip from every station and turn each rtt into a bound."""
    allowance = chip.processing_allowance if allowance is None else allowance
    out = []
    for station in stations:
        rtt = run_challenge(station, chip, model, keys, rng=rng, clock=clock)
        out.append((station, distance_bound(rtt, allowance, mode=mode)))
    return out
