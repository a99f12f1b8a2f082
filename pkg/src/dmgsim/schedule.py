"""Beacon-interval timeline: allocations, validation, periodic SP placement, ESE records.

All times are integer microseconds relative to the start of the beacon
interval. A beacon interval (BI) starts with an opaque header interval
(BHI) followed by the data transmission interval (DTI), which holds
contention-based (CBAP) and contention-free (SP) allocations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional


class ScheduleError(Exception):
    """Base error for schedule construction."""


class OverlapError(ScheduleError):
    pass


class BoundsError(ScheduleError):
    pass


class CapacityError(ScheduleError):
    """A period window cannot fit the requested minimum duration."""


class MalformedTspec(ScheduleError):
    pass


class AllocationKind(str, Enum):
    CBAP = "CBAP"
    SP = "SP"


@dataclass(frozen=True)
class BiConfig:
    """Fixed structure of every beacon interval."""

    bi_duration_us: int = 100_000
    bhi_duration_us: int = 2_000
    guard_time_us: int = 1
    default_cbap: bool = True

    def __post_init__(self):
        if self.bhi_duration_us < 0 or self.bi_duration_us <= self.bhi_duration_us:
            raise BoundsError(
                f"need biDuration > bhiDuration >= 0, got {self.bi_duration_us}/{self.bhi_duration_us}"
            )
        if self.guard_time_us < 0:
            raise BoundsError("guardTime must be >= 0")

    @property
    def dti_duration_us(self) -> int:
        return self.bi_duration_us - self.bhi_duration_us


@dataclass
class Allocation:
    """One CBAP or SP entry in the beacon-interval timeline.

    Allocations sharing a spatial_group may overlap in time; everything
    else must be pairwise disjoint.
    """

    alloc_id: int
    kind: AllocationKind
    start_offset_us: int
    duration_us: int
    src_aid: Optional[int] = None
    dst_aid: Optional[int] = None
    spatial_group: Optional[int] = None

    @property
    def end_us(self) -> int:
        return self.start_offset_us + self.duration_us

    def overlaps(self, other: "Allocation") -> bool:
        return self.start_offset_us < other.end_us and other.start_offset_us < self.end_us

    def same_group(self, other: "Allocation") -> bool:
        return (
            self.spatial_group is not None
            and other.spatial_group is not None
            and self.spatial_group == other.spatial_group
        )


@dataclass(frozen=True)
class TSpec:
    """A flow's allocation request: periodic SPs with a duration range."""

    flow_id: int
    src_aid: int
    dst_aid: int
    allocation_period_us: int
    min_duration_us: int
    max_duration_us: int
    delay_target_us: Optional[int] = None

    def validate(self, config: BiConfig) -> None:
        if not (0 < self.min_duration_us <= self.max_duration_us <= self.allocation_period_us):
            raise MalformedTspec(
                f"flow {self.flow_id}: need 0 < min <= max <= period, got "
                f"{self.min_duration_us}/{self.max_duration_us}/{self.allocation_period_us}"
            )
        if self.allocation_period_us > config.bi_duration_us:
            raise MalformedTspec(
                f"flow {self.flow_id}: allocationPeriod exceeds biDuration"
            )
        if self.src_aid == self.dst_aid:
            raise MalformedTspec(f"flow {self.flow_id}: srcAid == dstAid")


@dataclass
class Schedule:
    """The allocations of one beacon interval, sorted by start offset."""

    bi_index: int = 0
    allocations: list[Allocation] = field(default_factory=list)

    def sps(self) -> list[Allocation]:
        return [a for a in self.allocations if a.kind is AllocationKind.SP]

    def cbaps(self) -> list[Allocation]:
        return [a for a in self.allocations if a.kind is AllocationKind.CBAP]

    def next_alloc_id(self) -> int:
        return max((a.alloc_id for a in self.allocations), default=-1) + 1


@dataclass(frozen=True)
class Violation:
    kind: str  # "bounds" | "overlap" | "order" | "aids" | "ids"
    alloc_ids: tuple[int, ...]
    detail: str


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    violations: tuple[Violation, ...] = ()


def _allocation_violations(a: Allocation, config: BiConfig) -> list[Violation]:
    out = []
    if a.duration_us <= 0:
        out.append(Violation("bounds", (a.alloc_id,), "duration must be > 0"))
    if a.start_offset_us < config.bhi_duration_us:
        out.append(Violation("bounds", (a.alloc_id,), "starts inside the BHI"))
    if a.end_us > config.bi_duration_us:
        out.append(Violation("bounds", (a.alloc_id,), "ends past the BI"))
    if a.kind is AllocationKind.SP and (a.src_aid is None or a.dst_aid is None):
        out.append(Violation("aids", (a.alloc_id,), "SP needs both srcAid and dstAid"))
    return out


def validate_schedule(s: Schedule, config: BiConfig) -> ValidationResult:
    """Check every Schedule invariant; violations are returned, never raised."""
    violations: list[Violation] = []
    for a in s.allocations:
        violations.extend(_allocation_violations(a, config))
    starts = [a.start_offset_us for a in s.allocations]
    is_sorted = starts == sorted(starts)
    if not is_sorted:
        violations.append(Violation("order", (), "allocations not sorted by startOffset"))
    ids = [a.alloc_id for a in s.allocations]
    if len(set(ids)) != len(ids):
        violations.append(Violation("ids", (), "allocation ids not unique"))
    allocs = s.allocations
    for i in range(len(allocs)):
        for j in range(i + 1, len(allocs)):
            a, b = allocs[i], allocs[j]
            if is_sorted and b.start_offset_us >= a.end_us:
                break  # sorted: no later allocation can overlap a
            if a.overlaps(b) and not a.same_group(b):
                violations.append(
                    Violation("overlap", (a.alloc_id, b.alloc_id), "ungrouped allocations overlap")
                )
    return ValidationResult(ok=not violations, violations=tuple(violations))


def _merge_spans(spans: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    merged: list[tuple[int, int]] = []
    for lo, hi in sorted(spans):
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def _merged_busy_intervals(allocs: Iterable[Allocation]) -> list[tuple[int, int]]:
    return _merge_spans((a.start_offset_us, a.end_us) for a in allocs)


def busy_time_us(allocs: Iterable[Allocation]) -> int:
    """Total time covered by allocations, overlaps counted once."""
    return sum(hi - lo for lo, hi in _merged_busy_intervals(allocs))


def build_beacon_interval(config: BiConfig, sps: list[Allocation], bi_index: int = 0) -> Schedule:
    """Assemble a BI schedule from SPs, filling idle DTI gaps with CBAPs.

    Gaps shorter than one guard interval are left idle. Raises
    OverlapError / BoundsError when the input SPs are inconsistent.
    """
    for a in sps:
        bad = _allocation_violations(a, config)
        if bad:
            raise BoundsError(f"allocation {a.alloc_id}: {bad[0].detail}")
    ordered = sorted(sps, key=lambda a: (a.start_offset_us, a.alloc_id))
    for i in range(len(ordered)):
        for j in range(i + 1, len(ordered)):
            a, b = ordered[i], ordered[j]
            if b.start_offset_us >= a.end_us:
                break
            if a.overlaps(b) and not a.same_group(b):
                raise OverlapError(f"allocations {a.alloc_id} and {b.alloc_id} overlap")
    allocations = list(ordered)
    if config.default_cbap:
        next_id = max((a.alloc_id for a in sps), default=-1) + 1
        min_gap = max(config.guard_time_us, 1)
        cursor = config.bhi_duration_us
        for lo, hi in _merged_busy_intervals(ordered) + [(config.bi_duration_us, config.bi_duration_us)]:
            if lo - cursor >= min_gap:
                allocations.append(
                    Allocation(next_id, AllocationKind.CBAP, cursor, lo - cursor)
                )
                next_id += 1
            cursor = max(cursor, hi)
    allocations.sort(key=lambda a: (a.start_offset_us, a.alloc_id))
    return Schedule(bi_index=bi_index, allocations=allocations)


def _blocked_intervals(existing: Iterable[Allocation], guard_us: int) -> list[tuple[int, int]]:
    # Existing allocations expanded by the guard time on both sides.
    return _merge_spans((a.start_offset_us - guard_us, a.end_us + guard_us) for a in existing)


def _earliest_fit(blocked: list[tuple[int, int]], lo: int, hi: int, dur: int) -> Optional[int]:
    """Earliest start in [lo, hi - dur] whose [start, start+dur) avoids blocked spans."""
    start = lo
    for b_lo, b_hi in blocked:
        if b_hi <= start:
            continue
        if b_lo >= start + dur:
            break
        start = b_hi
        if start + dur > hi:
            return None
    return start if start + dur <= hi else None


def place_periodic_allocation(
    s: Schedule,
    t: TSpec,
    config: BiConfig,
    duration_us: Optional[int] = None,
    next_alloc_id: Optional[int] = None,
) -> list[Allocation]:
    """Place one SP per period window, earliest-fit, for an accepted TSPEC.

    Returns floor(biDuration / allocationPeriod) SP instances. The placed
    duration defaults to the TSPEC minimum and is clamped to the TSPEC
    range. Raises CapacityError when a window cannot fit it.
    """
    t.validate(config)
    dur = t.min_duration_us if duration_us is None else duration_us
    dur = max(t.min_duration_us, min(t.max_duration_us, dur))
    period = t.allocation_period_us
    n = config.bi_duration_us // period
    blocked = _blocked_intervals(s.allocations, config.guard_time_us)
    next_id = s.next_alloc_id() if next_alloc_id is None else next_alloc_id
    placed: list[Allocation] = []
    for k in range(n):
        lo = max(k * period, config.bhi_duration_us)
        hi = (k + 1) * period
        start = _earliest_fit(blocked, lo, hi, dur)
        if start is None:
            raise CapacityError(
                f"flow {t.flow_id}: window {k} cannot fit {dur} us"
            )
        alloc = Allocation(
            alloc_id=next_id,
            kind=AllocationKind.SP,
            start_offset_us=start,
            duration_us=dur,
            src_aid=t.src_aid,
            dst_aid=t.dst_aid,
        )
        placed.append(alloc)
        next_id += 1
        blocked = _merge_spans(
            blocked + [(start - config.guard_time_us, start + dur + config.guard_time_us)]
        )
    return placed


@dataclass(frozen=True)
class EseRecord:
    """One extended-schedule entry announced in the beacon."""

    alloc_id: int
    kind: str
    src_aid: Optional[int]
    dst_aid: Optional[int]
    start_offset_us: int
    duration_us: int
    spatial_group: Optional[int]

    def to_dict(self) -> dict:
        return {
            "allocId": self.alloc_id,
            "kind": self.kind,
            "srcAid": self.src_aid,
            "dstAid": self.dst_aid,
            "startOffset": self.start_offset_us,
            "duration": self.duration_us,
            "spatialGroup": self.spatial_group,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EseRecord":
        return cls(
            alloc_id=d["allocId"],
            kind=d["kind"],
            src_aid=d["srcAid"],
            dst_aid=d["dstAid"],
            start_offset_us=d["startOffset"],
            duration_us=d["duration"],
            spatial_group=d["spatialGroup"],
        )


def serialize_ese(s: Schedule) -> list[EseRecord]:
    """One record per allocation, preserving startOffset order."""
    return [
        EseRecord(
            alloc_id=a.alloc_id,
            kind=a.kind.value,
            src_aid=a.src_aid,
            dst_aid=a.dst_aid,
            start_offset_us=a.start_offset_us,
            duration_us=a.duration_us,
            spatial_group=a.spatial_group,
        )
        for a in s.allocations
    ]


def parse_ese(records: list[EseRecord], bi_index: int = 0) -> Schedule:
    return Schedule(
        bi_index=bi_index,
        allocations=[
            Allocation(
                alloc_id=r.alloc_id,
                kind=AllocationKind(r.kind),
                start_offset_us=r.start_offset_us,
                duration_us=r.duration_us,
                src_aid=r.src_aid,
                dst_aid=r.dst_aid,
                spatial_group=r.spatial_group,
            )
            for r in records
        ],
    )


def doze_intervals(s: Schedule, config: BiConfig, aid: int) -> list[tuple[int, int]]:
    """DTI spans where a station is named in no SP and no CBAP is open.

    Stations can power down during other pairs' SPs.
    """
    awake = [
        a
        for a in s.allocations
        if a.kind is AllocationKind.CBAP or aid in (a.src_aid, a.dst_aid)
    ]
    out: list[tuple[int, int]] = []
    cursor = config.bhi_duration_us
    for lo, hi in _merged_busy_intervals(awake) + [(config.bi_duration_us, config.bi_duration_us)]:
        if lo > cursor:
            out.append((cursor, lo))
        cursor = max(cursor, hi)
    return out
