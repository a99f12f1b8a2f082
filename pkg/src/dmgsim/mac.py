"""ADDTS/TSPEC negotiation, admission control, and CBAP/SP channel access.

The PCP/AP side lives in `Coordinator`; the executors `run_cbap` and
`run_sp` produce transmission logs over one allocation. All decision
points (admission verdicts, SP durations, grouping) accept overrides so
an external policy can replace the baselines.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .radio import LinkState, McsTable, World, spatial_compatibility
from .traffic import FlowQueue
from .schedule import (
    Allocation,
    AllocationKind,
    BiConfig,
    CapacityError,
    MalformedTspec,
    Schedule,
    TSpec,
    place_periodic_allocation,
)


class MacError(Exception):
    pass


@dataclass(frozen=True)
class MacConfig:
    """MAC constants; all of them are scenario-configuration keys."""

    cw_min: int = 15
    cw_max: int = 1023
    slot_us: int = 5
    per_packet_overhead_us: int = 6
    truncation_overhead_us: int = 10
    extension_overhead_us: int = 10
    measurement_overhead_us: int = 50
    mcs_margin_db: float = 2.0
    grouping_margin_db: float = 3.0
    tspec_step_us: int = 500
    tspec_hold_bis: int = 3
    enable_truncation: bool = True
    enable_extension: bool = True
    enable_spatial_sharing: bool = True
    tspec_adaptation: bool = False


def tx_time_us(bits: int, rate_bps: int) -> int:
    """Airtime of a payload, rounded up to whole microseconds."""
    return (bits * 1_000_000 + rate_bps - 1) // rate_bps


class Verdict(str, Enum):
    ACCEPT = "ACCEPT"
    REJECT = "REJECT"
    SUGGEST = "SUGGEST"


@dataclass(frozen=True)
class AddtsRequest:
    request_id: int
    tspec: TSpec
    timestamp_us: int = 0


@dataclass(frozen=True)
class AddtsResponse:
    request_id: int
    verdict: Verdict
    suggested_tspec: Optional[TSpec] = None


class Outcome(str, Enum):
    SUCCESS = "SUCCESS"
    COLLISION = "COLLISION"
    OUTAGE = "OUTAGE"


@dataclass(frozen=True)
class TransmissionRecord:
    time_us: int  # cycle start
    flow_id: int
    bits: int  # > 0 only on SUCCESS
    mcs: Optional[int]
    outcome: Outcome
    duration_us: int
    arrival_us: Optional[int] = None


# ---------------------------------------------------------------------------
# Admission control


def admission_check(
    t: TSpec,
    s: Schedule,
    config: BiConfig,
    duration_us: Optional[int] = None,
) -> bool:
    """True iff every period window keeps room for the requested duration."""
    t.validate(config)
    try:
        place_periodic_allocation(s, t, config, duration_us=duration_us)
    except CapacityError:
        return False
    return True


def suggest_min_duration(t: TSpec, s: Schedule, config: BiConfig) -> Optional[int]:
    """Largest admissible downscaling of the TSPEC minimum duration."""
    if t.min_duration_us <= 1:
        return None

    def fits(d: int) -> bool:
        scaled = replace(t, min_duration_us=d, max_duration_us=max(d, t.max_duration_us))
        return admission_check(scaled, s, config, duration_us=d)

    lo, hi = 1, t.min_duration_us - 1
    if not fits(lo):
        return None
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if fits(mid):
            lo = mid
        else:
            hi = mid - 1
    return lo


@dataclass
class Grant:
    """An accepted TSPEC with its granted duration and frozen placements."""

    tspec: TSpec
    duration_us: int
    allocations: list[Allocation] = field(default_factory=list)


class Coordinator:
    """PCP/AP admission and schedule construction state.

    Placements are frozen when a grant is accepted, so admitting or
    replacing one flow never moves the allocations of the others.
    """

    def __init__(self, bi_config: BiConfig, mac_config: MacConfig):
        self.bi_config = bi_config
        self.mac_config = mac_config
        self.grants: dict[int, Grant] = {}
        self.accept_count = 0
        self.reject_count = 0

    def _frozen_schedule(self, exclude_flow: Optional[int] = None) -> Schedule:
        allocs: list[Allocation] = []
        for flow_id, grant in self.grants.items():
            if flow_id == exclude_flow:
                continue
            allocs.extend(grant.allocations)
        allocs = [replace(a, alloc_id=i) for i, a in enumerate(sorted(allocs, key=lambda a: a.start_offset_us))]
        return Schedule(allocations=allocs)

    def handle_request(
        self,
        req: AddtsRequest,
        verdict_override=None,
    ) -> AddtsResponse:
        """Decide one ADDTS request; an accepted flow replaces any prior grant.

        `verdict_override` may be "ACCEPT", "REJECT" or ("SUGGEST", scale)
        to substitute the admission policy; a forced ACCEPT still requires
        the allocation to fit.
        """
        t = req.tspec
        t.validate(self.bi_config)
        base = self._frozen_schedule(exclude_flow=t.flow_id)
        admissible = admission_check(t, base, self.bi_config)

        verdict: Verdict
        suggested: Optional[TSpec] = None
        if verdict_override == "REJECT":
            verdict = Verdict.REJECT
        elif verdict_override == "ACCEPT":
            verdict = Verdict.ACCEPT if admissible else Verdict.REJECT
        elif isinstance(verdict_override, tuple) and verdict_override[0] == "SUGGEST":
            scale = min(1.0, max(0.0, float(verdict_override[1])))
            d = max(1, int(round(t.min_duration_us * scale)))
            scaled = replace(t, min_duration_us=d, max_duration_us=max(d, t.max_duration_us))
            if admission_check(scaled, base, self.bi_config, duration_us=d):
                verdict, suggested = Verdict.SUGGEST, scaled
            else:
                verdict, suggested = self._baseline_suggest(t, base)
        elif admissible:
            verdict = Verdict.ACCEPT
        else:
            verdict, suggested = self._baseline_suggest(t, base)

        if verdict is Verdict.ACCEPT:
            placed = place_periodic_allocation(
                base, t, self.bi_config, duration_us=t.min_duration_us
            )
            self.grants.pop(t.flow_id, None)
            self.grants[t.flow_id] = Grant(
                tspec=t, duration_us=t.min_duration_us, allocations=placed
            )
            self.accept_count += 1
        elif verdict is Verdict.REJECT:
            self.reject_count += 1
        return AddtsResponse(req.request_id, verdict, suggested)

    def _baseline_suggest(self, t: TSpec, base: Schedule):
        d = suggest_min_duration(t, base, self.bi_config)
        if d is None:
            return Verdict.REJECT, None
        return Verdict.SUGGEST, replace(
            t, min_duration_us=d, max_duration_us=max(d, t.max_duration_us)
        )

    def build_sps(
        self, duration_overrides: Optional[dict[int, int]] = None
    ) -> tuple[list[Allocation], dict[int, int]]:
        """Materialize every grant's placements for the next BI.

        Flows without an override keep their frozen offsets. An override is
        clamped to the TSPEC range and re-placed against the other flows'
        current allocations for this BI only; if it no longer fits, the
        frozen placement is kept.
        """
        overrides = duration_overrides or {}
        current: dict[int, list[Allocation]] = {
            fid: list(g.allocations) for fid, g in self.grants.items()
        }
        for flow_id, grant in self.grants.items():
            if flow_id not in overrides:
                continue
            dur = max(
                grant.tspec.min_duration_us,
                min(grant.tspec.max_duration_us, overrides[flow_id]),
            )
            if dur == grant.duration_us:
                continue
            others = [a for fid, allocs in current.items() if fid != flow_id for a in allocs]
            others = [replace(a, alloc_id=i) for i, a in enumerate(others)]
            base = Schedule(allocations=sorted(others, key=lambda a: a.start_offset_us))
            try:
                current[flow_id] = place_periodic_allocation(
                    base, grant.tspec, self.bi_config, duration_us=dur
                )
            except CapacityError:
                pass  # keep the frozen placement
        alloc_flow: dict[int, int] = {}
        out: list[Allocation] = []
        next_id = 0
        for flow_id in self.grants:
            for a in current[flow_id]:
                out.append(replace(a, alloc_id=next_id))
                alloc_flow[next_id] = flow_id
                next_id += 1
        out.sort(key=lambda a: (a.start_offset_us, a.alloc_id))
        return out, alloc_flow

    def window_bounds(self, alloc_flow: dict[int, int]) -> dict[int, tuple[int, int]]:
        """Period-window bounds for each placed SP (containment limits)."""
        counters: dict[int, int] = {}
        bounds: dict[int, tuple[int, int]] = {}
        for alloc_id in sorted(alloc_flow):
            flow_id = alloc_flow[alloc_id]
            period = self.grants[flow_id].tspec.allocation_period_us
            k = counters.get(flow_id, 0)
            counters[flow_id] = k + 1
            bounds[alloc_id] = (
                max(k * period, self.bi_config.bhi_duration_us),
                (k + 1) * period,
            )
        return bounds


# ---------------------------------------------------------------------------
# CBAP execution (single-class slotted CSMA/CA with binary exponential backoff)


@dataclass
class CbapState:
    """Per-contender backoff state; persists across CBAPs."""

    cw: int
    backoff: Optional[int] = None  # None: draw before next countdown
    retry_count: int = 0


@dataclass
class CbapContender:
    flow_id: int
    queue: "FlowQueue"
    link: LinkState
    rng: np.random.Generator
    state: CbapState
    fallback_rate_bps: int  # airtime basis when the link is in outage


def run_cbap(
    alloc: Allocation,
    contenders: list[CbapContender],
    config: MacConfig,
    window: Optional[tuple[int, int]] = None,
    ingest: Optional[Callable[[int], Optional[int]]] = None,
) -> list[TransmissionRecord]:
    """Contend for the channel over one CBAP; returns the transmission log.

    `ingest(t)` delivers pending arrivals up to t into the contenders'
    queues and returns the next future arrival time (or None).
    """
    if alloc.kind is not AllocationKind.CBAP:
        raise MacError("run_cbap needs a CBAP allocation")
    start, end = window if window else (alloc.start_offset_us, alloc.end_us)
    records: list[TransmissionRecord] = []
    t = start
    while t < end:
        nxt = ingest(t) if ingest else None
        backlogged = [c for c in contenders if c.queue.backlogged]
        if not backlogged:
            if nxt is None or nxt >= end:
                break
            t = max(t, nxt)
            continue
        for c in backlogged:
            if c.state.backoff is None:
                c.state.backoff = int(c.rng.integers(0, c.state.cw + 1))
        zero = [c for c in backlogged if c.state.backoff == 0]
        if not zero:
            if t + config.slot_us > end:
                break
            for c in backlogged:
                c.state.backoff -= 1
            t += config.slot_us
            continue
        # transmission attempt(s) this slot
        cycles = []
        for c in zero:
            mcs = c.link.mcs_at(t)
            rate = c.link.rate_at(t) if mcs is not None else c.fallback_rate_bps
            cycles.append(tx_time_us(c.queue.head().size_bits, rate) + config.per_packet_overhead_us)
        cycle = max(cycles)
        if t + cycle > end:
            break  # does not fit; contenders keep their state for the next CBAP
        if len(zero) == 1:
            c = zero[0]
            mcs = c.link.mcs_at(t)
            if mcs is None:
                records.append(
                    TransmissionRecord(t, c.flow_id, 0, None, Outcome.OUTAGE, cycle)
                )
                c.state.cw = min(2 * c.state.cw + 1, config.cw_max)
                c.state.retry_count += 1
            else:
                pkt = c.queue.pop_head()
                records.append(
                    TransmissionRecord(
                        t, c.flow_id, pkt.size_bits, mcs, Outcome.SUCCESS, cycle, pkt.arrival_us
                    )
                )
                c.state.cw = config.cw_min
                c.state.retry_count = 0
            c.state.backoff = None
        else:
            for c in zero:
                records.append(
                    TransmissionRecord(t, c.flow_id, 0, c.link.mcs_at(t), Outcome.COLLISION, cycle)
                )
                c.state.cw = min(2 * c.state.cw + 1, config.cw_max)
                c.state.retry_count += 1
                c.state.backoff = None
        t += cycle
    return records


# ---------------------------------------------------------------------------
# SP execution


@dataclass(frozen=True)
class SpRun:
    records: tuple[TransmissionRecord, ...]
    end_us: int  # where service stopped
    drained: bool  # queue empty at end_us


def run_sp(
    alloc: Allocation,
    q: FlowQueue,
    link: LinkState,
    config: MacConfig,
    flow_id: Optional[int] = None,
    window: Optional[tuple[int, int]] = None,
    ingest: Optional[Callable[[int], Optional[int]]] = None,
    stop_when_empty: bool = True,
) -> SpRun:
    """Serve one flow back-to-back over its SP (or a sub-window of it).

    Stops at the window end, or as soon as the queue drains when
    `stop_when_empty` (the truncation decision belongs to the caller).
    On outage nothing is delivered and packets stay queued.
    """
    if alloc.kind is not AllocationKind.SP:
        raise MacError("run_sp needs an SP allocation")
    fid = alloc.src_aid if flow_id is None else flow_id
    start, end = window if window else (alloc.start_offset_us, alloc.end_us)
    records: list[TransmissionRecord] = []
    t = start
    outage_logged_at = None
    while t < end:
        nxt = ingest(t) if ingest else None
        if not q.backlogged:
            if stop_when_empty:
                return SpRun(tuple(records), t, True)
            if nxt is None or nxt >= end:
                return SpRun(tuple(records), t, True)
            t = max(t, nxt)
            continue
        mcs = link.mcs_at(t)
        if mcs is None:
            if outage_logged_at != t:
                records.append(TransmissionRecord(t, fid, 0, None, Outcome.OUTAGE, 0))
                outage_logged_at = t
            resume = link.next_change_us(t)
            if resume is None or resume >= end:
                return SpRun(tuple(records), end, False)
            t = resume
            continue
        pkt = q.head()
        cycle = tx_time_us(pkt.size_bits, link.rate_at(t)) + config.per_packet_overhead_us
        if t + cycle > end:
            return SpRun(tuple(records), end, False)
        q.pop_head()
        records.append(
            TransmissionRecord(t, fid, pkt.size_bits, mcs, Outcome.SUCCESS, cycle, pkt.arrival_us)
        )
        t += cycle
    return SpRun(tuple(records), min(t, end), not q.backlogged)


# ---------------------------------------------------------------------------
# SP truncation and extension


@dataclass(frozen=True)
class TruncationEvent:
    alloc_id: int
    sp_end_us: int  # new end, after the signaling overhead
    reclaimed_us: int


@dataclass(frozen=True)
class ExtensionEvent:
    alloc_id: int
    start_us: int  # scheduled SP end
    extension_us: int  # total added time, signaling included
    serves_from_us: int


def maybe_truncate(
    alloc: Allocation, q: FlowQueue, now_us: int, config: MacConfig
) -> Optional[TruncationEvent]:
    """Relinquish the rest of the SP when the queue emptied early."""
    if q.backlogged:
        return None
    new_end = now_us + config.truncation_overhead_us
    if new_end >= alloc.end_us:
        return None
    return TruncationEvent(alloc.alloc_id, new_end, alloc.end_us - new_end)


def residual_demand_us(q: FlowQueue, rate_bps: int, config: MacConfig) -> int:
    """Time to drain the current queue at the given rate, overheads included."""
    total = 0
    for pkt in q.packets:
        total += tx_time_us(pkt.size_bits, rate_bps) + config.per_packet_overhead_us
    return total


def maybe_extend(
    alloc: Allocation,
    q: FlowQueue,
    link: LinkState,
    tspec: TSpec,
    gap_after_us: int,
    contender_backlogged: bool,
    config: MacConfig,
) -> Optional[ExtensionEvent]:
    """Extend a finished SP into the following idle time.

    `gap_after_us` is the free (or idle-CBAP) time right after the SP;
    a backlogged contender in that CBAP vetoes the extension.
    """
    if not q.backlogged or contender_backlogged or alloc.spatial_group is not None:
        return None
    mcs = link.mcs_at(alloc.end_us)
    if mcs is None:
        return None
    cap = tspec.max_duration_us - alloc.duration_us
    if cap <= config.extension_overhead_us:
        return None
    demand = config.extension_overhead_us + residual_demand_us(q, link.rate_at(alloc.end_us), config)
    ext = min(demand, gap_after_us, cap)
    if ext <= config.extension_overhead_us:
        return None
    return ExtensionEvent(
        alloc.alloc_id,
        alloc.end_us,
        ext,
        alloc.end_us + config.extension_overhead_us,
    )


# ---------------------------------------------------------------------------
# Spatial sharing


@dataclass(frozen=True)
class SpatialGroup:
    group_id: int
    alloc_ids: tuple[int, ...]
    start_us: int


def form_spatial_groups(
    sps: list[Allocation],
    links_by_alloc: dict[int, LinkState],
    world: World,
    table: McsTable,
    config: MacConfig,
    window_bounds: Optional[dict[int, tuple[int, int]]] = None,
    pair_allowed: Optional[Callable[[Allocation, Allocation], bool]] = None,
) -> tuple[list[Allocation], list[SpatialGroup]]:
    """Greedily overlap low-cross-interference SPs into shared groups.

    Members of a group are moved to the seed SP's start and each gets a
    leading `measurement_overhead_us` before data flows (the measurement
    cost of sharing). Groups are pairwise-complete: every pair of members
    passed the SINR compatibility check. Ties break toward lower alloc ids.
    """
    allocs = [replace(a) for a in sps]
    allocs.sort(key=lambda a: a.alloc_id)
    oh = config.measurement_overhead_us
    groups: list[SpatialGroup] = []
    next_group = 0

    def stations(a: Allocation) -> set:
        return {a.src_aid, a.dst_aid}

    def fits_at(x: Allocation, s: int, members: list[Allocation]) -> bool:
        lo, hi = (window_bounds or {}).get(x.alloc_id, (0, 1 << 62))
        new_end = s + oh + x.duration_us
        if s < lo or new_end > hi:
            return False
        member_ids = {m.alloc_id for m in members} | {x.alloc_id}
        for other in allocs:
            if other.alloc_id in member_ids:
                continue
            if s < other.end_us and other.start_offset_us < new_end:
                return False
        return True

    for i, seed in enumerate(allocs):
        if seed.spatial_group is not None:
            continue
        members = [seed]
        s = seed.start_offset_us
        for cand in allocs[i + 1 :]:
            if cand.spatial_group is not None:
                continue
            if any(stations(cand) & stations(m) for m in members):
                continue
            if pair_allowed and not all(pair_allowed(m, cand) for m in members):
                continue
            if not all(
                spatial_compatibility(
                    links_by_alloc[m.alloc_id],
                    links_by_alloc[cand.alloc_id],
                    world,
                    table,
                    config.grouping_margin_db,
                )
                for m in members
            ):
                continue
            if len(members) == 1 and not fits_at(seed, s, members + [cand]):
                continue
            if not fits_at(cand, s, members + [cand]):
                continue
            members.append(cand)
        if len(members) > 1:
            gid = next_group
            next_group += 1
            for m in members:
                m.spatial_group = gid
                m.start_offset_us = s
                m.duration_us = oh + m.duration_us
            groups.append(SpatialGroup(gid, tuple(m.alloc_id for m in members), s))
    allocs.sort(key=lambda a: (a.start_offset_us, a.alloc_id))
    return allocs, groups


# ---------------------------------------------------------------------------
# STA-side TSPEC adaptation


@dataclass
class TspecAdapter:
    """Hysteresis controller proposing TSPEC updates from observed delay."""

    config: MacConfig
    low_streak: int = 0

    def update(
        self, tspec: TSpec, p95_delay_us: float, floor_us: int
    ) -> Optional[TSpec]:
        """New TSPEC to request, or None inside the hysteresis band.

        `floor_us` is one max-size packet transmission time at the
        current MCS; the minimum duration never drops below it.
        """
        if tspec.delay_target_us is None:
            return None
        target = tspec.delay_target_us
        if p95_delay_us > target:
            self.low_streak = 0
            if tspec.min_duration_us >= tspec.max_duration_us:
                return None
            new_min = min(
                tspec.max_duration_us, tspec.min_duration_us + self.config.tspec_step_us
            )
            return replace(tspec, min_duration_us=new_min)
        if p95_delay_us < 0.5 * target:
            self.low_streak += 1
            if self.low_streak < self.config.tspec_hold_bis:
                return None
            self.low_streak = 0
            floor = max(1, floor_us)
            if tspec.min_duration_us <= floor:
                return None
            new_min = max(floor, tspec.min_duration_us - self.config.tspec_step_us)
            return replace(tspec, min_duration_us=new_min)
        self.low_streak = 0
        return None


def update_tspec(
    tspec: TSpec,
    p95_delay_us: float,
    adapter: TspecAdapter,
    floor_us: int,
) -> Optional[TSpec]:
    return adapter.update(tspec, p95_delay_us, floor_us)
