"""Deterministic discrete-event loop stepped one beacon interval at a time.

Every random draw comes from a per-(purpose, flow) substream of the
scenario seed, so the event trace is a pure function of the scenario.
The batch entry point `run` and the RL environment both drive the same
`Simulation.advance_bi`; a None action reproduces the baseline policies.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .config import Scenario
from .mac import (
    AddtsRequest,
    AddtsResponse,
    CbapContender,
    CbapState,
    Coordinator,
    MacConfig,
    Outcome,
    TspecAdapter,
    Verdict,
    form_spatial_groups,
    maybe_extend,
    maybe_truncate,
    run_cbap,
    run_sp,
    tx_time_us,
)
from .metrics import MetricsReport, collect_metrics, jain_index
from .radio import BlockageEvent, LinkState, McsTable, World, resolve_link, select_mcs
from .schedule import (
    Allocation,
    AllocationKind,
    BiConfig,
    Schedule,
    TSpec,
    build_beacon_interval,
    serialize_ese,
    validate_schedule,
)
from .traffic import FlowQueue, Packet, TrafficSource, packet_stream

EWMA_ALPHA = 0.2

# substream purposes for seed derivation
_STREAM_ARRIVAL = 1
_STREAM_BACKOFF = 2


class EngineError(Exception):
    pass


def _flow_rng(seed: int, purpose: int, flow_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(purpose, flow_id)))


class LinkTimeline:
    """Piecewise-constant link state derived from scheduled blockage events."""

    def __init__(
        self,
        base: LinkState,
        events: list[BlockageEvent],
        table: McsTable,
        margin_db: float,
    ):
        self.base = base
        edges = sorted({0} | {e.start_us for e in events} | {e.end_us for e in events})
        self._starts: list[int] = []
        self._mcs: list[Optional[int]] = []
        self._rate: list[int] = []
        self._att: list[float] = []
        for t in edges:
            att = sum(e.attenuation_db for e in events if e.start_us <= t < e.end_us)
            mcs = select_mcs(base.base_snr_db - att, table, margin_db)
            self._starts.append(t)
            self._mcs.append(mcs)
            self._rate.append(table.rate_bps(mcs) if mcs is not None else 0)
            self._att.append(att)

    def _seg(self, t_us: int) -> int:
        return bisect.bisect_right(self._starts, t_us) - 1

    def mcs_at(self, t_us: int) -> Optional[int]:
        return self._mcs[self._seg(t_us)]

    def rate_at(self, t_us: int) -> int:
        return self._rate[self._seg(t_us)]

    def next_change_us(self, t_us: int) -> Optional[int]:
        i = bisect.bisect_right(self._starts, t_us)
        return self._starts[i] if i < len(self._starts) else None

    def state_at(self, t_us: int) -> LinkState:
        i = self._seg(t_us)
        return replace(
            self.base,
            attenuation_db=self._att[i],
            mcs=self._mcs[i],
            phy_rate_bps=self._rate[i],
        )


@dataclass
class Action:
    """Per-BI decision overrides; every field is optional.

    admission_verdicts: requestId -> "ACCEPT" | "REJECT" | ("SUGGEST", scale)
    duration_adjust:    flowId -> SP duration (us) for the BI being built
    spatial_toggles:    (flowA, flowB) -> False forbids grouping the pair
    tspec_updates:      flowId -> (allocationPeriodUs, minDurationUs) proposal
    """

    admission_verdicts: dict[int, object] = field(default_factory=dict)
    duration_adjust: dict[int, int] = field(default_factory=dict)
    spatial_toggles: dict[tuple[int, int], bool] = field(default_factory=dict)
    tspec_updates: dict[int, tuple[int, int]] = field(default_factory=dict)


@dataclass
class BiResult:
    bi_index: int
    start_us: int
    ese: list[dict]
    responses: list[dict]
    per_flow: dict[int, dict]
    busy_us: int
    utilization: float
    reward_terms: dict[str, float]
    notes: list[str]
    pending_after: list[dict]


class _FlowRuntime:
    def __init__(self, spec, seed: int, horizon_us: int, link: LinkTimeline, base_rate: int):
        src: TrafficSource = spec.source
        self.source = src
        self.flow_id = src.flow_id
        self.queue = FlowQueue(src.flow_id, spec.queue_capacity_bytes)
        self.link = link
        self.stream = packet_stream(src, _flow_rng(seed, _STREAM_ARRIVAL, src.flow_id), horizon_us)
        self.next_pkt: Optional[tuple[int, int]] = next(self.stream, None)
        self.cbap = CbapContender(
            flow_id=src.flow_id,
            queue=self.queue,
            link=link,
            rng=_flow_rng(seed, _STREAM_BACKOFF, src.flow_id),
            state=CbapState(cw=0),  # cw set from MacConfig by the engine
            fallback_rate_bps=base_rate,
        )
        self.adapter: Optional[TspecAdapter] = None
        self.ewma_rate_bps = 0.0
        # per-BI counters, reset each interval
        self.bi_arrived_bits = 0
        self.bi_dropped_bits = 0
        self.bi_dropped_packets = 0
        self.bi_delivered_bits = 0
        self.bi_delays: list[int] = []
        self.bi_allocated_us = 0

    def reset_bi_counters(self) -> None:
        self.bi_arrived_bits = 0
        self.bi_dropped_bits = 0
        self.bi_dropped_packets = 0
        self.bi_delivered_bits = 0
        self.bi_delays = []
        self.bi_allocated_us = 0


@dataclass
class _ExecUnit:
    kind: str  # "sp" | "cbap" | "group"
    start_us: int
    end_us: int
    allocs: list[Allocation]  # singletons hold one entry
    flow_ids: list[int]


class Simulation:
    """One scenario's simulation state, advanced one beacon interval per call."""

    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.bi_cfg: BiConfig = scenario.bi
        self.mac_cfg: MacConfig = scenario.mac
        self.table = scenario.mcs_table
        self.world: World = scenario.world()
        self.coordinator = Coordinator(self.bi_cfg, self.mac_cfg)
        self.bi_index = 0
        self.trace: list[dict] = []
        self._bi_buf: list[dict] = []
        self._next_request_id = 0
        self._next_ordinal = 0
        self.pending: list[AddtsRequest] = []
        self._scenario_delay_targets = {
            t.flow_id: t.delay_target_us for t in scenario.tspecs
        }

        horizon = scenario.sim.duration_us
        blockages_by_link: dict[tuple[int, int], list[BlockageEvent]] = {}
        for b in scenario.blockages:
            blockages_by_link.setdefault((b.src_aid, b.dst_aid), []).append(b)

        self.flows: dict[int, _FlowRuntime] = {}
        for spec in scenario.flows:
            src = spec.source
            base = resolve_link(
                self.world, src.src_aid, src.dst_aid, self.table, self.mac_cfg.mcs_margin_db
            )
            link = LinkTimeline(
                base,
                blockages_by_link.get((src.src_aid, src.dst_aid), []),
                self.table,
                self.mac_cfg.mcs_margin_db,
            )
            fr = _FlowRuntime(spec, scenario.sim.seed, horizon, link, self.table.rate_bps(0))
            fr.cbap.state.cw = self.mac_cfg.cw_min
            if self.mac_cfg.tspec_adaptation:
                fr.adapter = TspecAdapter(self.mac_cfg)
            self.flows[src.flow_id] = fr

        self.trace.append(
            {
                "time": 0,
                "type": "run_info",
                "simDurationUs": scenario.sim.duration_us,
                "biDurationUs": self.bi_cfg.bi_duration_us,
                "bhiDurationUs": self.bi_cfg.bhi_duration_us,
                "nBis": scenario.n_bis,
                "seed": scenario.sim.seed,
                "flowIds": sorted(self.flows),
            }
        )

        # initial TSPECs were negotiated before the run; they take effect in
        # BI 0, processed in flow-id order (deterministic tie-break)
        for t in sorted(scenario.tspecs, key=lambda t: t.flow_id):
            self._decide(AddtsRequest(self._take_request_id(), t, 0), None, initial=True)
        self._flush_bi_buffer()

    # ------------------------------------------------------------------ utils

    def _take_request_id(self) -> int:
        rid = self._next_request_id
        self._next_request_id += 1
        return rid

    def _emit(self, rec: dict) -> None:
        # emission order is the tie-breaking ordinal; (time, ordinal) is total
        rec["ordinal"] = self._next_ordinal
        self._next_ordinal += 1
        self._bi_buf.append(rec)

    def _flush_bi_buffer(self) -> None:
        self._bi_buf.sort(key=lambda r: (r["time"], r["ordinal"]))
        self.trace.extend(self._bi_buf)
        self._bi_buf = []

    @property
    def finished(self) -> bool:
        return self.bi_index >= self.sc.n_bis

    def submit_request(self, tspec: TSpec, timestamp_us: Optional[int] = None) -> int:
        """Queue an ADDTS request; it is decided at the next BI boundary."""
        ts = self.bi_index * self.bi_cfg.bi_duration_us if timestamp_us is None else timestamp_us
        req = AddtsRequest(self._take_request_id(), tspec, ts)
        self.pending.append(req)
        return req.request_id

    # -------------------------------------------------------------- ingestion

    def _ingest_flow(self, fr: _FlowRuntime, t_us: int) -> Optional[int]:
        while fr.next_pkt is not None and fr.next_pkt[0] <= t_us:
            at, bits = fr.next_pkt
            self._emit({"time": at, "type": "arrival", "flowId": fr.flow_id, "bits": bits})
            fr.bi_arrived_bits += bits
            if not fr.queue.enqueue(Packet(at, bits)):
                fr.bi_dropped_bits += bits
                fr.bi_dropped_packets += 1
                self._emit({"time": at, "type": "drop", "flowId": fr.flow_id, "bits": bits})
            fr.next_pkt = next(fr.stream, None)
        return fr.next_pkt[0] if fr.next_pkt else None

    def _ingest_many(self, frs: list[_FlowRuntime], t_us: int) -> Optional[int]:
        nxt = None
        for fr in frs:
            n = self._ingest_flow(fr, t_us)
            if n is not None and (nxt is None or n < nxt):
                nxt = n
        return nxt

    # -------------------------------------------------------------- decisions

    def _decide(self, req: AddtsRequest, override, initial: bool = False) -> AddtsResponse:
        resp = self.coordinator.handle_request(req, override)
        self._emit(
            {
                "time": req.timestamp_us if initial else self.bi_index * self.bi_cfg.bi_duration_us,
                "type": "addts",
                "requestId": req.request_id,
                "flowId": req.tspec.flow_id,
                "verdict": resp.verdict.value,
                "minDurationUs": req.tspec.min_duration_us,
                "suggestedMinDurationUs": (
                    resp.suggested_tspec.min_duration_us if resp.suggested_tspec else None
                ),
            }
        )
        if resp.verdict is Verdict.SUGGEST and resp.suggested_tspec is not None:
            # baseline STA behavior: take what the coordinator offers
            if initial:
                self._decide(
                    AddtsRequest(self._take_request_id(), resp.suggested_tspec, req.timestamp_us),
                    None,
                    initial=True,
                )
            else:
                self.pending.append(
                    AddtsRequest(
                        self._take_request_id(),
                        resp.suggested_tspec,
                        self.bi_index * self.bi_cfg.bi_duration_us,
                    )
                )
        return resp

    def _apply_action_updates(self, action: Action, t0: int, notes: list[str]) -> None:
        for flow_id in sorted(action.tspec_updates):
            if flow_id not in self.flows:
                notes.append(f"tspecUpdates.{flow_id}: unknown flow, ignored")
                continue
            period, min_dur = action.tspec_updates[flow_id]
            grant = self.coordinator.grants.get(flow_id)
            fr = self.flows[flow_id]
            base = (
                grant.tspec
                if grant
                else TSpec(
                    flow_id=flow_id,
                    src_aid=fr.source.src_aid,
                    dst_aid=fr.source.dst_aid,
                    allocation_period_us=self.bi_cfg.bi_duration_us,
                    min_duration_us=1,
                    max_duration_us=self.bi_cfg.bi_duration_us,
                )
            )
            period_c = max(1, min(int(period), self.bi_cfg.bi_duration_us))
            min_c = max(1, min(int(min_dur), period_c))
            max_c = max(base.max_duration_us, min_c)
            max_c = min(max_c, period_c)
            if (period_c, min_c) != (period, min_dur):
                notes.append(f"tspecUpdates.{flow_id}: clamped to ({period_c}, {min_c})")
            self.pending.append(
                AddtsRequest(
                    self._take_request_id(),
                    replace(
                        base,
                        allocation_period_us=period_c,
                        min_duration_us=min_c,
                        max_duration_us=max_c,
                    ),
                    t0,
                )
            )

    # -------------------------------------------------------------- execution

    def _build_units(self, schedule: Schedule, alloc_flow: dict[int, int], t0: int) -> list[_ExecUnit]:
        units: list[_ExecUnit] = []
        seen_groups: dict[int, _ExecUnit] = {}
        for a in schedule.allocations:
            abs_a = replace(a, start_offset_us=t0 + a.start_offset_us)
            if a.kind is AllocationKind.CBAP:
                units.append(_ExecUnit("cbap", abs_a.start_offset_us, abs_a.end_us, [abs_a], []))
            elif a.spatial_group is not None:
                unit = seen_groups.get(a.spatial_group)
                if unit is None:
                    unit = _ExecUnit("group", abs_a.start_offset_us, abs_a.end_us, [], [])
                    seen_groups[a.spatial_group] = unit
                    units.append(unit)
                unit.allocs.append(abs_a)
                unit.flow_ids.append(alloc_flow[a.alloc_id])
                unit.end_us = max(unit.end_us, abs_a.end_us)
            else:
                units.append(
                    _ExecUnit("sp", abs_a.start_offset_us, abs_a.end_us, [abs_a], [alloc_flow[a.alloc_id]])
                )
        units.sort(key=lambda u: (u.start_us, u.allocs[0].alloc_id))
        return units

    def _record_tx(self, recs, fr: _FlowRuntime, busy: list[tuple[int, int]]) -> None:
        for r in recs:
            self._emit(
                {
                    "time": r.time_us,
                    "type": "tx",
                    "flowId": r.flow_id,
                    "bits": r.bits,
                    "mcs": r.mcs,
                    "outcome": r.outcome.value,
                    "duration": r.duration_us,
                }
            )
            if r.duration_us > 0:
                busy.append((r.time_us, r.time_us + r.duration_us))
            if r.outcome is Outcome.SUCCESS:
                fr.bi_delivered_bits += r.bits
                fr.bi_delays.append(r.time_us + r.duration_us - r.arrival_us)

    def _execute_sp_unit(
        self,
        unit: _ExecUnit,
        units: list[_ExecUnit],
        idx: int,
        busy: list[tuple[int, int]],
        cbap_flows: list[_FlowRuntime],
        t0: int,
    ) -> None:
        alloc = unit.allocs[0]
        fr = self.flows[unit.flow_ids[0]]
        grant = self.coordinator.grants.get(fr.flow_id)
        ingest = lambda t: self._ingest_flow(fr, t)  # noqa: E731
        cursor = alloc.start_offset_us
        while True:
            res = run_sp(
                alloc,
                fr.queue,
                fr.link,
                self.mac_cfg,
                flow_id=fr.flow_id,
                window=(cursor, alloc.end_us),
                ingest=ingest,
                stop_when_empty=self.mac_cfg.enable_truncation,
            )
            self._record_tx(res.records, fr, busy)
            cursor = res.end_us
            if not res.drained or cursor >= alloc.end_us:
                break
            if self.mac_cfg.enable_truncation:
                ev = maybe_truncate(alloc, fr.queue, cursor, self.mac_cfg)
                if ev is not None:
                    busy.append((cursor, ev.sp_end_us))
                    self._emit(
                        {
                            "time": cursor,
                            "type": "sp_truncated",
                            "flowId": fr.flow_id,
                            "allocId": alloc.alloc_id,
                            "reclaimedUs": ev.reclaimed_us,
                        }
                    )
                    if self.bi_cfg.default_cbap:
                        units.insert(
                            idx + 1,
                            _ExecUnit(
                                "cbap",
                                ev.sp_end_us,
                                alloc.end_us,
                                [
                                    Allocation(
                                        alloc_id=-1,
                                        kind=AllocationKind.CBAP,
                                        start_offset_us=ev.sp_end_us,
                                        duration_us=alloc.end_us - ev.sp_end_us,
                                    )
                                ],
                                [],
                            ),
                        )
                    return
            # too late to truncate: idle until the next arrival, then keep serving
            prev = cursor
            res = run_sp(
                alloc,
                fr.queue,
                fr.link,
                self.mac_cfg,
                flow_id=fr.flow_id,
                window=(cursor, alloc.end_us),
                ingest=ingest,
                stop_when_empty=False,
            )
            self._record_tx(res.records, fr, busy)
            cursor = res.end_us
            if cursor >= alloc.end_us or cursor == prev:
                break

        # scheduled end reached; try the extension service
        if not self.mac_cfg.enable_extension or grant is None:
            return
        self._ingest_flow(fr, alloc.end_us)
        if not fr.queue.backlogged:
            return
        nxt = units[idx + 1] if idx + 1 < len(units) else None
        bi_end = t0 + self.bi_cfg.bi_duration_us
        contender_backlogged = False
        if nxt is None:
            gap = bi_end - alloc.end_us
        elif nxt.kind == "cbap" and nxt.start_us <= alloc.end_us:
            self._ingest_many(cbap_flows, alloc.end_us)
            contender_backlogged = any(f.queue.backlogged for f in cbap_flows)
            gap = nxt.end_us - alloc.end_us
        else:
            gap = nxt.start_us - alloc.end_us
        ev = maybe_extend(
            alloc, fr.queue, fr.link, grant.tspec, gap, contender_backlogged, self.mac_cfg
        )
        if ev is None:
            return
        busy.append((ev.start_us, ev.serves_from_us))
        self._emit(
            {
                "time": ev.start_us,
                "type": "sp_extended",
                "flowId": fr.flow_id,
                "allocId": alloc.alloc_id,
                "extensionUs": ev.extension_us,
            }
        )
        res = run_sp(
            alloc,
            fr.queue,
            fr.link,
            self.mac_cfg,
            flow_id=fr.flow_id,
            window=(ev.serves_from_us, ev.start_us + ev.extension_us),
            ingest=ingest,
            stop_when_empty=True,
        )
        self._record_tx(res.records, fr, busy)
        if nxt is not None and nxt.kind == "cbap" and nxt.start_us < ev.start_us + ev.extension_us:
            new_start = ev.start_us + ev.extension_us
            if new_start >= nxt.end_us:
                units.remove(nxt)
            else:
                nxt.start_us = new_start
                nxt.allocs[0].start_offset_us = new_start
                nxt.allocs[0].duration_us = nxt.end_us - new_start

    def _execute_bi(self, schedule: Schedule, alloc_flow: dict[int, int], t0: int) -> int:
        busy: list[tuple[int, int]] = []
        units = self._build_units(schedule, alloc_flow, t0)
        cbap_flows = [
            fr for fid, fr in sorted(self.flows.items()) if fid not in self.coordinator.grants
        ]
        contenders = [fr.cbap for fr in cbap_flows]
        idx = 0
        while idx < len(units):
            unit = units[idx]
            if unit.kind == "cbap":
                recs = run_cbap(
                    unit.allocs[0],
                    contenders,
                    self.mac_cfg,
                    window=(unit.start_us, unit.end_us),
                    ingest=lambda t: self._ingest_many(cbap_flows, t),
                )
                for r in recs:
                    self._record_tx([r], self.flows[r.flow_id], busy)
            elif unit.kind == "sp":
                self._execute_sp_unit(unit, units, idx, busy, cbap_flows, t0)
            else:  # spatially shared group
                oh = self.mac_cfg.measurement_overhead_us
                busy.append((unit.start_us, min(unit.start_us + oh, unit.end_us)))
                for alloc, fid in sorted(zip(unit.allocs, unit.flow_ids), key=lambda p: p[0].alloc_id):
                    fr = self.flows[fid]
                    res = run_sp(
                        alloc,
                        fr.queue,
                        fr.link,
                        self.mac_cfg,
                        flow_id=fid,
                        window=(min(alloc.start_offset_us + oh, alloc.end_us), alloc.end_us),
                        ingest=lambda t, fr=fr: self._ingest_flow(fr, t),
                        stop_when_empty=False,
                    )
                    self._record_tx(res.records, fr, busy)
            idx += 1
        merged = []
        for lo, hi in sorted(busy):
            if merged and lo <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
            else:
                merged.append((lo, hi))
        return sum(hi - lo for lo, hi in merged)

    # -------------------------------------------------------------- main step

    def advance_bi(self, action: Optional[Action] = None) -> BiResult:
        if self.finished:
            raise EngineError("simulation already finished")
        action = action or Action()
        notes: list[str] = []
        t0 = self.bi_index * self.bi_cfg.bi_duration_us
        bi_end = t0 + self.bi_cfg.bi_duration_us

        for fr in self.flows.values():
            fr.reset_bi_counters()

        # 1. STA-side proposals from the action become pending requests
        self._apply_action_updates(action, t0, notes)

        # 2. decide requests pending from earlier BIs (effective this BI)
        pending_now, self.pending = self.pending, []
        responses = []
        for req in pending_now:
            if req.timestamp_us >= t0:
                self.pending.append(req)  # submitted this boundary; decided next BI
                continue
            override = action.admission_verdicts.get(req.request_id)
            resp = self._decide(req, override)
            responses.append(
                {
                    "requestId": req.request_id,
                    "flowId": req.tspec.flow_id,
                    "verdict": resp.verdict.value,
                }
            )

        # 3. build and validate this BI's schedule
        overrides = {}
        for flow_id, dur in sorted(action.duration_adjust.items()):
            grant = self.coordinator.grants.get(flow_id)
            if grant is None:
                notes.append(f"durationAdjust.{flow_id}: no active grant, ignored")
                continue
            clamped = max(grant.tspec.min_duration_us, min(grant.tspec.max_duration_us, int(dur)))
            if clamped != dur:
                notes.append(f"durationAdjust.{flow_id}: clamped to {clamped}")
            overrides[flow_id] = clamped
        sps, alloc_flow = self.coordinator.build_sps(overrides)
        groups = []
        if self.mac_cfg.enable_spatial_sharing and len(sps) > 1:
            links_by_alloc = {
                a.alloc_id: self.flows[alloc_flow[a.alloc_id]].link.state_at(t0) for a in sps
            }

            def pair_allowed(a: Allocation, b: Allocation) -> bool:
                fa, fb = alloc_flow[a.alloc_id], alloc_flow[b.alloc_id]
                key = (min(fa, fb), max(fa, fb))
                return action.spatial_toggles.get(key, True)

            sps, groups = form_spatial_groups(
                sps,
                links_by_alloc,
                self.world,
                self.table,
                self.mac_cfg,
                window_bounds=self.coordinator.window_bounds(alloc_flow),
                pair_allowed=pair_allowed,
            )
        schedule = build_beacon_interval(self.bi_cfg, sps, bi_index=self.bi_index)
        check = validate_schedule(schedule, self.bi_cfg)
        if not check.ok:
            raise EngineError(f"built an invalid schedule: {check.violations[0]}")
        ese = [r.to_dict() for r in serialize_ese(schedule)]
        for rec in ese:
            self._emit({"time": t0, "type": "ese", **rec})
        oh = self.mac_cfg.measurement_overhead_us
        for a in sps:
            if a.alloc_id in alloc_flow:
                data_us = a.duration_us - (oh if a.spatial_group is not None else 0)
                self.flows[alloc_flow[a.alloc_id]].bi_allocated_us += data_us

        # 4. execute the data transmission interval
        busy_us = self._execute_bi(schedule, alloc_flow, t0)

        # 5. close the interval: drain arrivals, account, adapt
        for fr in self.flows.values():
            self._ingest_flow(fr, bi_end - 1)
        flows_summary = {}
        for fid, fr in sorted(self.flows.items()):
            q = fr.queue
            if not q.conservation_holds():
                raise EngineError(f"conservation violated for flow {fid}")
            flows_summary[str(fid)] = {
                "bytesIn": q.bytes_in,
                "bytesOut": q.bytes_out,
                "bytesDropped": q.bytes_dropped,
                "queuedBytes": q.queued_bytes,
            }
        self._emit(
            {
                "time": bi_end,
                "type": "bi_end",
                "biIndex": self.bi_index,
                "busyUs": busy_us,
                "flows": flows_summary,
            }
        )

        per_flow: dict[int, dict] = {}
        for fid, fr in sorted(self.flows.items()):
            bi_rate = fr.bi_arrived_bits * 1e6 / self.bi_cfg.bi_duration_us
            fr.ewma_rate_bps = EWMA_ALPHA * bi_rate + (1 - EWMA_ALPHA) * fr.ewma_rate_bps
            delays = np.asarray(fr.bi_delays, dtype=np.float64)
            p95 = float(np.percentile(delays, 95.0)) if delays.size else 0.0
            target = self._delay_target(fid)
            violations = int((delays > target).sum()) if (delays.size and target) else 0
            mcs = fr.link.mcs_at(bi_end - 1)
            per_flow[fid] = {
                "queuedBits": fr.queue.queued_bits,
                "arrivalRateEwma": fr.ewma_rate_bps,
                "p95DelayLastBi": p95,
                "dropCountLastBi": fr.bi_dropped_packets,
                "currentMcsIndex": -1 if mcs is None else mcs,
                "allocatedTimeLastBi": fr.bi_allocated_us,
                "deliveredBits": fr.bi_delivered_bits,
                "arrivedBits": fr.bi_arrived_bits,
                "droppedBits": fr.bi_dropped_bits,
                "deliveredPackets": len(fr.bi_delays),
                "delayViolations": violations,
                "jitterUs": float(delays.std()) if delays.size else 0.0,
            }

        # 6. STA-side TSPEC adaptation (baseline hysteresis, when enabled)
        if self.mac_cfg.tspec_adaptation:
            for fid, fr in sorted(self.flows.items()):
                grant = self.coordinator.grants.get(fid)
                if grant is None or fr.adapter is None:
                    continue
                rate = fr.link.rate_at(bi_end - 1)
                floor = (
                    tx_time_us(fr.source.packet_size_bits, rate) + self.mac_cfg.per_packet_overhead_us
                    if rate
                    else 1
                )
                proposal = fr.adapter.update(grant.tspec, per_flow[fid]["p95DelayLastBi"], floor)
                if proposal is not None:
                    self.pending.append(
                        AddtsRequest(self._take_request_id(), proposal, bi_end - 1)
                    )

        reward_terms = self._reward_terms(per_flow)
        self._flush_bi_buffer()
        result = BiResult(
            bi_index=self.bi_index,
            start_us=t0,
            ese=ese,
            responses=responses,
            per_flow=per_flow,
            busy_us=busy_us,
            utilization=busy_us / self.bi_cfg.dti_duration_us,
            reward_terms=reward_terms,
            notes=notes,
            pending_after=[
                {
                    "requestId": r.request_id,
                    "flowId": r.tspec.flow_id,
                    "allocationPeriodUs": r.tspec.allocation_period_us,
                    "minDurationUs": r.tspec.min_duration_us,
                    "maxDurationUs": r.tspec.max_duration_us,
                }
                for r in self.pending
            ],
        )
        self.bi_index += 1
        return result

    def _reward_terms(self, per_flow: dict[int, dict]) -> dict[str, float]:
        delivered = sum(m["deliveredBits"] for m in per_flow.values())
        arrived = sum(m["arrivedBits"] for m in per_flow.values())
        dropped = sum(m["droppedBits"] for m in per_flow.values())
        capacity_bits = self.table.top_rate_bps * self.bi_cfg.bi_duration_us / 1e6
        target_packets = sum(
            m["deliveredPackets"]
            for fid, m in per_flow.items()
            if self._delay_target(fid) is not None
        )
        target_violations = sum(
            m["delayViolations"]
            for fid, m in per_flow.items()
            if self._delay_target(fid) is not None
        )
        jitters = [m["jitterUs"] for m in per_flow.values() if m["deliveredPackets"] > 0]
        return {
            "throughput": delivered / capacity_bits if capacity_bits else 0.0,
            "delayViolation": target_violations / target_packets if target_packets else 0.0,
            "jitter": (sum(jitters) / len(jitters)) / self.bi_cfg.bi_duration_us if jitters else 0.0,
            "fairness": jain_index(m["deliveredBits"] for m in per_flow.values()),
            "drops": dropped / arrived if arrived else 0.0,
        }

    def _delay_target(self, flow_id: int) -> Optional[int]:
        grant = self.coordinator.grants.get(flow_id)
        if grant is not None:
            return grant.tspec.delay_target_us
        return self._scenario_delay_targets.get(flow_id)

    def final_report(self) -> MetricsReport:
        return collect_metrics(self.trace)


def run(scenario: Scenario) -> tuple[MetricsReport, list[dict]]:
    """Simulate the whole scenario with the baseline policies."""
    sim = Simulation(scenario)
    while not sim.finished:
        sim.advance_bi(None)
    return sim.final_report(), sim.trace
