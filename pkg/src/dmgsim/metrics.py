"""Metrics aggregation from the newline-record event trace.

Delay is delivery minus arrival per packet; jitter is the standard
deviation of a flow's delays; fairness is the Jain index over per-flow
throughputs; utilization counts spatially shared airtime once.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import Iterable

import numpy as np


def jain_index(values: Iterable[float]) -> float:
    """(sum x)^2 / (n * sum x^2); all-equal inputs (including all-zero) give 1."""
    xs = list(values)
    if not xs:
        return 1.0
    s1 = float(sum(xs))
    s2 = float(sum(x * x for x in xs))
    if s2 == 0.0:
        return 1.0
    return s1 * s1 / (len(xs) * s2)


@dataclass(frozen=True)
class FlowMetrics:
    throughput_bps: float
    delay_mean_us: float
    delay_p95_us: float
    delay_p99_us: float
    jitter_us: float
    drop_ratio: float
    delivered_bits: int
    offered_bits: int
    dropped_bits: int
    delivered_packets: int


@dataclass(frozen=True)
class NetworkMetrics:
    jain_fairness: float
    dti_utilization: float
    admitted: int
    rejected: int


@dataclass(frozen=True)
class MetricsReport:
    flows: dict[int, FlowMetrics]
    network: NetworkMetrics

    def to_flat_dict(self) -> dict:
        out: dict[str, float] = {}
        for flow_id in sorted(self.flows):
            m = self.flows[flow_id]
            p = f"flow.{flow_id}."
            out[p + "throughputBps"] = m.throughput_bps
            out[p + "delayMeanUs"] = m.delay_mean_us
            out[p + "delayP95Us"] = m.delay_p95_us
            out[p + "delayP99Us"] = m.delay_p99_us
            out[p + "jitterUs"] = m.jitter_us
            out[p + "dropRatio"] = m.drop_ratio
            out[p + "deliveredBits"] = m.delivered_bits
            out[p + "offeredBits"] = m.offered_bits
            out[p + "droppedBits"] = m.dropped_bits
            out[p + "deliveredPackets"] = m.delivered_packets
        out["network.jainFairness"] = self.network.jain_fairness
        out["network.dtiUtilization"] = self.network.dti_utilization
        out["network.admitted"] = self.network.admitted
        out["network.rejected"] = self.network.rejected
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_flat_dict(), sort_keys=True, indent=2)


def _percentile(delays: list[int], q: float) -> float:
    if not delays:
        return 0.0
    return float(np.percentile(np.asarray(delays, dtype=np.float64), q))


def flow_metrics(
    delays_us: list[int],
    delivered_bits: int,
    offered_bits: int,
    dropped_bits: int,
    sim_duration_us: int,
) -> FlowMetrics:
    arr = np.asarray(delays_us, dtype=np.float64)
    return FlowMetrics(
        throughput_bps=delivered_bits * 1e6 / sim_duration_us if sim_duration_us else 0.0,
        delay_mean_us=float(arr.mean()) if arr.size else 0.0,
        delay_p95_us=_percentile(delays_us, 95.0),
        delay_p99_us=_percentile(delays_us, 99.0),
        jitter_us=float(arr.std()) if arr.size else 0.0,
        drop_ratio=dropped_bits / offered_bits if offered_bits else 0.0,
        delivered_bits=delivered_bits,
        offered_bits=offered_bits,
        dropped_bits=dropped_bits,
        delivered_packets=len(delays_us),
    )


def collect_metrics(trace: list[dict]) -> MetricsReport:
    """Aggregate a time-ordered event trace into the metrics report.

    The trace must start with a run_info record and contain per-BI
    bi_end records (for DTI busy time) plus arrival/drop/tx records.
    """
    if not trace or trace[0].get("type") != "run_info":
        raise ValueError("trace must start with a run_info record")
    info = trace[0]
    sim_duration = info["simDurationUs"]
    dti_per_bi = info["biDurationUs"] - info["bhiDurationUs"]
    flow_ids: list[int] = list(info["flowIds"])

    pending: dict[int, deque] = {f: deque() for f in flow_ids}
    delays: dict[int, list[int]] = {f: [] for f in flow_ids}
    delivered: dict[int, int] = {f: 0 for f in flow_ids}
    offered: dict[int, int] = {f: 0 for f in flow_ids}
    dropped: dict[int, int] = {f: 0 for f in flow_ids}
    busy_us = 0
    n_bis = 0
    admitted = rejected = 0

    for rec in trace[1:]:
        typ = rec["type"]
        if typ == "arrival":
            f = rec["flowId"]
            offered[f] += rec["bits"]
            pending[f].append((rec["time"], rec["bits"]))
        elif typ == "drop":
            f = rec["flowId"]
            dropped[f] += rec["bits"]
            pending[f].pop()  # tail drop: the arriving packet never queued
        elif typ == "tx":
            if rec["outcome"] != "SUCCESS":
                continue
            f = rec["flowId"]
            arrival, bits = pending[f].popleft()
            delivered[f] += bits
            delays[f].append(rec["time"] + rec["duration"] - arrival)
        elif typ == "bi_end":
            busy_us += rec["busyUs"]
            n_bis += 1
        elif typ == "addts":
            if rec["verdict"] == "ACCEPT":
                admitted += 1
            elif rec["verdict"] == "REJECT":
                rejected += 1

    flows = {
        f: flow_metrics(delays[f], delivered[f], offered[f], dropped[f], sim_duration)
        for f in flow_ids
    }
    total_dti = n_bis * dti_per_bi
    network = NetworkMetrics(
        jain_fairness=jain_index(m.throughput_bps for m in flows.values()),
        dti_utilization=busy_us / total_dti if total_dti else 0.0,
        admitted=admitted,
        rejected=rejected,
    )
    return MetricsReport(flows=flows, network=network)
