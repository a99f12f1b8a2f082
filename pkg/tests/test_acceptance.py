"""Acceptance suite: one test per release criterion, each printing a
PASS line with its measured numbers. Tolerances are fixed here and match
the project's stated targets; nothing is calibrated at runtime.
"""

import hashlib
import json
import math
import os
import socket

import numpy as np
import pytest

from dmgsim.config import load_scenario, load_scenario_file, to_document
from dmgsim.engine import Simulation, run
from dmgsim.mac import MacConfig, tx_time_us
from dmgsim.protocol import Message, read_message, write_message
from dmgsim.radio import (
    SectorPattern,
    Station,
    World,
    default_mcs_table,
    noise_floor_dbm,
    path_gain_db,
    resolve_link,
)
from dmgsim.rlenv import EnvSession
from dmgsim.schedule import (
    Allocation,
    AllocationKind,
    BiConfig,
    CapacityError,
    Schedule,
    TSpec,
    build_beacon_interval,
    validate_schedule,
)
from dmgsim.server import EnvServer

SCENARIOS = os.path.join(os.path.dirname(__file__), "..", "scenarios")

MAX_RATE = 6_750_000_000


def _ok(name, detail=""):
    print(f"\nACCEPTANCE {name}: PASS {detail}")


# ---------------------------------------------------------------------------
# randomized scenario generators


def random_schedule_pipeline(rng):
    """One randomized pass through admission, placement, grouping, and build."""
    from dmgsim.mac import AddtsRequest, Coordinator

    bi = int(rng.choice([20_000, 50_000, 100_000]))
    bhi = int(rng.integers(500, 4_000))
    config = BiConfig(
        bi_duration_us=bi,
        bhi_duration_us=bhi,
        guard_time_us=int(rng.integers(0, 3)),
        default_cbap=bool(rng.integers(0, 2)),
    )
    mac = MacConfig(measurement_overhead_us=int(rng.integers(10, 100)))
    coord = Coordinator(config, mac)
    n_pairs = int(rng.integers(1, 5))
    stations = {}
    for k in range(n_pairs):
        x, y = rng.uniform(0, 80, size=2)
        stations[2 * k + 1] = Station(2 * k + 1, (float(x), float(y)))
        stations[2 * k + 2] = Station(2 * k + 2, (float(x + rng.uniform(1, 6)), float(y)))
    world = World(stations, path_loss_exponent=2.5)
    table = default_mcs_table()
    links = {}
    for k in range(n_pairs):
        divisor = int(rng.choice([1, 2, 4, 5]))
        period = bi // divisor
        max_dur = max(2, (period - bhi) // int(rng.integers(2, 6)))
        dur = int(rng.integers(1, max_dur))
        t = TSpec(k + 1, 2 * k + 1, 2 * k + 2, period, dur, min(period, dur * 2))
        coord.handle_request(AddtsRequest(k, t))
    sps, alloc_flow = coord.build_sps()
    if sps and bool(rng.integers(0, 2)):
        from dmgsim.mac import form_spatial_groups

        links_by_alloc = {}
        for a in sps:
            fid = alloc_flow[a.alloc_id]
            links_by_alloc[a.alloc_id] = resolve_link(world, a.src_aid, a.dst_aid, table)
        sps, _ = form_spatial_groups(
            sps, links_by_alloc, world, table, mac,
            window_bounds=coord.window_bounds(alloc_flow),
        )
    return build_beacon_interval(config, sps), config


def random_traffic_doc(rng):
    """A small full-engine scenario exercising blockage and reclaim paths."""
    bi = int(rng.choice([20_000, 50_000]))
    n_flows = int(rng.integers(1, 4))
    stations = [{"aid": 0, "role": "PCP_AP", "position": [0.0, 0.0]}]
    flows, tspecs, blockages = [], [], []
    for k in range(n_flows):
        aid = k + 1
        stations.append({"aid": aid, "position": [float(rng.uniform(1, 25)), float(rng.uniform(-5, 5))]})
        kind = str(rng.choice(["CBR", "POISSON", "VBR_VIDEO"]))
        flows.append(
            {
                "flowId": k + 1,
                "srcAid": aid,
                "dstAid": 0,
                "kind": kind,
                "meanRateBps": int(rng.integers(5, 120)) * 1_000_000,
                "packetSizeBytes": int(rng.choice([400, 1500, 4000])),
                "frameIntervalUs": int(rng.choice([5_000, 11_111])),
                "frameSizeSigma": float(rng.uniform(0.0, 0.4)),
                "startUs": int(rng.integers(0, bi)),
                "queueCapacityBytes": int(rng.choice([20_000, 200_000, 2_000_000])),
            }
        )
        if rng.random() < 0.7:
            period = bi // int(rng.choice([1, 2, 4]))
            min_dur = int(rng.integers(100, max(101, period // 8)))
            tspecs.append(
                {
                    "flowId": k + 1,
                    "allocationPeriodUs": period,
                    "minDurationUs": min_dur,
                    "maxDurationUs": min(period, min_dur * 3),
                    "delayTargetUs": int(rng.choice([bi, 2 * bi])),
                }
            )
        if rng.random() < 0.5:
            start = int(rng.integers(0, 3 * bi))
            blockages.append(
                {
                    "srcAid": aid,
                    "dstAid": 0,
                    "startUs": start,
                    "durationUs": int(rng.integers(bi // 4, 2 * bi)),
                    "attenuationDb": float(rng.choice([10.0, 30.0, 60.0])),
                }
            )
    return {
        "bi": {"biDuration": bi, "bhiDuration": 1_000},
        "stations": stations,
        "flows": flows,
        "tspecs": tspecs,
        "blockages": blockages,
        "mac": {"tspecAdaptation": bool(rng.integers(0, 2))},
        "sim": {"durationUs": bi * int(rng.integers(2, 5)), "seed": int(rng.integers(0, 2**32))},
    }


# ---------------------------------------------------------------------------
# criteria


class TestBiStructure:
    def test_bi_structure(self):
        # part 1: the default scenario ticks in exact 100 ms beacon intervals
        sc = load_scenario_file(os.path.join(SCENARIOS, "default.json"))
        _, trace = run(sc)
        boundaries = [r["time"] for r in trace if r["type"] == "bi_end"]
        assert boundaries == [(k + 1) * 100_000 for k in range(sc.n_bis)]
        for r in trace:
            if r["type"] == "ese":
                assert r["startOffset"] >= sc.bi.bhi_duration_us  # BHI precedes DTI
                assert r["startOffset"] + r["duration"] <= sc.bi.bi_duration_us

        # part 2: every engine-produced schedule validates over 10^4 scenarios
        rng = np.random.default_rng(2024)
        violations = 0
        for _ in range(10_000):
            schedule, config = random_schedule_pipeline(rng)
            result = validate_schedule(schedule, config)
            violations += 0 if result.ok else 1
        assert violations == 0
        _ok("bi-structure", "(10000 randomized schedules, 0 violations)")


class TestRateCeiling:
    def _saturated_sp_doc(self):
        return {
            "stations": [
                {"aid": 0, "role": "PCP_AP", "position": [0.0, 0.0]},
                {"aid": 1, "position": [1.5, 0.0]},
            ],
            "flows": [
                {
                    "flowId": 1, "srcAid": 1, "dstAid": 0, "kind": "CBR",
                    "meanRateBps": 1_700_000_000, "packetSizeBytes": 1500,
                    "queueCapacityBytes": 8_000_000,
                }
            ],
            "tspecs": [
                {"flowId": 1, "allocationPeriodUs": 100_000, "minDurationUs": 97_000, "maxDurationUs": 97_000}
            ],
            "mac": {"enableExtension": False},
            "sim": {"durationUs": 200_000, "seed": 5},
        }

    def test_rate_ceiling_and_sp_efficiency(self):
        sc = load_scenario(self._saturated_sp_doc())
        report, trace = run(sc)
        # ceiling: no flow ever above 6.75 Gb/s, per run and per BI
        assert all(m.throughput_bps <= MAX_RATE for m in report.flows.values())
        per_bi_bits = {}
        for r in trace:
            if r["type"] == "tx" and r["outcome"] == "SUCCESS":
                per_bi_bits.setdefault(r["time"] // 100_000, 0)
                per_bi_bits[r["time"] // 100_000] += r["bits"]
        assert all(bits <= MAX_RATE * 0.1 for bits in per_bi_bits.values())

        # link must sit at top MCS for the efficiency claim to apply
        sim = Simulation(sc)
        assert sim.flows[1].link.mcs_at(0) == 7

        # closed-form single-station oracle: payload / (payload + overhead)
        bits = 12_000
        payload_us = bits / MAX_RATE * 1e6
        oracle_bps = MAX_RATE * payload_us / (payload_us + sc.mac.per_packet_overhead_us)
        sp_time_us = 97_000 * sc.n_bis
        delivered = report.flows[1].delivered_bits
        measured_bps = delivered * 1e6 / sp_time_us
        assert measured_bps <= MAX_RATE
        assert measured_bps >= 0.90 * oracle_bps * 0.98
        _ok(
            "rate-ceiling",
            f"(SP goodput {measured_bps/1e9:.3f} Gb/s vs oracle {oracle_bps/1e9:.3f} Gb/s, "
            f"ratio {measured_bps/oracle_bps:.3f})",
        )


class TestQosLatency:
    def test_vr_p99_under_20ms_across_20_seeds(self):
        sc = load_scenario_file(os.path.join(SCENARIOS, "vr.json"))
        # sanity: offered load stays at or below 70% of the SP service rate
        packet_cycle = tx_time_us(12_000, MAX_RATE) + sc.mac.per_packet_overhead_us
        sp_rate = 12_000 / packet_cycle * 1e6  # bits/s while the SP is serving
        duty = 2_000 / 5_000
        assert 400e6 <= 0.70 * sp_rate * duty
        worst = 0.0
        for seed in range(1, 21):
            report, _ = run(sc.with_overrides(seed=seed))
            m = report.flows[1]
            assert m.drop_ratio == 0.0
            worst = max(worst, m.delay_p99_us)
            assert m.delay_p99_us < 20_000, f"seed {seed}: p99={m.delay_p99_us}"
        _ok("qos-latency", f"(worst p99 over 20 seeds: {worst:.0f} us < 20000 us)")


class TestConservation:
    def test_conservation_over_1000_randomized_scenarios(self):
        rng = np.random.default_rng(99)
        checked = 0
        for _ in range(1_000):
            doc = random_traffic_doc(rng)
            sc = load_scenario(doc)
            _, trace = run(sc)  # the engine itself asserts per-BI conservation
            for rec in trace:
                if rec["type"] == "bi_end":
                    for c in rec["flows"].values():
                        assert (
                            c["bytesIn"]
                            == c["bytesOut"] + c["bytesDropped"] + c["queuedBytes"]
                        )
                        checked += 1
        assert checked > 0
        _ok("conservation", f"({checked} flow-BI checkpoints, 0 violations)")


class TestDeterminism:
    def test_100_runs_hash_identical(self):
        sc = load_scenario_file(os.path.join(SCENARIOS, "default.json")).with_overrides(
            duration_us=100_000
        )
        digests = set()
        for _ in range(100):
            report, trace = run(sc)
            blob = report.to_json() + "\n".join(
                json.dumps(r, sort_keys=True) for r in trace
            )
            digests.add(hashlib.sha256(blob.encode()).hexdigest())
        assert len(digests) == 1
        _ok("determinism", f"(100 runs, 1 distinct digest {digests.pop()[:12]})")


def _interference_sinr_db(world, own, other):
    """Independent pairwise SINR oracle (linear-domain, hand-rolled)."""
    tx = world.station(own.src_aid)
    rx = world.station(own.dst_aid)
    s_dbm = tx.tx_power_dbm + path_gain_db(
        tx, rx, own.best_tx_sector, own.best_rx_sector, world.path_loss_exponent
    )
    itx = world.station(other.src_aid)
    i_dbm = itx.tx_power_dbm + path_gain_db(
        itx, rx, other.best_tx_sector, own.best_rx_sector, world.path_loss_exponent
    )
    n_mw = 10 ** (noise_floor_dbm(rx, world.bandwidth_hz) / 10)
    return 10 * math.log10(10 ** (s_dbm / 10) / (n_mw + 10 ** (i_dbm / 10)))


class TestSpatialSharing:
    def test_grouped_beats_serialized_and_respects_sinr(self):
        sc = load_scenario_file(os.path.join(SCENARIOS, "spatial4.json"))
        doc = to_document(sc)
        doc["mac"]["enableSpatialSharing"] = False
        serialized = load_scenario(doc)
        rep_g, tr_g = run(sc)
        rep_s, _ = run(serialized)
        agg_g = sum(m.delivered_bits for m in rep_g.flows.values())
        agg_s = sum(m.delivered_bits for m in rep_s.flows.values())
        assert agg_g > agg_s
        assert 0.0 <= rep_g.network.dti_utilization <= 1.0
        assert 0.0 <= rep_s.network.dti_utilization <= 1.0
        assert any(r["type"] == "ese" and r["spatialGroup"] is not None for r in tr_g)

        # exhaustive pairwise check on instances of up to 6 SPs
        from dmgsim.mac import form_spatial_groups

        rng = np.random.default_rng(4)
        table = default_mcs_table()
        mac = MacConfig()
        instances = pairs_checked = 0
        while instances < 200:
            n = int(rng.integers(2, 7))  # SPs per instance
            stations = {}
            for k in range(n):
                x, y = float(rng.uniform(0, 70)), float(rng.uniform(0, 70))
                stations[2 * k + 1] = Station(2 * k + 1, (x, y), pattern=SectorPattern(15, -10))
                stations[2 * k + 2] = Station(
                    2 * k + 2, (x + float(rng.uniform(1, 5)), y), pattern=SectorPattern(15, -10)
                )
            world = World(stations, path_loss_exponent=2.5)
            links, sps = {}, []
            for k in range(n):
                links[k] = resolve_link(world, 2 * k + 1, 2 * k + 2, table)
                sps.append(
                    Allocation(k, AllocationKind.SP, 2_000 + k * 9_000, 8_000, 2 * k + 1, 2 * k + 2)
                )
            grouped, groups = form_spatial_groups(sps, links, world, table, mac)
            instances += 1
            for g in groups:
                for i in g.alloc_ids:
                    for j in g.alloc_ids:
                        if i >= j:
                            continue
                        pairs_checked += 1
                        for own, other in ((links[i], links[j]), (links[j], links[i])):
                            sinr = _interference_sinr_db(world, own, other)
                            assert sinr >= table.min_sinr_db(own.mcs) + mac.grouping_margin_db
        assert pairs_checked > 0
        _ok(
            "spatial-sharing",
            f"(grouped {agg_g/1e6:.0f} Mb > serialized {agg_s/1e6:.0f} Mb; "
            f"{pairs_checked} grouped pairs vs SINR oracle)",
        )


class TestCbapFairness:
    def test_two_saturated_contenders_within_10pct_over_20_seeds(self):
        sc = load_scenario_file(os.path.join(SCENARIOS, "cbap2.json"))
        assert sc.sim.duration_us >= 10_000_000
        worst = 0.0
        for seed in range(1, 21):
            report, _ = run(sc.with_overrides(seed=seed))
            t1 = report.flows[1].throughput_bps
            t2 = report.flows[2].throughput_bps
            diff = abs(t1 - t2) / max(t1, t2)
            worst = max(worst, diff)
            assert diff < 0.10, f"seed {seed}: shares differ by {diff:.3f}"
        _ok("cbap-fairness", f"(worst share gap over 20 seeds: {worst:.3f} < 0.10)")


class TestAdmissionOracle:
    def test_exhaustive_window_enumeration_agreement(self):
        from dmgsim.mac import admission_check

        bi = 8_000
        config = BiConfig(bi_duration_us=bi, bhi_duration_us=0, guard_time_us=1)
        grid = [200, 400, 600, 800]
        checks = disagreements = 0
        for n_windows in (1, 2, 4, 8):
            period = bi // n_windows
            for depth in range(1, 5):
                for combo in np.ndindex(*([len(grid)] * depth)):
                    s = Schedule()
                    for flow_idx, gi in enumerate(combo):
                        dur = grid[gi] * (period // 1_000)  # scale to the window size
                        t = TSpec(flow_idx + 1, 2 * flow_idx + 1, 2 * flow_idx + 2, period, dur, dur)
                        predicted = admission_check(t, s, config)
                        oracle = self._window_enumeration(s, t, dur, config)
                        checks += 1
                        if predicted != oracle:
                            disagreements += 1
                        if predicted:
                            from dmgsim.schedule import place_periodic_allocation

                            s.allocations.extend(
                                place_periodic_allocation(s, t, config, duration_us=dur)
                            )
                            s.allocations.sort(key=lambda a: a.start_offset_us)
                        else:
                            break
        assert disagreements == 0
        _ok("admission-oracle", f"({checks} exhaustive instances, 0 disagreements)")

    @staticmethod
    def _window_enumeration(s, t, dur, config):
        """Per-window free-time enumeration on a microsecond bitmap."""
        bi, bhi, g = config.bi_duration_us, config.bhi_duration_us, config.guard_time_us
        free = np.ones(bi, dtype=bool)
        free[:bhi] = False
        for a in s.allocations:
            free[max(0, a.start_offset_us - g) : min(bi, a.end_us + g)] = False
        period = t.allocation_period_us
        for k in range(bi // period):
            lo, hi = max(k * period, bhi), (k + 1) * period
            window = free[lo:hi]
            # longest free run inside the window
            best = cur = 0
            for bit in window:
                cur = cur + 1 if bit else 0
                best = max(best, cur)
            if best < dur:
                return False
            # place earliest-fit exactly as the scheduler would, then continue
            run_start = None
            count = 0
            for i, bit in enumerate(window):
                if bit:
                    count += 1
                    if count == 1:
                        run_start = i
                    if count == dur:
                        break
                else:
                    count = 0
            start = lo + run_start
            free[max(0, start - g) : min(bi, start + dur + g)] = False
        return True


class TestEnvEngineEquivalence:
    def _docs(self):
        base = {
            "stations": [
                {"aid": 0, "role": "PCP_AP", "position": [0, 0]},
                {"aid": 1, "position": [3, 0]},
                {"aid": 2, "position": [0, 5]},
            ],
            "flows": [
                {"flowId": 1, "srcAid": 1, "dstAid": 0, "kind": "CBR", "meanRateBps": 60_000_000},
                {"flowId": 2, "srcAid": 2, "dstAid": 0, "kind": "POISSON", "meanRateBps": 25_000_000},
            ],
            "tspecs": [
                {"flowId": 1, "allocationPeriodUs": 25_000, "minDurationUs": 2_000, "maxDurationUs": 4_000}
            ],
            "sim": {"durationUs": 300_000, "seed": 7},
        }
        docs = []
        for i in range(10):
            doc = json.loads(json.dumps(base))
            doc["sim"]["seed"] = 100 + i
            if i % 2:
                doc["flows"][1]["kind"] = "VBR_VIDEO"
                doc["flows"][1]["frameIntervalUs"] = 16_667
            if i % 3 == 0:
                doc["blockages"] = [
                    {"srcAid": 1, "dstAid": 0, "startUs": 120_000, "durationUs": 60_000, "attenuationDb": 40.0}
                ]
            docs.append(doc)
        return docs

    def test_noop_env_reproduces_batch_run_over_socket(self):
        compared = 0
        for doc in self._docs():
            sc = load_scenario(doc)
            report, trace = run(sc)
            bi_ends = [r for r in trace if r["type"] == "bi_end"]

            server = EnvServer(sc, "127.0.0.1:0")
            server.start()
            try:
                host, port = server.bound_address
                conn = socket.create_connection((host, port), timeout=10)
                stream = conn.makefile("rwb")
                write_message(stream, Message("HELLO"))
                read_message(stream)
                write_message(stream, Message("RESET", {}))
                reply = read_message(stream)
                assert reply.payload["done"] is False
                per_bi = []
                done = False
                while not done:
                    write_message(stream, Message("STEP", {"action": {}}))
                    reply = read_message(stream)
                    done = reply.payload["done"]
                    per_bi.append(reply.payload["info"]["metrics"])
                conn.close()
            finally:
                server.stop()

            assert len(per_bi) == len(bi_ends) == sc.n_bis
            for env_m, rec in zip(per_bi, bi_ends):
                assert env_m["busyUs"] == rec["busyUs"]
                for fid, counters in rec["flows"].items():
                    assert env_m["perFlow"][fid]["queuedBits"] == counters["queuedBytes"] * 8
                compared += 1
            # cumulative delivered bits must agree exactly with the batch run
            env_total = sum(
                int(m["perFlow"][str(f)]["deliveredBits"]) for m in per_bi for f in report.flows
            )
            batch_total = sum(m.delivered_bits for m in report.flows.values())
            assert env_total == batch_total
        _ok("env-engine-equivalence", f"({compared} BIs compared bit-exactly over raw sockets)")
