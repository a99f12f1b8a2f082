import numpy as np
import pytest

from dmgsim.schedule import (
    Allocation,
    AllocationKind,
    BiConfig,
    BoundsError,
    CapacityError,
    OverlapError,
    Schedule,
    TSpec,
    build_beacon_interval,
    busy_time_us,
    doze_intervals,
    parse_ese,
    place_periodic_allocation,
    serialize_ese,
    validate_schedule,
)


def sp(alloc_id, start, dur, src=1, dst=0, group=None):
    return Allocation(alloc_id, AllocationKind.SP, start, dur, src, dst, group)


def bitmap_earliest_fit(config, existing, tspec, dur):
    """Independent placement oracle: per-microsecond occupancy bitmap.

    Marks existing allocations expanded by the guard time, then scans each
    period window for the earliest free run of the needed length.
    """
    bi, bhi, g = config.bi_duration_us, config.bhi_duration_us, config.guard_time_us
    free = np.ones(bi, dtype=bool)
    free[:bhi] = False
    for a in existing:
        lo = max(0, a.start_offset_us - g)
        hi = min(bi, a.end_us + g)
        free[lo:hi] = False
    period = tspec.allocation_period_us
    placements = []
    for k in range(bi // period):
        lo = max(k * period, bhi)
        hi = (k + 1) * period
        found = None
        for start in range(lo, hi - dur + 1):
            if free[start : start + dur].all():
                found = start
                break
        if found is None:
            return None
        placements.append(found)
        free[max(0, found - g) : min(bi, found + dur + g)] = False
    return placements


class TestBuildBeaconInterval:
    def test_empty_schedule_fills_dti_with_one_cbap(self):
        config = BiConfig(bi_duration_us=100_000, bhi_duration_us=2_000)
        s = build_beacon_interval(config, [])
        assert [(a.kind, a.start_offset_us, a.duration_us) for a in s.allocations] == [
            (AllocationKind.CBAP, 2_000, 98_000)
        ]

    def test_single_gap_fill(self):
        config = BiConfig(bi_duration_us=100_000, bhi_duration_us=2_000)
        s = build_beacon_interval(config, [sp(0, 2_000, 10_000)])
        spans = [(a.kind, a.start_offset_us, a.end_us) for a in s.allocations]
        assert spans == [
            (AllocationKind.SP, 2_000, 12_000),
            (AllocationKind.CBAP, 12_000, 100_000),
        ]

    def test_default_bi_duration_is_100ms(self):
        assert BiConfig().bi_duration_us == 100_000

    def test_no_default_cbap_leaves_gaps_idle(self):
        config = BiConfig(default_cbap=False)
        s = build_beacon_interval(config, [sp(0, 2_000, 5_000)])
        assert len(s.allocations) == 1

    def test_overlapping_ungrouped_sps_raise(self):
        config = BiConfig()
        with pytest.raises(OverlapError):
            build_beacon_interval(config, [sp(0, 10_000, 10_000), sp(1, 15_000, 10_000)])

    def test_sp_outside_dti_raises(self):
        config = BiConfig()
        with pytest.raises(BoundsError):
            build_beacon_interval(config, [sp(0, 99_000, 2_000)])
        with pytest.raises(BoundsError):
            build_beacon_interval(config, [sp(0, 500, 1_000)])

    def test_grouped_sps_may_overlap(self):
        config = BiConfig()
        s = build_beacon_interval(
            config, [sp(0, 10_000, 10_000, 1, 2, group=0), sp(1, 10_000, 8_000, 3, 4, group=0)]
        )
        assert validate_schedule(s, config).ok


class TestValidateSchedule:
    def test_overlap_violation(self):
        config = BiConfig()
        s = Schedule(allocations=[sp(0, 10_000, 10_000), sp(1, 15_000, 10_000)])
        result = validate_schedule(s, config)
        assert not result.ok
        assert any(v.kind == "overlap" and v.alloc_ids == (0, 1) for v in result.violations)

    def test_bounds_violation(self):
        config = BiConfig()
        s = Schedule(allocations=[sp(0, 95_000, 6_000)])
        result = validate_schedule(s, config)
        assert not result.ok
        assert any(v.kind == "bounds" for v in result.violations)

    def test_same_group_overlap_is_ok(self):
        config = BiConfig()
        s = Schedule(
            allocations=[sp(0, 10_000, 10_000, 1, 2, group=3), sp(1, 12_000, 10_000, 3, 4, group=3)]
        )
        assert validate_schedule(s, config).ok

    def test_sp_missing_aids(self):
        config = BiConfig()
        s = Schedule(allocations=[Allocation(0, AllocationKind.SP, 5_000, 1_000)])
        result = validate_schedule(s, config)
        assert any(v.kind == "aids" for v in result.violations)


class TestPlacePeriodicAllocation:
    def test_empty_bi_earliest_fit_per_window(self):
        config = BiConfig(bi_duration_us=100_000, bhi_duration_us=2_000)
        t = TSpec(1, 1, 0, 25_000, 4_000, 8_000)
        placed = place_periodic_allocation(Schedule(), t, config)
        starts = [a.start_offset_us for a in placed]
        oracle = bitmap_earliest_fit(config, [], t, 4_000)
        assert starts == [2_000, 25_000, 50_000, 75_000]
        assert starts == oracle

    def test_period_equal_bi_gives_one_sp(self):
        config = BiConfig()
        t = TSpec(1, 1, 0, 100_000, 4_000, 4_000)
        placed = place_periodic_allocation(Schedule(), t, config)
        assert len(placed) == 1

    def test_occupied_window_raises_capacity_error(self):
        config = BiConfig()
        other = sp(0, 2_000, 23_000)  # fills window 0 of a 25 ms period
        s = Schedule(allocations=[other])
        t = TSpec(2, 3, 4, 25_000, 4_000, 4_000)
        with pytest.raises(CapacityError):
            place_periodic_allocation(s, t, config)

    def test_consecutive_starts_within_two_periods(self):
        config = BiConfig()
        t = TSpec(1, 1, 0, 20_000, 1_000, 1_000)
        s = Schedule(allocations=[sp(9, 21_000, 9_000, 5, 6)])
        placed = place_periodic_allocation(s, t, config)
        starts = [a.start_offset_us for a in placed]
        for a, b in zip(starts, starts[1:]):
            assert 0 < b - a <= 2 * t.allocation_period_us

    def test_matches_bitmap_oracle_randomized(self):
        rng = np.random.default_rng(42)
        config = BiConfig(bi_duration_us=8_000, bhi_duration_us=500, guard_time_us=1)
        for _ in range(300):
            existing = []
            s = Schedule()
            for flow in range(rng.integers(0, 3)):
                start = int(rng.integers(500, 7_000))
                dur = int(rng.integers(100, 900))
                if start + dur <= 8_000 and all(
                    not Allocation(99, AllocationKind.SP, start, dur, 1, 2).overlaps(e)
                    for e in existing
                ):
                    existing.append(sp(len(existing), start, dur, 5 + flow, 9 + flow))
            s.allocations = sorted(existing, key=lambda a: a.start_offset_us)
            period = int(rng.choice([2_000, 4_000, 8_000]))
            dur = int(rng.integers(100, 1_500))
            t = TSpec(1, 1, 0, period, dur, period)
            oracle = bitmap_earliest_fit(config, existing, t, dur)
            try:
                placed = place_periodic_allocation(s, t, config, duration_us=dur)
                assert oracle is not None
                assert [a.start_offset_us for a in placed] == oracle
            except CapacityError:
                assert oracle is None

    def test_placement_always_validates(self):
        rng = np.random.default_rng(7)
        config = BiConfig()
        for _ in range(100):
            s = Schedule()
            ok = True
            for flow in range(int(rng.integers(1, 4))):
                period = int(rng.choice([10_000, 20_000, 25_000, 50_000]))
                dur = int(rng.integers(200, period // 3))
                t = TSpec(flow, flow + 1, 0, period, dur, period)
                try:
                    s.allocations.extend(place_periodic_allocation(s, t, config, duration_us=dur))
                    s.allocations.sort(key=lambda a: a.start_offset_us)
                except CapacityError:
                    ok = False
            built = build_beacon_interval(config, s.allocations)
            assert validate_schedule(built, config).ok


class TestEse:
    def test_empty_schedule_empty_records(self):
        assert serialize_ese(Schedule()) == []

    def test_order_preserved(self):
        config = BiConfig()
        s = build_beacon_interval(config, [sp(0, 2_000, 10_000)])
        records = serialize_ese(s)
        assert [r.kind for r in records] == ["SP", "CBAP"]
        assert records[0].start_offset_us < records[1].start_offset_us

    def test_round_trip_identity(self):
        config = BiConfig()
        s = build_beacon_interval(
            config,
            [sp(0, 2_000, 10_000), sp(1, 30_000, 5_000, 3, 4, group=1), sp(2, 30_000, 4_000, 5, 6, group=1)],
        )
        back = parse_ese(serialize_ese(s), bi_index=s.bi_index)
        assert back == s

    def test_dict_round_trip_bit_exact(self):
        config = BiConfig()
        s = build_beacon_interval(config, [sp(0, 2_000, 10_000)])
        records = serialize_ese(s)
        import json

        blobs = [json.dumps(r.to_dict(), sort_keys=True) for r in records]
        from dmgsim.schedule import EseRecord

        parsed = [EseRecord.from_dict(json.loads(b)) for b in blobs]
        assert parsed == records


class TestAccounting:
    def test_total_allocated_within_dti(self):
        config = BiConfig()
        t = TSpec(1, 1, 0, 25_000, 8_000, 8_000)
        s = build_beacon_interval(config, place_periodic_allocation(Schedule(), t, config))
        assert busy_time_us(s.allocations) <= config.dti_duration_us

    def test_shared_overlap_counted_once(self):
        allocs = [sp(0, 10_000, 10_000, 1, 2, group=0), sp(1, 10_000, 10_000, 3, 4, group=0)]
        assert busy_time_us(allocs) == 10_000

    def test_doze_intervals(self):
        config = BiConfig(default_cbap=False)
        s = build_beacon_interval(config, [sp(0, 2_000, 10_000, src=1, dst=0), sp(1, 20_000, 5_000, src=2, dst=0)])
        doze = doze_intervals(s, config, aid=1)
        # station 1 can doze during the other pair's SP and all idle time
        assert (12_000, 100_000) in doze or (12_000, 20_000) in doze
        assert all(lo >= 12_000 for lo, _ in doze)
