import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uavnet.handover import (
    HandoverCause,
    HandoverThresholds,
    cell_visibility,
    classify_pre_state,
    detect_and_classify,
    handover_rate,
    rtt_impact,
)
from uavnet.ingest import segment_phases

from conftest import NS, T0_NS, dataset_of, inject_serving_nulls, make_sample, trace


class TestClassification:
    def test_neighbor_advantage_is_strength_based(self):
        # delta = -96 - (-100) = 4 >= 3
        assert classify_pre_state(-100.0, -15.0, -96.0) is HandoverCause.E1

    def test_strong_but_dirty_signal_is_interference(self):
        assert classify_pre_state(-90.0, -19.0, -89.0) is HandoverCause.E2

    def test_weak_signal_is_coverage(self):
        assert classify_pre_state(-112.0, -12.0, -111.0) is HandoverCause.E3

    def test_unremarkable_state_is_other(self):
        assert classify_pre_state(-100.0, -15.0, -99.0) is HandoverCause.E4

    def test_null_neighbor_skips_strength_check(self):
        assert classify_pre_state(-112.0, -12.0, None) is HandoverCause.E3

    def test_null_rsrq_fails_interference_guard(self):
        assert classify_pre_state(-90.0, None, -89.0) is HandoverCause.E4

    def test_all_null_pre_state_falls_through(self):
        assert classify_pre_state(None, None, None) is HandoverCause.E4

    def test_threshold_overrides(self):
        th = HandoverThresholds(a3_delta_db=6.0)
        assert classify_pre_state(-100.0, -15.0, -96.0, th) is HandoverCause.E4


class TestDetection:
    def test_constant_cell_trace_is_quiet(self):
        assert detect_and_classify(trace([8] * 20)) == []

    def test_simple_change_emits_one_event(self):
        ds = dataset_of([
            make_sample(0, cell=8, rsrp=-100.0, rsrq=-15.0, nb=[(1, -96.0)]),
            make_sample(1, cell=1, rsrp=-95.0, rsrq=-14.0),
        ])
        (ev,) = detect_and_classify(ds)
        assert (ev.from_cell, ev.to_cell) == (8, 1)
        assert ev.t == T0_NS + NS
        assert ev.cause is HandoverCause.E1
        assert ev.pre_rsrp == -100.0
        assert ev.pre_nb_rsrp == -96.0

    def test_null_runs_are_bridged_to_one_event(self):
        ds = dataset_of([
            make_sample(0, cell=8, rsrp=-100.0, rsrq=-15.0),
            make_sample(1),  # radio gap
            make_sample(2),
            make_sample(3, cell=1, rsrp=-95.0),
        ])
        (ev,) = detect_and_classify(ds)
        assert (ev.from_cell, ev.to_cell) == (8, 1)
        assert ev.t == T0_NS + 3 * NS  # stamped where the new cell appears

    def test_bridged_event_classified_from_last_non_null_state(self):
        ds = dataset_of([
            make_sample(0, cell=8, rsrp=-112.0, rsrq=-12.0),
            make_sample(1),
            make_sample(2, cell=1, rsrp=-80.0),
        ])
        (ev,) = detect_and_classify(ds)
        assert ev.cause is HandoverCause.E3
        assert ev.pre_rsrp == -112.0

    def test_gap_to_same_cell_is_not_an_event(self):
        assert detect_and_classify(trace([8, None, 8, 8])) == []

    def test_leading_and_trailing_nulls_are_not_events(self):
        assert detect_and_classify(trace([None, 8, 8, None])) == []

    def test_ping_pong_counts_twice(self):
        events = detect_and_classify(trace([8, 1, 8]))
        assert [(e.from_cell, e.to_cell) for e in events] == [(8, 1), (1, 8)]

    def test_uses_strongest_neighbor(self):
        ds = dataset_of([
            make_sample(0, cell=8, rsrp=-100.0, rsrq=-15.0,
                        nb=[(3, -99.0), (1, -96.0)]),  # sorted: 1 first
            make_sample(1, cell=1, rsrp=-95.0),
        ])
        (ev,) = detect_and_classify(ds)
        assert ev.pre_nb_rsrp == -96.0
        assert ev.cause is HandoverCause.E1

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.none() | st.integers(1, 4), min_size=2, max_size=60))
    def test_matches_naive_bridged_scan(self, cells):
        ds = trace(cells)
        got = [(e.t, e.from_cell, e.to_cell) for e in detect_and_classify(ds)]
        # independent oracle: walk the serving ids, skipping gaps
        want = []
        last = None
        for s in ds.samples:
            cid = s.serving.cell_id if s.serving else None
            if cid is None:
                continue
            if last is not None and cid != last:
                want.append((s.timestamp, last, cid))
            last = cid
        assert got == want


class TestHandoverRate:
    def test_one_per_minute_for_thirty_minutes(self):
        cells = []
        current = 1
        for sec in range(1800):
            if sec > 0 and sec % 60 == 30:
                current = 3 - current  # swap 1 <-> 2 mid-minute
            cells.append(current)
        ds = trace(cells)
        events = detect_and_classify(ds)
        assert len(events) == 30
        bins = handover_rate(events, ds, bin_minutes=10.0)
        assert [b.total for b in bins] == [10, 10, 10]
        assert bins[0].t_start == ds.samples[0].timestamp

    def test_no_events_gives_all_zero_series(self):
        ds = trace([8] * 1800)
        bins = handover_rate([], ds, bin_minutes=10.0)
        assert len(bins) == 3
        assert all(b.total == 0 for b in bins)

    def test_cause_counts_partition_totals(self):
        ds = trace([1, 2, 1, 2, 1] + [1] * 500)
        events = detect_and_classify(ds)
        bins = handover_rate(events, ds, bin_minutes=2.0)
        assert sum(b.total for b in bins) == len(events)
        for b in bins:
            assert sum(b.counts.values()) == b.total

    def test_bin_width_must_be_positive(self):
        ds = trace([8, 8])
        with pytest.raises(ValueError):
            handover_rate([], ds, bin_minutes=0)


class TestCellVisibility:
    def test_counts_serving_and_neighbors(self):
        ds = dataset_of([
            make_sample(0, cell=8, rsrp=-90.0, nb=[(1, -95.0)]),
            make_sample(60, cell=8, rsrp=-91.0, nb=[(1, -96.0)]),
            make_sample(120, cell=8, rsrp=-92.0),
        ])
        segs = segment_phases(ds, [])
        (vis,) = cell_visibility(ds, segs)
        assert vis.unique_cells == 2
        assert vis.handovers == 0

    def test_rate_is_events_per_minute(self):
        ds = trace([1, 2] * 60)  # handover every second
        segs = segment_phases(ds, [])
        (vis,) = cell_visibility(ds, segs)
        span_min = (ds.samples[-1].timestamp - ds.samples[0].timestamp) / (60 * NS)
        assert vis.handovers == 119
        assert vis.handovers_per_min == pytest.approx(119 / span_min)

    def test_empty_segment(self):
        ds = dataset_of([make_sample(0, cell=8), make_sample(100, cell=8),
                         make_sample(200, cell=8)])
        t0 = ds.samples[0].timestamp
        segs = segment_phases(ds, [t0 + 30 * NS, t0 + 60 * NS])
        stats = cell_visibility(ds, segs)
        assert stats[1].unique_cells == 0
        assert stats[1].handovers_per_min == 0.0

    def test_more_visibility_and_churn_at_altitude(self):
        # low phase: two cells swap slowly; high phase: four cells churn
        low = [1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2, 2] * 5
        high = [1, 2, 3, 4] * 20
        ds = trace(low + high)
        t_split = ds.samples[len(low)].timestamp
        segs = segment_phases(ds, [t_split], ["low", "high"])
        vis = cell_visibility(ds, segs)
        assert vis[1].unique_cells > vis[0].unique_cells
        assert vis[1].handovers_per_min > vis[0].handovers_per_min


class TestRttImpact:
    def _ds_with_step(self, step_at=30, before=100.0, after=180.0, n=60):
        samples = []
        for i in range(n):
            cell = 8 if i < step_at else 1
            rtt = before if i < step_at else after
            samples.append(make_sample(i, cell=cell, rsrp=-90.0, rtt=rtt))
        return dataset_of(samples)

    def test_step_change_measured_exactly(self):
        ds = self._ds_with_step()
        events = detect_and_classify(ds)
        annotated, summary = rtt_impact(events, ds)
        assert annotated[0].rtt_delta_ms == pytest.approx(80.0)
        assert summary.n_degrade == 1
        assert summary.max_increase == pytest.approx(80.0)

    def test_improvement_sign_convention(self):
        ds = self._ds_with_step(before=100.0, after=50.0)
        events = detect_and_classify(ds)
        annotated, summary = rtt_impact(events, ds)
        assert annotated[0].rtt_delta_ms == pytest.approx(-50.0)
        assert summary.n_improve == 1
        assert summary.max_decrease == pytest.approx(-50.0)

    def test_no_rtt_samples_in_window_gives_null(self):
        samples = [make_sample(0, cell=8, rsrp=-90.0),
                   make_sample(1, cell=1, rsrp=-90.0),
                   make_sample(2, cell=1, rsrp=-90.0)]
        ds = dataset_of(samples)
        events = detect_and_classify(ds)
        annotated, summary = rtt_impact(events, ds)
        assert annotated[0].rtt_delta_ms is None
        assert summary.n_with_delta == 0
        assert summary.max_increase is None

    def test_sample_at_event_instant_is_excluded(self):
        # RTT at the event's own timestamp belongs to neither side
        samples = [make_sample(0, cell=8, rsrp=-90.0, rtt=100.0),
                   make_sample(1, cell=1, rsrp=-90.0, rtt=999.0),
                   make_sample(2, cell=1, rsrp=-90.0, rtt=150.0)]
        ds = dataset_of(samples)
        (ev,) = detect_and_classify(ds)
        assert ev.t == samples[1].timestamp
        annotated, _ = rtt_impact(detect_and_classify(ds), ds)
        assert annotated[0].rtt_delta_ms == pytest.approx(50.0)

    def test_k_limits_the_averaging_window(self):
        ds = self._ds_with_step()
        events = detect_and_classify(ds)
        annotated, _ = rtt_impact(events, ds, window_s=30.0, k=1)
        assert annotated[0].rtt_delta_ms == pytest.approx(80.0)

    def test_antisymmetry_under_negated_series(self, rng):
        n = 120
        cells = [int(c) for c in rng.integers(1, 4, size=n)]
        rtts = [float(r) for r in rng.uniform(20, 200, size=n)]
        pos = dataset_of([make_sample(i, cell=c, rsrp=-90.0, rtt=r)
                          for i, (c, r) in enumerate(zip(cells, rtts))])
        neg = dataset_of([make_sample(i, cell=c, rsrp=-90.0, rtt=-r)
                          for i, (c, r) in enumerate(zip(cells, rtts))])
        events = detect_and_classify(pos)
        ann_pos, _ = rtt_impact(events, pos)
        ann_neg, _ = rtt_impact(detect_and_classify(neg), neg)
        for a, b in zip(ann_pos, ann_neg):
            if a.rtt_delta_ms is None:
                assert b.rtt_delta_ms is None
            else:
                assert b.rtt_delta_ms == pytest.approx(-a.rtt_delta_ms)

    def test_window_must_be_positive(self):
        ds = trace([8, 8])
        with pytest.raises(ValueError):
            rtt_impact([], ds, window_s=0)


class TestBridgingAgainstInjectedNulls:
    def test_injection_collapses_to_bridged_events(self):
        base = trace([1, 1, 2, 2, 3, 3, 1, 1])
        events_before = detect_and_classify(base)
        assert len(events_before) == 3
        masked = inject_serving_nulls(base, [2, 5])
        events_after = detect_and_classify(masked)
        assert [(e.from_cell, e.to_cell) for e in events_after] == \
            [(1, 2), (2, 3), (3, 1)]
