from __future__ import annotations

import dataclasses
import json

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from synth import exact_pairs, spread_times
from flashsync.detect import EventObservation
from flashsync.errors import (
    AmbiguousOffsetError,
    DomainError,
    MatchingError,
    SingularSystemError,
)
from flashsync.ingest import TimestampTrack
from flashsync.simulate import FlashSchedule, simulate_capture, spaced_flash_times, four_camera_rig
from flashsync.syncsolve import (
    ROW_PERIODS_FREE,
    ROW_PERIODS_KNOWN,
    MatchedEventSet,
    MatchedPair,
    SyncSolution,
    TimedEvent,
    _build_system,
    estimate_coarse_offset,
    format_matched_csv,
    match_events,
    residual_report,
    solve_joint,
    solve_pairwise,
    synchronize,
    timed_events,
)
from flashsync.timebase import SensorGeometry

PROPERTY = settings(max_examples=120, deadline=None)

# magnitudes of a real 2160-row vs 720-row camera pair
ALPHA, BETA, T_REF, T_C = 1 - 8.55e-6, -37500.7, 0.0158, 0.0396


def shifted(s: MatchedEventSet, d_ref: float = 0.0, d_c: float = 0.0) -> MatchedEventSet:
    pairs = tuple(dataclasses.replace(p, t_ref=p.t_ref + d_ref, t_c=p.t_c + d_c) for p in s.pairs)
    return MatchedEventSet(s.camera_id, s.reference_id, pairs)


def te(times):
    return [TimedEvent(i, 0.0, t, t) for i, t in enumerate(times)]


class TestCoarseOffset:
    def test_shift_vote(self):
        est = estimate_coarse_offset(te([7000, 11000, 15000]), te([1000, 5000, 9000]), 40.0)
        assert (est.offset, est.inliers) == (-6000.0, 3)

    def test_identical(self):
        assert estimate_coarse_offset([1.0, 900.0, 4000.0], [1.0, 900.0, 4000.0], 40.0).offset == 0.0

    def test_spurious_extra_event(self):
        est = estimate_coarse_offset([7000, 9500, 11000, 15000], [1000, 5000, 9000], 40.0)
        assert (est.offset, est.inliers) == (-6000.0, 3)
        matched = match_events(te([7000, 9500, 11000, 15000]), te([1000, 5000, 9000]), est.offset, 20.0)
        assert len(matched) == 3 and matched.unmatched_camera == (1,)

    def test_ties_prefer_small_shift(self):
        # two shifts with two supporting pairs each: +100 and -3000
        est = estimate_coarse_offset([0.0, 1000.0, 3000.0, 4000.0], [100.0, 1100.0], 40.0)
        assert est.offset == 100.0

    def test_empty(self):
        with pytest.raises(MatchingError):
            estimate_coarse_offset([], [1.0], 40.0)

    def test_ambiguous(self):
        with pytest.raises(AmbiguousOffsetError):
            estimate_coarse_offset([0.0, 5000.0], [100.0, 20000.0], 40.0)

    @PROPERTY
    @given(
        st.lists(st.floats(0, 3e5), min_size=3, max_size=25, unique=True),
        st.floats(-5e4, 5e4),
        st.lists(st.floats(-9.9, 9.9), min_size=25, max_size=25),
    )
    def test_recovers_shift_of_separated_events(self, times, shift, jitter):
        times = np.sort(times)
        assume(np.all(np.diff(times) > 500))
        tc = times + np.array(jitter[: times.size])
        est = estimate_coarse_offset(tc, times + shift, 40.0)
        assert est.inliers == times.size
        assert abs(est.offset - shift) <= 20.0


class TestMatching:
    def test_aligned(self):
        m = match_events(te([10, 1010, 2010]), te([0, 1000, 2000]), -10, 5)
        assert len(m) == 3 and m.unmatched_camera == () and m.unmatched_reference == ()

    def test_partial_visibility(self):
        rng = np.random.default_rng(5)
        flashes = np.sort(rng.uniform(0, 2e5, 19))
        flashes = flashes[np.argsort(flashes)]
        ref_idx = list(range(18))
        cam_idx = list(range(6, 18)) + [18]
        ref = te(flashes[ref_idx])
        cam = te(flashes[cam_idx] - 300.0)
        m = match_events(cam, ref, 300.0, 15.0)
        assert len(m) == 12
        assert len(m.unmatched_reference) == 6 and len(m.unmatched_camera) == 1

    def test_greedy_prefers_closer(self):
        m = match_events(te([990.0, 1003.0]), te([1000.0]), 0.0, 15.0)
        assert [p.frame_c for p in m.pairs] == [1]
        assert m.unmatched_camera == (0,)

    def test_nothing_within_tolerance(self):
        with pytest.raises(MatchingError):
            match_events(te([0.0]), te([100.0]), 0.0, 10.0)

    def test_duplicate_use_rejected(self):
        p = MatchedPair(1, 5.0, 40.0, 1, 5.0, 40.0)
        with pytest.raises(DomainError):
            MatchedEventSet("c", "r", (p, p))

    @PROPERTY
    @given(
        st.lists(st.floats(0, 1e5), min_size=1, max_size=20),
        st.lists(st.floats(0, 1e5), min_size=1, max_size=20),
        st.floats(-100, 100),
    )
    def test_swapping_roles_keeps_pair_count(self, a, b, offset):
        def count(x, y, off):
            try:
                return len(match_events(te(x), te(y), off, 15.0))
            except MatchingError:
                return 0

        assert count(a, b, offset) == count(b, a, -offset)


class TestTimedEvents:
    def test_row_offset_and_trailing(self):
        track = TimestampTrack("c", 1000, (0.0, 40.0, 80.0))
        events = [
            EventObservation("c", 1, 100, 90.0),
            EventObservation("c", 2, 50, 90.0, "trailing"),
        ]
        out = timed_events(events, track, SensorGeometry(180, 10, 10), 40.0)
        assert len(out) == 1
        assert out[0].frame_time == 40.0
        assert out[0].time == pytest.approx(40.0 + 110 * 0.2)

    def test_frame_outside_track(self):
        with pytest.raises(DomainError):
            timed_events([EventObservation("c", 3, 1, 1.0)], TimestampTrack("c", 1000, (0.0, 40.0)))


class TestSolvePairwise:
    def test_exact_recovery(self):
        s = exact_pairs(spread_times(10, 1), ALPHA, BETA, T_C, T_REF)
        sol = solve_pairwise(s, ROW_PERIODS_FREE)
        p = sol.params["cam"]
        assert abs(p.alpha - ALPHA) / ALPHA < 1e-9
        assert abs(p.beta - BETA) / abs(BETA) < 1e-9
        assert abs(p.t_row - T_C) / T_C < 1e-9
        assert abs(sol.t_row_ref - T_REF) / T_REF < 1e-9
        assert sol.std_error < 1e-9

    def test_identity_with_known_rows(self):
        pairs = tuple(MatchedPair(f, r, 40.0 * f, f, r, 40.0 * f) for f, r in [(3, 10), (90, 400), (600, 7)])
        sol = solve_pairwise(MatchedEventSet("c", "r", pairs), ROW_PERIODS_KNOWN, 0.02, 0.02)
        assert sol.params["c"].alpha == pytest.approx(1.0, abs=1e-14)
        assert sol.params["c"].beta == pytest.approx(0.0, abs=1e-9)
        assert np.all(np.abs(sol.residuals["c"]) < 1e-9)

    def test_known_mode_needs_periods(self):
        s = exact_pairs(spread_times(5, 2), ALPHA, BETA, T_C, T_REF)
        with pytest.raises(DomainError):
            solve_pairwise(s, ROW_PERIODS_KNOWN, t_row_c=T_C)
        with pytest.raises(DomainError):
            solve_pairwise(s, "guess")

    def test_too_few_pairs(self):
        s = exact_pairs(spread_times(3, 3), ALPHA, BETA, T_C, T_REF)
        with pytest.raises(SingularSystemError) as err:
            solve_pairwise(s)
        assert err.value.directions

    def test_events_in_one_frame_are_singular(self):
        pairs = tuple(MatchedPair(7, r, 280.0, 9, r + 3, 360.0) for r in (10.0, 20.0, 35.0))
        with pytest.raises(SingularSystemError) as err:
            solve_pairwise(MatchedEventSet("c", "r", pairs), ROW_PERIODS_KNOWN, 0.02, 0.02)
        assert "alpha[c]" in err.value.directions

    def test_aligned_frames_leave_row_periods_unidentified(self):
        # same frame rate and phase: every pair has t_ref = t_c + const
        s = exact_pairs(spread_times(12, 4), 1.0, 0.0, 0.02, 0.02, frame_c=40.0, frame_ref=40.0)
        with pytest.raises(SingularSystemError) as err:
            solve_pairwise(s)
        assert set(err.value.directions) == {"t_row[cam]", "t_row[ref]"}
        # datasheet row periods make the same data solvable
        sol = solve_pairwise(s, ROW_PERIODS_KNOWN, 0.02, 0.02)
        assert sol.params["cam"].alpha == pytest.approx(1.0, abs=1e-12)

    def test_noise_band_monte_carlo(self):
        # 30 rows of reference noise at t_row_ref = 0.0154 ms is 0.46 ms
        stds = []
        for seed in range(40):
            rng = np.random.default_rng(seed)
            times = spread_times(40, 100 + seed)
            s = exact_pairs(times, ALPHA, BETA, T_C, 0.0154, row_noise=rng.normal(0, 30, 40))
            stds.append(solve_pairwise(s).std_error)
        assert 0.3 <= np.median(stds) <= 0.7


class TestSolveJoint:
    def capture(self, seed=0, **kwargs):
        rng = np.random.default_rng([seed, 1])
        times = spaced_flash_times(25, 10000, 250000, 2000, rng)
        return simulate_capture(four_camera_rig(**kwargs), FlashSchedule(times), 260000, seed=seed)

    def test_noiseless_recovery(self):
        cap = self.capture()
        sets = [cap.ground_truth_matches(c) for c in ("cam2", "cam3", "cam4")]
        sol = solve_joint(sets)
        ref = cap.cameras["cam1"].ground_truth
        assert abs(sol.t_row_ref - ref.t_row) / ref.t_row < 1e-9
        for cid, truth in cap.ground_truth().items():
            if cid == "cam1":
                continue
            p = sol.params[cid]
            assert abs(p.alpha - truth.alpha) / truth.alpha < 1e-9
            assert abs(p.beta - truth.beta) / abs(truth.beta) < 1e-9
            assert abs(p.t_row - truth.t_row) / truth.t_row < 1e-9

    def test_single_camera_equals_pairwise(self):
        rng = np.random.default_rng(3)
        s = exact_pairs(spread_times(15, 5), ALPHA, BETA, T_C, T_REF, row_noise=rng.normal(0, 5, 15))
        a, b = solve_joint([s]), solve_pairwise(s, ROW_PERIODS_FREE)
        assert a.params == b.params
        assert a.t_row_ref == b.t_row_ref
        assert np.array_equal(a.residuals["cam"], b.residuals["cam"])

    def test_mixed_references(self):
        a = exact_pairs(spread_times(8, 6), ALPHA, BETA, T_C, T_REF, camera_id="a")
        b = exact_pairs(spread_times(8, 7), ALPHA, BETA, T_C, T_REF, camera_id="b", reference_id="x")
        with pytest.raises(DomainError):
            solve_joint([a, b])

    def test_duplicate_camera(self):
        a = exact_pairs(spread_times(8, 6), ALPHA, BETA, T_C, T_REF, camera_id="a")
        with pytest.raises(DomainError):
            solve_joint([a, a])

    def test_empty(self):
        with pytest.raises(DomainError):
            solve_joint([])

    def test_known_reference_period(self):
        s = exact_pairs(spread_times(10, 8), ALPHA, BETA, T_C, T_REF)
        sol = solve_joint([s], {"ref": T_REF})
        assert sol.t_row_ref == T_REF
        assert sol.params["cam"].t_row == pytest.approx(T_C, rel=1e-9)
        assert "ref" not in sol.standard_errors

    def test_noisy_per_camera_band(self):
        stds = []
        for seed in range(10):
            specs = four_camera_rig()
            specs[0] = dataclasses.replace(specs[0], row_noise_sigma=30.0)
            rng = np.random.default_rng([seed, 2])
            times = spaced_flash_times(60, 5000, 155000, 1500, rng)
            cap = simulate_capture(specs, FlashSchedule(times), 160000, seed=seed)
            sol = solve_joint([cap.ground_truth_matches(c) for c in ("cam2", "cam3", "cam4")])
            stds.extend(sol.camera_std.values())
        assert 0.3 <= np.median(stds) <= 0.6


class TestResiduals:
    def test_noiseless(self):
        s = exact_pairs(spread_times(12, 9), ALPHA, BETA, T_C, T_REF)
        sol = solve_pairwise(s)
        report = residual_report(sol, [s])
        assert np.all(np.abs(report.residuals("cam")) < 1e-6)

    def test_two_pairs_exact_fit(self):
        pairs = (MatchedPair(0, 10, 0.0, 0, 12, 500.0), MatchedPair(100, 30, 4000.0, 100, 2, 4500.2))
        s = MatchedEventSet("c", "r", pairs)
        sol = solve_pairwise(s, ROW_PERIODS_KNOWN, 0.02, 0.03)
        assert np.all(np.abs(residual_report(sol, [s]).residuals("c")) < 1e-9)

    def test_std_matches_independent_recomputation(self):
        rng = np.random.default_rng(10)
        s = exact_pairs(spread_times(30, 11), ALPHA, BETA, T_C, T_REF, row_noise=rng.normal(0, 20, 30))
        sol = solve_pairwise(s)
        p = sol.params["cam"]
        direct = [
            p.alpha * q.t_c + p.beta + q.row_c * p.t_row - (q.t_ref + q.row_ref * sol.t_row_ref)
            for q in s.pairs
        ]
        assert sol.camera_std["cam"] == pytest.approx(float(np.std(direct)), rel=1e-6)
        report = residual_report(sol, [s])
        assert report.camera_std["cam"] == pytest.approx(sol.camera_std["cam"], rel=1e-6)
        assert np.allclose(report.residuals("cam"), sol.residuals["cam"], atol=1e-7)
        assert abs(np.mean(direct)) < 1e-6

    def test_matched_csv(self):
        s = exact_pairs(spread_times(6, 12), ALPHA, BETA, T_C, T_REF)
        text = format_matched_csv(residual_report(solve_pairwise(s), [s]))
        lines = text.splitlines()
        assert lines[0] == "camera,frame_c,row_c,t_c_ms,frame_ref,row_ref,t_ref_ms,residual_ms"
        assert len(lines) == 7 and lines[1].startswith("cam,")


class TestSolutionJson:
    def test_round_trip(self):
        rng = np.random.default_rng(13)
        s = exact_pairs(spread_times(10, 13), ALPHA, BETA, T_C, T_REF, row_noise=rng.normal(0, 5, 10))
        sol = solve_pairwise(s)
        again = SyncSolution.from_json(sol.to_json())
        assert again.params == sol.params
        assert again.t_row_ref == sol.t_row_ref
        assert np.array_equal(again.residuals["cam"], sol.residuals["cam"])
        doc = json.loads(sol.to_json())
        assert set(doc["cameras"]["cam"]) >= {"alpha", "beta_ms", "t_row_ms", "std_error_ms"}
        assert doc["reference"]["camera"] == "ref"

    def test_exactly_determined_fit_is_strict_json(self):
        s = exact_pairs(spread_times(4, 14), ALPHA, BETA, T_C, T_REF)
        text = solve_pairwise(s).to_json()
        assert "NaN" not in text
        assert json.loads(text)["cameras"]["cam"]["standard_errors"]["alpha"] is None

    def test_malformed(self):
        with pytest.raises(DomainError):
            SyncSolution.from_json("{}")
        with pytest.raises(DomainError):
            SyncSolution.from_json("not json")


class TestSynchronize:
    def test_pipeline_with_matching(self):
        cap = TestSolveJoint().capture(seed=2)
        geoms = {cid: c.spec.geometry for cid, c in cap.cameras.items()}
        sol, sets = synchronize(cap.tracks(), cap.observations(), "cam1", geoms)
        for cid, truth in cap.ground_truth().items():
            if cid != "cam1":
                assert sol.params[cid].alpha == pytest.approx(truth.alpha, abs=1e-12)
                assert sol.params[cid].beta == pytest.approx(truth.beta, abs=1e-6)
        assert [s.camera_id for s in sets] == ["cam2", "cam3", "cam4"]

    def test_manual_offset_and_pairwise(self):
        cap = TestSolveJoint().capture(seed=4)
        geoms = {cid: c.spec.geometry for cid, c in cap.cameras.items()}
        auto, _ = synchronize(cap.tracks(), cap.observations(), "cam1", geoms)
        offsets = {"cam2": 6066.7, "cam3": -37500.2, "cam4": -23858.7}
        manual, _ = synchronize(cap.tracks(), cap.observations(), "cam1", geoms, manual_offsets=offsets)
        for cid in offsets:
            assert manual.params[cid].alpha == pytest.approx(auto.params[cid].alpha, abs=1e-12)
        pair, _ = synchronize(cap.tracks(), cap.observations(), "cam1", geoms, joint=False)
        for cid in offsets:
            assert pair.params[cid].beta == pytest.approx(auto.params[cid].beta, abs=1e-6)

    def test_unknown_reference(self):
        with pytest.raises(DomainError):
            synchronize({"a": TimestampTrack("a", 1000, (0.0, 40.0))}, {}, "b")


def _instance(seed: int, n: int, noise: float):
    rng = np.random.default_rng(seed)
    alpha = 1 + rng.uniform(-2e-5, 2e-5)
    beta = rng.uniform(-45000, 45000)
    t_c = rng.uniform(0.015, 0.05)
    t_ref = rng.uniform(0.015, 0.05)
    times = np.sort(rng.uniform(5000, 300000, n))
    return exact_pairs(times, alpha, beta, t_c, t_ref, row_noise=rng.normal(0, noise, n)), (alpha, beta, t_c, t_ref)


@PROPERTY
@given(st.integers(0, 2**32 - 1), st.integers(8, 30), st.floats(-1e5, 1e5))
def test_reference_shift_moves_beta(seed, n, delta):
    s, _ = _instance(seed, n, 10.0)
    base, moved = solve_pairwise(s), solve_pairwise(shifted(s, d_ref=delta))
    assert moved.params["cam"].beta - base.params["cam"].beta == pytest.approx(delta, abs=1e-6)
    assert moved.params["cam"].alpha == pytest.approx(base.params["cam"].alpha, abs=1e-13)
    assert moved.params["cam"].t_row == pytest.approx(base.params["cam"].t_row, rel=1e-8)
    assert moved.t_row_ref == pytest.approx(base.t_row_ref, rel=1e-8)


@PROPERTY
@given(st.integers(0, 2**32 - 1), st.integers(8, 30), st.floats(-1e5, 1e5))
def test_camera_shift_moves_beta_by_minus_alpha_delta(seed, n, delta):
    s, _ = _instance(seed, n, 10.0)
    base, moved = solve_pairwise(s), solve_pairwise(shifted(s, d_c=delta))
    alpha = base.params["cam"].alpha
    assert moved.params["cam"].beta - base.params["cam"].beta == pytest.approx(-alpha * delta, abs=1e-6)
    assert moved.params["cam"].alpha == pytest.approx(alpha, abs=1e-13)


@PROPERTY
@given(st.integers(0, 2**32 - 1), st.integers(8, 30), st.sampled_from([0.5, 5.0, 30.0]))
def test_residuals_orthogonal_to_design(seed, n, noise):
    s, _ = _instance(seed, n, noise)
    system = _build_system([s], {})
    sol = solve_pairwise(s)
    r = sol.residuals["cam"]
    A = system.matrix
    scale = np.linalg.norm(A, axis=0) * max(np.linalg.norm(r), 1e-300)
    assert np.all(np.abs(A.T @ r) <= 1e-8 * scale + 1e-12)


@PROPERTY
@given(st.integers(0, 2**32 - 1), st.integers(8, 30))
def test_noiseless_exact_recovery(seed, n):
    s, (alpha, beta, t_c, t_ref) = _instance(seed, n, 0.0)
    sol = solve_pairwise(s)
    p = sol.params["cam"]
    assert abs(p.alpha - alpha) / alpha < 1e-9
    assert abs(p.beta - beta) / max(abs(beta), 1.0) < 1e-9
    assert abs(p.t_row - t_c) / t_c < 1e-9
    assert abs(sol.t_row_ref - t_ref) / t_ref < 1e-9


@PROPERTY
@given(st.integers(0, 2**32 - 1), st.integers(8, 30), st.floats(0.0, 30.0))
def test_joint_single_camera_is_pairwise(seed, n, noise):
    s, _ = _instance(seed, n, noise)
    a, b = solve_joint([s]), solve_pairwise(s, ROW_PERIODS_FREE)
    assert a.params == b.params and a.t_row_ref == b.t_row_ref
