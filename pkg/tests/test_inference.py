import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weakseg.inference import (
    Segment,
    count_runs,
    merge_segments,
    segment_dataset,
    segment_instance,
    segment_scores,
)
from weakseg.series import Dataset, TemporalInstance
from helpers import perturbed_model


def assert_tiles(segments, T):
    assert segments[0].start == 1 and segments[-1].end == T
    for a, b in zip(segments, segments[1:]):
        assert b.start == a.end + 1
    for s in segments:
        assert s.start <= s.end


class TestSegmentScores:
    def test_worked_example(self):
        # scores chosen so the cost matrix equals [[0.1,0.9,0.8],[0.9,0.2,0.1]] in ordering
        s = np.array([0.05, 0.9, 0.95])
        segs, bounds = segment_scores(s, [0, 1])
        assert [(x.start, x.end, x.label) for x in segs] == [(1, 1, 0), (2, 3, 1)]
        np.testing.assert_array_equal(bounds, [0, 1, 3])

    def test_all_zero_label(self):
        segs, bounds = segment_scores(np.random.default_rng(0).uniform(size=7), [0, 0, 0])
        assert [(x.start, x.end, x.label) for x in segs] == [(1, 7, 0)]
        assert bounds is None

    def test_single_one_bit(self):
        segs, _ = segment_scores(np.array([0.1, 0.2, 0.9]), [1])
        assert [(x.start, x.end, x.label) for x in segs] == [(1, 3, 1)]

    def test_repeated_bits_are_merged(self):
        s = np.array([0.1, 0.1, 0.2, 0.9, 0.9])
        segs, bounds = segment_scores(s, [0, 0, 1])
        assert len(segs) == 2
        assert len(bounds) == 4

    def test_too_long(self):
        with pytest.raises(ValueError, match="no feasible alignment"):
            segment_scores(np.full(2, 0.5), [0, 1, 0])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 10), st.integers(0, 2**31 - 1))
    def test_tiling_and_run_bound(self, L, extra, seed):
        rng = np.random.default_rng(seed)
        T = L + extra
        bits = rng.integers(0, 2, size=L)
        segs, _ = segment_scores(rng.uniform(size=T), bits)
        assert_tiles(segs, T)
        pred = np.zeros(T, dtype=int)
        for s in segs:
            pred[s.start - 1 : s.end] = s.label
        assert count_runs(pred) <= bits.sum()
        for a, b in zip(segs, segs[1:]):
            assert a.label != b.label


class TestMerge:
    def test_merge(self):
        segs = [Segment(1, 2, 0), Segment(3, 4, 0), Segment(5, 5, 1)]
        assert merge_segments(segs) == [Segment(1, 4, 0), Segment(5, 5, 1)]

    def test_count_runs(self):
        assert count_runs([0, 1, 1, 0, 1]) == 2
        assert count_runs([]) == 0
        assert count_runs([1, 1]) == 1


class TestSegmentInstance:
    def test_low_global_score_gives_single_normal_segment(self):
        m = perturbed_model(0)
        x = np.random.default_rng(0).normal(size=(2, 20))
        res = segment_instance(m, x, 4, 0.5, tau_star=1.1)
        assert [(s.start, s.end, s.label) for s in res.segments] == [(1, 20, 0)]
        assert not res.point_predictions.any()
        assert not res.pseudo_label.any()

    def test_predictions_follow_segments(self):
        m = perturbed_model(1)
        x = np.random.default_rng(1).normal(size=(2, 30))
        res = segment_instance(m, x, 5, 0.3, tau_star=-1.0)
        assert_tiles(res.segments, 30)
        for s in res.segments:
            assert (res.point_predictions[s.start - 1 : s.end] == s.label).all()
        assert count_runs(res.point_predictions) <= res.pseudo_label.sum()

    def test_L_exceeds_T(self):
        with pytest.raises(ValueError):
            segment_instance(perturbed_model(0), np.zeros((2, 3)), 4, 0.5, 0.5)

    def test_dataset_order_and_failures(self):
        rng = np.random.default_rng(2)
        insts = [TemporalInstance("b", rng.normal(size=(2, 12))),
                 TemporalInstance("a", rng.normal(size=(2, 12))),
                 TemporalInstance("c", rng.normal(size=(2, 3)))]
        ds = Dataset(insts, [0, 1, 0])
        results, failures = segment_dataset(perturbed_model(2), ds, 4, 0.5, 0.0)
        assert [r.id for r in results] == ["a", "b"]
        assert [f[0] for f in failures] == ["c"]
