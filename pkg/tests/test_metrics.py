import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wvad.core import InputError
from wvad.metrics import (
    UndefinedROCError,
    auc,
    channel_histogram,
    confusion,
    frame_accuracy,
    roc_curve,
)
from wvad.model import predict_labels


def pairwise_auc(scores, truth):
    """O(n^2) Mann-Whitney statistic: P(pos > neg) + 0.5 P(pos == neg)."""
    pos = [s for s, t in zip(scores, truth) if t]
    neg = [s for s, t in zip(scores, truth) if not t]
    total = 0.0
    for p, n in itertools.product(pos, neg):
        total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def brute_roc(scores, truth):
    """(fpr, tpr) for every threshold in {+inf} + distinct scores."""
    scores = np.asarray(scores)
    truth = np.asarray(truth, bool)
    pts = []
    for thr in [np.inf] + sorted(set(scores.tolist()), reverse=True):
        pred = scores >= thr
        pts.append((np.sum(pred & ~truth) / np.sum(~truth), np.sum(pred & truth) / np.sum(truth)))
    return pts


class TestAccuracy:
    def test_examples(self):
        truth = [1, 1, 0, 0, 1, 0, 1, 0]
        pred = [1, 1, 0, 0, 1, 0, 0, 1]
        assert frame_accuracy(pred, truth) == 75.0
        assert frame_accuracy(truth, truth) == 100.0
        assert frame_accuracy(np.logical_not(truth), truth) == 0.0

    def test_empty(self):
        with pytest.raises(InputError):
            frame_accuracy([], [])


class TestRoc:
    def test_perfect_separation(self):
        curve = roc_curve([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        assert any(f == 0 and t == 1 for f, t in zip(curve.fpr, curve.tpr))
        assert auc(curve) == 1.0

    def test_all_equal(self):
        curve = roc_curve([0.5] * 6, [1, 0, 1, 0, 0, 1])
        assert list(zip(curve.fpr, curve.tpr)) == [(0, 0), (1, 1)]
        assert auc(curve) == 0.5

    def test_four_frame_case(self):
        scores, truth = [0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0]
        curve = roc_curve(scores, truth)
        assert list(zip(curve.fpr, curve.tpr)) == brute_roc(scores, truth)
        assert list(zip(curve.fpr, curve.tpr)) == [(0, 0), (0, 0.5), (0.5, 0.5), (0.5, 1), (1, 1)]
        assert auc(curve) == pytest.approx(0.75)

    def test_single_class(self):
        with pytest.raises(UndefinedROCError):
            roc_curve([0.1, 0.2], [1, 1])

    def test_against_pairwise_oracle(self):
        rng = np.random.default_rng(20)
        scores = rng.normal(size=20)
        truth = rng.integers(0, 2, 20)
        truth[:2] = [0, 1]
        assert auc(roc_curve(scores, truth)) == pytest.approx(pairwise_auc(scores, truth), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 8), st.booleans()), min_size=2, max_size=200))
def test_roc_properties(pairs):
    scores = np.array([p[0] for p in pairs], float) / 8.0  # coarse values force ties
    truth = np.array([p[1] for p in pairs])
    if truth.all() or not truth.any():
        return
    curve = roc_curve(scores, truth)
    assert np.all(np.diff(curve.fpr) >= 0) and np.all(np.diff(curve.tpr) >= 0)
    assert curve.fpr[0] == 0 and curve.tpr[0] == 0 and curve.fpr[-1] == 1 and curve.tpr[-1] == 1
    a = auc(curve)
    assert 0.0 <= a <= 1.0
    assert a == pytest.approx(pairwise_auc(scores, truth), abs=1e-9)
    assert list(zip(curve.fpr, curve.tpr)) == pytest.approx(brute_roc(scores, truth))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1), st.booleans()), min_size=2, max_size=100))
def test_operating_point_matches_decision_rule(rows):
    data = np.array([[r[0] for r in rows], [r[1] for r in rows]], np.float32)
    truth = np.array([r[2] for r in rows])
    if truth.all() or not truth.any():
        return
    score = data[1].astype(np.float64) - data[0].astype(np.float64)
    curve = roc_curve(score, truth)
    assert curve.operating_point(0.0) == confusion(predict_labels(data), truth)


class TestHistogram:
    def test_all_half(self):
        hist = channel_histogram(np.full((2, 30), 0.5), bins=10)
        assert hist.counts[0, 5] == 30 and hist.counts[1, 5] == 30
        assert hist.counts.sum() == 60

    def test_empty_filter(self):
        data = np.array([[0.9, 0.8], [0.1, 0.2]])  # both predicted non-speech
        hist = channel_histogram(data, 10, "tp", truth=[True, True])
        assert hist.counts.sum() == 0

    def test_conservation(self, rng):
        data = rng.uniform(0, 1, (2, 500))
        truth = rng.integers(0, 2, 500).astype(bool)
        pred = data[1] >= data[0]
        for subset, n in (("all", 500), ("tp", np.sum(pred & truth)), ("tn", np.sum(~pred & ~truth))):
            hist = channel_histogram(data, 10, subset, truth)
            assert hist.counts[0].sum() == n and hist.counts[1].sum() == n

    def test_includes_one(self):
        hist = channel_histogram(np.ones((2, 3)), 10)
        assert hist.counts[1, -1] == 3

    def test_outer_mass(self):
        data = np.array([[0.5, 0.5, 0.5, 0.5], [0.05, 0.95, 1.0, 0.5]])
        assert channel_histogram(data, 10).outer_mass(1) == 3

    def test_bad_args(self):
        with pytest.raises(InputError):
            channel_histogram(np.zeros((2, 2)), bins=1)
        with pytest.raises(InputError):
            channel_histogram(np.zeros((2, 2)), subset="tp")


def _result(uid, snr, scores, truth):
    from wvad.evaluation import UtteranceResult

    return UtteranceResult(uid, {"snr_db": snr}, np.asarray(scores, np.float32), np.asarray(truth, bool))


class TestSummary:
    def test_groups_and_pooled_average(self):
        from wvad.evaluation import summarize

        a = _result("a", 0.0, [[0.8, 0.2, 0.6], [0.2, 0.8, 0.4]], [0, 1, 1])
        b = _result("b", 10.0, [[0.9, 0.1], [0.1, 0.9]], [0, 1])
        rows = summarize([b, a], ["snr"])
        assert [r["snr"] for r in rows] == [0.0, 10.0, "AVG"]
        assert rows[0]["acc"] == pytest.approx(200 / 3)
        assert rows[1]["acc"] == 100.0
        assert rows[2]["acc"] == pytest.approx(80.0)  # pooled over five frames
        assert rows[2]["n_frames"] == 5

    def test_single_class_group_is_na(self):
        from wvad.evaluation import rows_to_csv, summarize

        a = _result("a", 0.0, [[0.8, 0.6], [0.2, 0.4]], [0, 0])
        b = _result("b", 10.0, [[0.9, 0.1], [0.1, 0.9]], [0, 1])
        rows = summarize([a, b], ["snr"])
        assert rows[0]["auc"] is None
        assert ",NA" in rows_to_csv(rows).splitlines()[1]

    def test_unknown_key(self):
        from wvad.evaluation import summarize

        with pytest.raises(InputError):
            summarize([_result("a", 0.0, [[0.5], [0.5]], [1])], ["gender"])
