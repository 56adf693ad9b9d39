import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strengthnet.errors import Empty, LengthMismatch, OutOfRange, TooShort, ZeroVariance
from strengthnet.evaluation import (
    build_report,
    confusion_tsv,
    histogram,
    histogram_tsv,
    mae,
    ser_accuracy,
    spearman,
    strength_confusion,
)

scores = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=60)


def _naive_spearman(x, y):
    """Average ranks by pairwise counting, then Pearson with plain sums."""
    def ranks(v):
        n = len(v)
        return [1 + sum(v[j] < v[i] for j in range(n)) + 0.5 * sum(v[j] == v[i] for j in range(n) if j != i)
                for i in range(n)]
    a, b = ranks(x), ranks(y)
    ma, mb = sum(a) / len(a), sum(b) / len(b)
    cov = sum((p - ma) * (q - mb) for p, q in zip(a, b))
    va = sum((p - ma) ** 2 for p in a)
    vb = sum((q - mb) ** 2 for q in b)
    return cov / (va * vb) ** 0.5


class TestMae:
    def test_examples(self):
        assert mae([0.1, 0.7], [0.1, 0.7]) == 0.0
        assert mae([0.2], [0.5]) == pytest.approx(0.3)

    def test_errors(self):
        with pytest.raises(LengthMismatch):
            mae([0.1], [0.1, 0.2])
        with pytest.raises(Empty):
            mae([], [])

    @settings(max_examples=100)
    @given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=40), st.floats(-3, 3))
    def test_symmetric_and_shift_invariant(self, pairs, c):
        a = np.array([p[0] for p in pairs])
        b = np.array([p[1] for p in pairs])
        assert mae(a, b) == mae(b, a)
        assert mae(a + c, b + c) == pytest.approx(mae(a, b), abs=1e-9)
        assert mae(a, b) >= 0


class TestSerAccuracy:
    def test_all_correct(self):
        assert ser_accuracy(np.eye(4), [0, 1, 2, 3]) == 1.0

    def test_uniform_ties_pick_class_zero(self):
        labels = [0, 1, 0, 2, 3, 0]
        assert ser_accuracy(np.full((6, 4), 0.25), labels) == 0.5

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            ser_accuracy(np.eye(4), [0, 1])


class TestConfusion:
    def test_single_increment(self):
        np.testing.assert_array_equal(strength_confusion([0.4], ["normal"]), [[1, 0], [0, 0]])

    def test_boundary_is_strong(self):
        np.testing.assert_array_equal(strength_confusion([0.5], ["strong"]), [[0, 0], [0, 1]])

    def test_empty(self):
        with pytest.raises(Empty):
            strength_confusion([], [])

    @settings(max_examples=100)
    @given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=60))
    def test_marginals_and_diagonal(self, rows):
        pred = [r[0] for r in rows]
        cats = ["strong" if r[1] else "normal" for r in rows]
        conf = strength_confusion(pred, cats)
        assert conf.sum() == len(rows)
        assert conf[1].sum() == cats.count("strong")
        assert conf[:, 1].sum() == sum(p >= 0.5 for p in pred)
        direct = sum((p >= 0.5) == (c == "strong") for p, c in zip(pred, cats)) / len(rows)
        assert np.trace(conf) / len(rows) == pytest.approx(direct)


class TestHistogram:
    def test_zeros_in_first_bin(self):
        counts = histogram(np.zeros(7))
        assert counts[0] == 7 and counts.sum() == 7

    def test_bin_centres(self):
        np.testing.assert_array_equal(histogram((np.arange(20) + 0.5) / 20), np.ones(20))

    def test_one_in_last_bin(self):
        assert histogram([1.0])[-1] == 1

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            histogram([1.01])
        with pytest.raises(OutOfRange):
            histogram([np.nan])

    @settings(max_examples=100)
    @given(scores, st.randoms(use_true_random=False))
    def test_partition_and_permutation(self, values, rnd):
        counts = histogram(values)
        assert counts.sum() == len(values)
        shuffled = list(values)
        rnd.shuffle(shuffled)
        np.testing.assert_array_equal(histogram(shuffled), counts)

    def test_tsv(self):
        text = histogram_tsv(histogram([0.0, 0.99], bins=4))
        assert text.splitlines() == ["bin_low\tbin_high\tcount", "0.0000\t0.2500\t1", "0.2500\t0.5000\t0",
                                     "0.5000\t0.7500\t0", "0.7500\t1.0000\t1"]


class TestSpearman:
    def test_examples(self):
        assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == 1.0
        assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0

    def test_errors(self):
        with pytest.raises(TooShort):
            spearman([1.0], [2.0])
        with pytest.raises(ZeroVariance):
            spearman([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=50)
        y = x + rng.normal(size=50)
        assert abs(spearman(x, y) - _naive_spearman(list(x), list(y))) < 1e-9

    def test_ties_match_oracle(self):
        x = [1, 1, 2, 3, 3, 3, 4]
        y = [2, 1, 1, 5, 4, 4, 9]
        assert abs(spearman(x, y) - _naive_spearman(x, y)) < 1e-9

    @settings(max_examples=100)
    @given(st.lists(st.tuples(st.integers(-40, 40), st.integers(-40, 40)), min_size=3, max_size=40,
                    unique_by=lambda t: t[0]))
    def test_monotone_transform_invariance(self, pairs):
        x = np.array([p[0] for p in pairs], dtype=float)
        y = np.array([p[1] for p in pairs], dtype=float)
        if np.ptp(y) == 0:
            return
        rho = spearman(x, y)
        assert -1 <= rho <= 1
        assert spearman(np.exp(x / 4), y) == pytest.approx(rho, abs=1e-12)
        assert spearman(x, y ** 3 + y) == pytest.approx(rho, abs=1e-12)


class TestReport:
    def test_fields_and_breakdowns(self):
        pred = [0.1, 0.6, 0.8, 0.3, 0.55]
        gt = [0.2, 0.7, 0.4, 0.35, 0.9]
        probs = np.eye(4)[[0, 1, 2, 3, 0]]
        report = build_report(pred, gt, probs, [0, 1, 2, 0, 0], dataset_ids=["a", "a", "b", "b", "b"])
        assert report.mae == pytest.approx(mae(pred, gt))
        assert report.ser_accuracy == 0.8
        assert sum(report.histogram) == report.count == 5
        assert np.sum(report.confusion) == 5
        assert set(report.per_dataset) == {"a", "b"}
        assert report.per_dataset["b"]["mae"] == pytest.approx(mae(pred[2:], gt[2:]))
        assert report.per_dataset["a"]["count"] == 2
        back = json.loads(report.to_json())
        assert back["spearman"] == pytest.approx(spearman(pred, gt))

    def test_percentages_are_row_normalized(self):
        report = build_report([0.1, 0.9, 0.7, 0.2], [0.1, 0.9, 0.2, 0.3])
        assert report.confusion == [[2, 1], [0, 1]]
        assert report.confusion_percent[0] == pytest.approx([200 / 3, 100 / 3], abs=1e-3)
        assert report.confusion_percent[1] == [0.0, 100.0]

    def test_perceived_override(self):
        report = build_report([0.9, 0.1], [0.9, 0.1], perceived=["normal", "normal"])
        assert report.confusion == [[1, 1], [0, 0]]

    def test_single_item_has_no_spearman(self):
        assert build_report([0.3], [0.2]).spearman is None

    def test_confusion_tsv(self):
        lines = confusion_tsv([[3, 1], [0, 2]]).splitlines()
        assert lines[1] == "normal\t3\t1" and lines[2] == "strong\t0\t2"
