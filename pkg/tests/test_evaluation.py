import itertools

import numpy as np
import pandas as pd
import pytest

from mushroomnet.errors import DataError, ShapeError
from mushroomnet.evaluation import (REPORT_COLUMNS, ConfusionMatrix, auc, macro_auc, metrics, overall_accuracy,
                                    per_class_counts, percent, report_table, roc_curve, roc_frame, threat_score,
                                    write_report)


def one_vs_rest(tp, fp, fn, tn=100):
    return ConfusionMatrix(np.array([[tp, fn], [fp, tn]]))


class TestCounts:
    def test_two_by_two(self):
        assert per_class_counts(ConfusionMatrix(np.array([[3, 1], [2, 4]])), 0) == (3, 2, 1, 4)

    def test_counts_cover_the_total(self, rng):
        cm = ConfusionMatrix(rng.integers(0, 20, size=(4, 4)))
        for c in range(4):
            assert sum(per_class_counts(cm, c)) == cm.total

    def test_diagonal(self):
        cm = ConfusionMatrix(np.diag([5, 3, 2]))
        for c in range(3):
            _, fp, fn, _ = per_class_counts(cm, c)
            assert fp == fn == 0

    def test_from_predictions(self):
        cm = ConfusionMatrix.from_predictions([0, 0, 1, 2, 2], [0, 1, 1, 2, 0], 3, names=['a', 'b', 'c'])
        np.testing.assert_array_equal(cm.counts, [[1, 1, 0], [0, 1, 0], [1, 0, 1]])
        assert cm.names == ('a', 'b', 'c')

    def test_absent_class_still_gets_a_row(self):
        cm = ConfusionMatrix.from_predictions([0, 1], [0, 1], 3)
        assert cm.k == 3 and cm.counts[2].sum() == 0

    @pytest.mark.parametrize('counts,error', [
        (np.zeros((2, 3), dtype=int), ShapeError),
        (np.array([[1, -1], [0, 2]]), DataError),
        (np.array([[0.5, 0], [0, 1]]), DataError),
    ])
    def test_invalid(self, counts, error):
        with pytest.raises(error):
            ConfusionMatrix(counts)


class TestMetrics:
    def test_hygrocybe_row(self):
        m = metrics(one_vs_rest(104, 6, 8), 0)
        assert (percent(m.precision), percent(m.recall), percent(m.f1)) == ('94.55', '92.86', '93.69')
        assert percent(m.threat_score) == '88.14'

    def test_morchella_row(self):
        m = metrics(one_vs_rest(27, 1, 2), 0)
        assert (percent(m.precision), percent(m.recall), percent(m.f1)) == ('96.43', '93.10', '94.74')
        assert percent(threat_score(one_vs_rest(27, 1, 2), 0)) == '90.00'

    def test_overall_accuracy(self):
        cm = ConfusionMatrix(np.array([[386, 60], [53, 0]]))
        assert percent(overall_accuracy(cm)) == '77.35'

    def test_recall_times_identified_is_exact(self, rng):
        cm = ConfusionMatrix(rng.integers(1, 50, size=(5, 5)))
        for c in range(5):
            tp, _, fn, _ = per_class_counts(cm, c)
            assert metrics(cm, c).recall * (tp + fn) == pytest.approx(tp, abs=1e-9)

    def test_zero_denominators_are_flagged(self):
        cm = ConfusionMatrix(np.array([[2, 0, 0], [0, 3, 0], [0, 0, 0]]))
        m = metrics(cm, 2)
        assert m.precision == m.recall == m.f1 == 0.0
        assert {'precision', 'recall', 'f1', 'threat_score'} <= set(m.flags)
        assert m.accuracy == 1.0

    def test_permutation_invariance(self, rng):
        counts = rng.integers(0, 30, size=(4, 4))
        order = [2, 0, 3, 1]
        permuted = ConfusionMatrix(counts[np.ix_(order, order)])
        original = ConfusionMatrix(counts)
        for new, old in enumerate(order):
            assert metrics(permuted, new) == metrics(original, old)

    @pytest.mark.parametrize('value,text', [(0.00125, '0.13'), (0.5, '50.00'), (1.0, '100.00'), (0.0, '0.00')])
    def test_percent_rounds_half_up(self, value, text):
        assert percent(value) == text


class TestRoc:
    def test_perfect_separation(self):
        scores = np.array([[0.9, 0.1], [0.8, 0.2], [0.2, 0.8], [0.1, 0.9]])
        assert auc(roc_curve(scores, [0, 0, 1, 1], 0)) == 1.0

    def test_constant_scores(self):
        scores = np.full((4, 2), 0.5)
        points = roc_curve(scores, [0, 1, 0, 1], 1)
        assert points[0] == (0.0, 0.0) and points[-1] == (1.0, 1.0)
        assert auc(points) == pytest.approx(0.5)

    def test_matches_pair_counting(self):
        scores = np.array([[0.1, 0.9], [0.4, 0.6], [0.35, 0.65], [0.8, 0.2]])
        labels = np.array([0, 0, 1, 1])
        positives = scores[labels == 0, 0]
        negatives = scores[labels == 1, 0]
        pairs = [(p > n) + 0.5 * (p == n) for p, n in itertools.product(positives, negatives)]
        assert auc(roc_curve(scores, labels, 0)) == pytest.approx(np.mean(pairs))

    def test_curve_is_monotone_and_bounded(self, rng):
        scores = rng.uniform(size=(30, 3))
        labels = rng.integers(0, 3, size=30)
        labels[:3] = [0, 1, 2]
        for c in range(3):
            points = roc_curve(scores, labels, c)
            fpr = [p[0] for p in points]
            assert fpr == sorted(fpr)
            assert 0.0 <= auc(points) <= 1.0
        assert 0.0 <= macro_auc(scores, labels) <= 1.0

    def test_absent_class(self):
        with pytest.raises(DataError):
            roc_curve(np.zeros((3, 3)), [0, 1, 1], 2)

    def test_single_class(self):
        with pytest.raises(DataError):
            roc_curve(np.zeros((2, 2)), [1, 1], 1)

    def test_frame_skips_absent_classes(self):
        scores = np.array([[0.9, 0.1, 0.0], [0.2, 0.8, 0.0]])
        frame = roc_frame(scores, [0, 1], names=['a', 'b', 'c'])
        assert list(frame.columns) == ['class', 'fpr', 'tpr']
        assert set(frame['class']) == {'a', 'b'}


class TestReport:
    def test_diagonal_matrix(self):
        table = report_table(ConfusionMatrix(np.diag([4, 5, 6])), ['x', 'y', 'z'])
        assert len(table) == 4
        assert list(table.columns) == list(REPORT_COLUMNS)
        for column in REPORT_COLUMNS[4:]:
            assert set(table[column]) == {'100.00'}

    def test_rows_and_totals(self):
        counts = np.array([[104, 5, 3], [4, 50, 0], [2, 1, 30]])
        table = report_table(ConfusionMatrix(counts), ['Hygrocybe', 'b', 'c'])
        first = table.iloc[0]
        assert (first['identified'], first['correct']) == (112, 104)
        assert (first['precision'], first['recall'], first['f1']) == ('94.55', '92.86', '93.69')
        totals = table.iloc[-1]
        assert totals['id'] == '-'
        assert (totals['identified'], totals['correct']) == (counts.sum(), np.trace(counts))
        assert totals['accuracy'] == percent(np.trace(counts) / counts.sum())

    def test_written_csv(self, tmp_path):
        write_report(ConfusionMatrix(np.array([[3, 1], [2, 4]])), tmp_path / 'metrics.csv', ['a', 'b'])
        frame = pd.read_csv(tmp_path / 'metrics.csv', dtype=str)
        assert list(frame.columns) == list(REPORT_COLUMNS)
        assert frame['recall'].tolist() == ['75.00', '66.67', '70.00']
