import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfosr.dataset import UNKNOWN_LABEL
from rfosr.errors import DataError
from rfosr.evaluation import (METRIC_FIELDS, MetricsReport, aggregate_runs,
                              compute_metrics, confusion, decision_grid,
                              write_confusion_csv, write_grid_csv)

U = UNKNOWN_LABEL


class TestConfusion:
    def test_perfect_predictions_diagonal(self):
        cm = confusion([1, 2, 3, U], [1, 2, 3, U], 3)
        assert np.trace(cm.counts) == 4
        assert cm.counts.sum() == 4

    def test_all_predicted_unknown(self):
        cm = confusion([1, 2, 1], [U, U, U], 2)
        assert cm.counts[:, :-1].sum() == 0
        assert cm.counts[:, -1].sum() == 3

    def test_hand_tally(self):
        cm = confusion([1, 1, 2, U], [1, 2, 2, U], 2)
        c = cm.counts
        assert c[0, 0] == 1 and c[0, 1] == 1 and c[1, 1] == 1 and c[2, 2] == 1
        assert c.sum() == 4

    def test_row_sums_match_true_counts(self):
        true = [1, 1, 2, 2, 2, U, U]
        cm = confusion(true, [1, 2, 2, U, 2, 1, U], 2)
        np.testing.assert_array_equal(cm.counts.sum(axis=1), [2, 3, 2])

    def test_out_of_range_label(self):
        with pytest.raises(DataError, match="outside"):
            confusion([1, 5], [1, 1], 2)


class TestComputeMetrics:
    def test_closed_set_degeneracy(self):
        # a predictor that never answers unknown has zero unknown-bucket
        # precision and recall, exactly
        cm = confusion([1, 2, U, U], [1, 2, 1, 2], 2)
        rep = compute_metrics(cm)
        assert rep.recall_osr == 0.0
        assert rep.precision_osr == 0.0
        assert rep.geo_mean_pr == 0.0
        assert rep.degenerate

    def test_reported_table_values(self):
        # published precision/recall pair and its geometric mean
        geo = float(np.sqrt(0.9767 * 0.9299))
        assert abs(geo - 0.9530) < 5e-4

    def test_geo_identity_on_generated_reports(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            true = rng.choice([1, 2, 3, U], 60)
            pred = rng.choice([1, 2, 3, U], 60)
            rep = compute_metrics(confusion(true, pred, 3))
            assert abs(rep.geo_mean_pr ** 2
                       - rep.precision_osr * rep.recall_osr) < 1e-12

    def test_two_known_all_correct_f1_is_one(self):
        cm = confusion([1, 2, 1, 2], [1, 2, 1, 2], 2)
        rep = compute_metrics(cm)
        assert rep.mic_f1 == 1.0 and rep.mac_f1 == 1.0
        assert rep.accuracy == 1.0

    def test_micro_equals_macro_when_classes_identical(self):
        # symmetric confusion: every class has TP=3, FP=1, FN=1
        counts = np.array([[3, 1, 0], [1, 3, 0], [0, 0, 0]])
        from rfosr.evaluation import ConfusionMatrix
        rep = compute_metrics(ConfusionMatrix(counts, 2))
        assert rep.mic_f1 == pytest.approx(rep.mac_f1)

    def test_accuracy_between_components(self):
        rng = np.random.default_rng(1)
        true = rng.choice([1, 2, U], 100)
        pred = rng.choice([1, 2, U], 100)
        rep = compute_metrics(confusion(true, pred, 2))
        # overall accuracy is a class-mass-weighted mean of known-class
        # accuracy and unknown recall
        assert (min(rep.acc_known_cls, rep.recall_osr) - 1e-12 <= rep.accuracy
                <= max(rep.acc_known_cls, rep.recall_osr) + 1e-12)

    def test_order_invariance(self):
        rng = np.random.default_rng(2)
        true = rng.choice([1, 2, 3, U], 80)
        pred = rng.choice([1, 2, 3, U], 80)
        rep1 = compute_metrics(confusion(true, pred, 3))
        perm = rng.permutation(80)
        rep2 = compute_metrics(confusion(true[perm], pred[perm], 3))
        for f in METRIC_FIELDS:
            assert getattr(rep1, f) == getattr(rep2, f)

    def test_unknown_only_test_accuracy_equals_recall(self):
        true = [U] * 10
        pred = [U] * 7 + [1, 2, 1]
        rep = compute_metrics(confusion(true, pred, 2))
        assert rep.accuracy == rep.recall_osr == pytest.approx(0.7)


class TestDecisionGrid:
    def test_record_count(self):
        grid = decision_grid(lambda X: np.ones(len(X), dtype=int),
                             (0, 1, 0, 1), 200)
        assert len(grid.label) == 40000

    def test_partition_matches_classifier(self):
        fn = lambda X: np.where(X[:, 0] > 0.5, 2, 1)
        grid = decision_grid(fn, (0, 1, 0, 1), 11)
        np.testing.assert_array_equal(grid.label, fn(np.column_stack([grid.x, grid.y])))

    def test_csv_round_trip(self, tmp_path):
        grid = decision_grid(lambda X: np.ones(len(X), dtype=int), (0, 1, 0, 1), 3)
        path = tmp_path / "grid.csv"
        write_grid_csv(grid, str(path))
        assert len(path.read_text().strip().splitlines()) == 10


class TestAggregate:
    def _rep(self, acc):
        return MetricsReport(accuracy=acc, acc_known_cls=acc, recall_osr=acc,
                             precision_osr=acc, geo_mean_pr=acc, mic_f1=acc,
                             mac_f1=acc)

    def test_single_report(self):
        agg = aggregate_runs([self._rep(0.8)])
        assert agg.mean["accuracy"] == 0.8
        assert agg.std["accuracy"] == 0.0

    def test_two_reports_mean(self):
        agg = aggregate_runs([self._rep(0.8), self._rep(1.0)])
        assert agg.mean["accuracy"] == pytest.approx(0.9)

    def test_std_order_invariant(self):
        reports = [self._rep(v) for v in (0.2, 0.5, 0.9, 0.4)]
        a = aggregate_runs(reports)
        b = aggregate_runs(list(reversed(reports)))
        assert a.std == b.std

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=10))
    @settings(max_examples=30, deadline=None)
    def test_mean_within_range(self, vals):
        agg = aggregate_runs([self._rep(v) for v in vals])
        assert min(vals) - 1e-12 <= agg.mean["accuracy"] <= max(vals) + 1e-12
