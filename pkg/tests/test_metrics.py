import numpy as np
import pytest

from defectloop import (DataError, MetricsLog, MetricsRow, ValidationError,
                        compare_runs, last_query_summary, read_metrics_csv,
                        samples_to_reach, write_metrics_csv)
from defectloop.metrics import tukey_survivors


def make_log(queries, epochs, batch_n=5, initial_n=100, accuracy_fn=None):
    log = MetricsLog(header={"queries": queries, "epochs_per_query": epochs,
                             "batch_n": batch_n, "initial_n": initial_n,
                             "seed": 0})
    for qi in range(queries + 1):
        for epoch in range(epochs):
            acc = accuracy_fn(qi, epoch) if accuracy_fn else 0.5 + 0.01 * qi
            log.append(MetricsRow(query_index=qi, epoch=epoch,
                                  train_accuracy=acc, train_loss=1.0 - acc,
                                  test_accuracy=acc, test_loss=1.0 - acc))
    return log


class TestTukeySummary:
    def test_synthetic_series_with_known_quartiles(self):
        # hand-computed with linear interpolation: Q1=2.25, Q3=4.75,
        # fences [-1.5, 8.5], outlier {100}, survivor mean 3.0
        survivors, removed = tukey_survivors([1, 2, 3, 4, 5, 100])
        assert removed == 1
        np.testing.assert_array_equal(survivors, [1, 2, 3, 4, 5])
        assert survivors.mean() == pytest.approx(3.0)

    def test_constant_series(self):
        survivors, removed = tukey_survivors([0.9] * 25)
        assert removed == 0
        assert survivors.std() == 0.0

    def test_on_log(self):
        def acc(qi, epoch):
            if qi < 2:
                return 0.5
            return [1, 2, 3, 4, 5, 100][epoch] / 100.0
        log = make_log(queries=2, epochs=6, accuracy_fn=acc)
        summary = last_query_summary(log)
        assert summary.outliers_removed == 1
        assert summary.last_query_mean_accuracy == pytest.approx(0.03)
        assert summary.last_query_std == pytest.approx(np.std([1, 2, 3, 4, 5]) / 100)
        assert "tukey" in summary.outlier_rule

    def test_invariant_to_row_order_within_query(self):
        values = [0.9, 0.91, 0.93, 0.89, 0.92]
        base = last_query_summary(make_log(1, 5, accuracy_fn=lambda q, e: values[e] if q else 0.5))
        perm = last_query_summary(make_log(1, 5, accuracy_fn=lambda q, e: values[::-1][e] if q else 0.5))
        assert base == perm


class TestValidateComplete:
    def test_complete_passes(self):
        make_log(3, 4).validate_complete()

    def test_truncated_names_query(self):
        log = make_log(3, 4)
        log.rows = [r for r in log.rows if not (r.query_index == 3 and r.epoch >= 2)]
        with pytest.raises(DataError, match="query 3"):
            log.validate_complete()


class TestCompareRuns:
    def test_expa_alignment(self):
        a = make_log(queries=20, epochs=25, batch_n=5)
        b = make_log(queries=5, epochs=25, batch_n=20)
        rows = compare_runs(a, b)
        assert [r.cumulative_samples for r in rows] == [20, 40, 60, 80, 100]
        assert [r.query_a for r in rows] == [4, 8, 12, 16, 20]
        assert [r.query_b for r in rows] == [1, 2, 3, 4, 5]

    def test_self_comparison_zero_deltas(self):
        a = make_log(queries=4, epochs=3, batch_n=10)
        rows = compare_runs(a, a)
        for row in rows:
            assert row.test_accuracy_a == row.test_accuracy_b
            assert row.first_epoch_accuracy_a == row.first_epoch_accuracy_b

    def test_mismatched_totals_rejected(self):
        a = make_log(queries=20, epochs=2, batch_n=5)
        b = make_log(queries=5, epochs=2, batch_n=10)
        with pytest.raises(ValidationError):
            compare_runs(a, b)

    def test_mismatched_initial_rejected(self):
        a = make_log(queries=4, epochs=2, batch_n=5, initial_n=100)
        b = make_log(queries=4, epochs=2, batch_n=5, initial_n=60)
        with pytest.raises(ValidationError):
            compare_runs(a, b)

    def test_explicit_counts_validated(self):
        a = make_log(queries=4, epochs=2, batch_n=5)
        with pytest.raises(ValidationError):
            compare_runs(a, a, aligned_sample_counts=[7])


class TestSamplesToReach:
    def test_finds_first_query(self):
        log = make_log(queries=10, epochs=2, batch_n=5,
                       accuracy_fn=lambda qi, e: 0.5 + 0.05 * qi)
        # final-epoch accuracy crosses 0.7 at query 4 -> 20 samples
        assert samples_to_reach(log, 0.7) == 20

    def test_never_reached(self):
        log = make_log(queries=3, epochs=2)
        assert samples_to_reach(log, 0.99) is None

    def test_initial_training_counts_as_zero(self):
        log = make_log(queries=3, epochs=2, accuracy_fn=lambda qi, e: 0.95)
        assert samples_to_reach(log, 0.9) == 0


class TestCsvRoundTrip:
    def test_write_read(self, tmp_path):
        log = make_log(queries=2, epochs=3)
        log.header["note"] = "alpha=0.5"
        path = tmp_path / "metrics.csv"
        write_metrics_csv(log, path)
        loaded = read_metrics_csv(path)
        assert loaded.rows == log.rows
        assert loaded.header["note"] == "alpha=0.5"
        assert loaded.header["queries"] == "2"

    def test_byte_identical_rewrites(self, tmp_path):
        log = make_log(queries=1, epochs=2)
        write_metrics_csv(log, tmp_path / "a.csv")
        write_metrics_csv(log, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_ordering_enforced_on_append(self):
        log = make_log(queries=1, epochs=2)
        with pytest.raises(ValidationError):
            log.append(MetricsRow(0, 0, 0.5, 0.5, 0.5, 0.5))
