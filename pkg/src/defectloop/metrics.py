"""Run metrics: per-(query, epoch) log, last-query statistics, comparisons.

The metrics CSV starts with `# key=value` comment lines echoing the full
experiment configuration, then one row per (query_index, epoch). Floats are
written with repr() so identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ValidationError

OUTLIER_RULE = "tukey-1.5iqr-linear-quartiles"
CSV_COLUMNS = ("query_index", "epoch", "train_accuracy", "train_loss",
               "test_accuracy", "test_loss")


@dataclass(frozen=True)
class MetricsRow:
    query_index: int
    epoch: int
    train_accuracy: float
    train_loss: float
    test_accuracy: float
    test_loss: float


@dataclass
class MetricsLog:
    """Header echo plus rows strictly ordered by (query_index, epoch)."""

    header: dict = field(default_factory=dict)
    rows: list[MetricsRow] = field(default_factory=list)

    def append(self, row: MetricsRow) -> None:
        if self.rows:
            last = self.rows[-1]
            if (row.query_index, row.epoch) <= (last.query_index, last.epoch):
                raise ValidationError(
                    f"rows must be strictly ordered; got {(row.query_index, row.epoch)} "
                    f"after {(last.query_index, last.epoch)}")
        self.rows.append(row)

    def last_query_index(self) -> int:
        if not self.rows:
            raise DataError("metrics log is empty")
        return max(r.query_index for r in self.rows)

    def query_rows(self, query_index: int) -> list[MetricsRow]:
        return [r for r in self.rows if r.query_index == query_index]

    def header_int(self, key: str) -> int:
        try:
            return int(self.header[key])
        except (KeyError, ValueError):
            raise ValidationError(f"metrics header missing integer key {key!r}") from None

    def validate_complete(self) -> None:
        """Check the log covers query 0 .. queries, each with
        epochs_per_query rows."""
        queries = self.header_int("queries")
        epochs = self.header_int("epochs_per_query")
        for qi in range(queries + 1):
            got = len(self.query_rows(qi))
            if got != epochs:
                raise DataError(
                    f"metrics log incomplete: query {qi} has {got} rows, expected {epochs}")


@dataclass(frozen=True)
class RunSummary:
    """Mean/std of the final query's test accuracies after outlier removal."""

    last_query_mean_accuracy: float
    last_query_std: float
    outliers_removed: int
    outlier_rule: str = OUTLIER_RULE

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)


def tukey_survivors(values) -> tuple[np.ndarray, int]:
    """Drop points outside quartile -+ 1.5*IQR; quartiles use linear
    interpolation."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValidationError("cannot compute outlier fences of an empty series")
    q1, q3 = np.percentile(arr, [25.0, 75.0])
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    keep = (arr >= lo) & (arr <= hi)
    survivors = arr[keep]
    if survivors.size == 0:
        raise DataError("outlier removal left no points; fences are inconsistent")
    return survivors, int(arr.size - survivors.size)


def last_query_summary(log: MetricsLog) -> RunSummary:
    """Table-style statistics over the very last query's per-epoch test
    accuracies: Tukey outlier removal, then mean and population std."""
    rows = log.query_rows(log.last_query_index())
    accuracies = [r.test_accuracy for r in rows]
    survivors, removed = tukey_survivors(accuracies)
    return RunSummary(
        last_query_mean_accuracy=float(survivors.mean()),
        last_query_std=float(survivors.std()),
        outliers_removed=removed)


def samples_to_reach(log: MetricsLog, threshold: float) -> int | None:
    """Cumulative queried-sample count at which final-epoch test accuracy
    first reaches threshold; None when never reached."""
    batch_n = log.header_int("batch_n")
    for qi in range(log.last_query_index() + 1):
        rows = log.query_rows(qi)
        if rows and rows[-1].test_accuracy >= threshold:
            return qi * batch_n
    return None


@dataclass(frozen=True)
class ComparisonRow:
    cumulative_samples: int
    query_a: int
    query_b: int
    test_accuracy_a: float
    test_accuracy_b: float
    first_epoch_accuracy_a: float
    first_epoch_accuracy_b: float


def compare_runs(a: MetricsLog, b: MetricsLog,
                 aligned_sample_counts=None) -> list[ComparisonRow]:
    """Align two runs at equal cumulative queried-sample counts.

    Each aligned point reports the final-epoch and first-epoch test
    accuracies of the matching query in both runs. Runs must share initial_n
    and total queried samples.
    """
    a.validate_complete()
    b.validate_complete()
    batch_a, queries_a = a.header_int("batch_n"), a.header_int("queries")
    batch_b, queries_b = b.header_int("batch_n"), b.header_int("queries")
    if a.header_int("initial_n") != b.header_int("initial_n"):
        raise ValidationError("runs use different initial set sizes; not comparable")
    if batch_a * queries_a != batch_b * queries_b:
        raise ValidationError(
            f"total queried samples differ: {batch_a * queries_a} vs {batch_b * queries_b}")
    counts_a = {batch_a * i: i for i in range(1, queries_a + 1)}
    counts_b = {batch_b * i: i for i in range(1, queries_b + 1)}
    if aligned_sample_counts is None:
        aligned_sample_counts = sorted(set(counts_a) & set(counts_b))
    if not aligned_sample_counts:
        raise ValidationError("no common cumulative sample counts to align on")
    out = []
    for count in aligned_sample_counts:
        if count not in counts_a or count not in counts_b:
            raise ValidationError(f"cumulative count {count} does not exist in both runs")
        rows_a = a.query_rows(counts_a[count])
        rows_b = b.query_rows(counts_b[count])
        out.append(ComparisonRow(
            cumulative_samples=count,
            query_a=counts_a[count], query_b=counts_b[count],
            test_accuracy_a=rows_a[-1].test_accuracy,
            test_accuracy_b=rows_b[-1].test_accuracy,
            first_epoch_accuracy_a=rows_a[0].test_accuracy,
            first_epoch_accuracy_b=rows_b[0].test_accuracy))
    return out


# -- file io ------------------------------------------------------------------

def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def write_metrics_csv(log: MetricsLog, path) -> None:
    lines = [f"# {key}={_fmt(log.header[key])}" for key in sorted(log.header)]
    lines.append(",".join(CSV_COLUMNS))
    for row in log.rows:
        lines.append(",".join(_fmt(getattr(row, col)) for col in CSV_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics_csv(path) -> MetricsLog:
    path = Path(path)
    header: dict[str, str] = {}
    rows: list[MetricsRow] = []
    with path.open(newline="") as fh:
        data_lines = []
        for line in fh:
            stripped = line.strip()
            if stripped.startswith("#"):
                key, _, value = stripped.lstrip("# ").partition("=")
                header[key] = value
            elif stripped:
                data_lines.append(stripped)
    if not data_lines or data_lines[0] != ",".join(CSV_COLUMNS):
        raise DataError(f"{path}: missing metrics column header")
    for record in [dict(zip(CSV_COLUMNS, line.split(","))) for line in data_lines[1:]]:
        rows.append(MetricsRow(
            query_index=int(record["query_index"]), epoch=int(record["epoch"]),
            train_accuracy=float(record["train_accuracy"]),
            train_loss=float(record["train_loss"]),
            test_accuracy=float(record["test_accuracy"]),
            test_loss=float(record["test_loss"])))
    log = MetricsLog(header=header)
    for row in rows:
        log.append(row)
    return log


def write_comparison_csv(rows: list[ComparisonRow], path) -> None:
    columns = list(ComparisonRow.__dataclass_fields__)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(getattr(row, col)) for col in columns])
