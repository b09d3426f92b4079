"""Query-loop orchestration: pool bookkeeping, oracle mediation, experiments.

The loop mirrors the pool-based protocol: train an initial classifier on a
seeded draw, then repeatedly score the remaining pool with the configured
uncertainty strategy, pick the top batch, obtain labels from the oracle,
grow the teach set, and retrain. A run owns its pool state and classifier
exclusively; independent runs never share mutable state.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from . import datasets
from .classifier import GapDenseClassifier
from .errors import ConfigurationError, RunCompleteError, ValidationError
from .features import make_extractor
from .metrics import MetricsLog, MetricsRow, RunSummary, last_query_summary
from .strategies import StrategyKind, binary_prob_vector, score, select_batch

logger = logging.getLogger(__name__)

RETRAIN_POLICIES = ("continue", "reinit")
ORACLE_MODES = ("simulated", "human")


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully determines one run (together with the dataset)."""

    initial_n: int
    queries: int
    batch_n: int
    epochs_per_query: int = 25
    strategy: StrategyKind = StrategyKind.LEAST_CONFIDENCE
    seed: int = 0
    retrain_policy: str = "continue"
    oracle: str = "simulated"
    test_fraction: float = 0.5
    label_noise: float = 0.0
    extractor: str = "fixed-conv"
    learning_rate: float = 0.01
    momentum: float = 0.9
    train_batch_size: int = 16
    hidden1: int = 64
    hidden2: int = 16

    def validate(self) -> "ExperimentConfig":
        if self.initial_n < 1:
            raise ValidationError(f"initial_n must be >= 1, got {self.initial_n}")
        if self.queries < 0:
            raise ValidationError(f"queries must be >= 0, got {self.queries}")
        if self.batch_n < 1:
            raise ValidationError(f"batch_n must be >= 1, got {self.batch_n}")
        if self.epochs_per_query < 1:
            raise ValidationError(f"epochs_per_query must be >= 1, got {self.epochs_per_query}")
        if self.retrain_policy not in RETRAIN_POLICIES:
            raise ValidationError(f"retrain_policy must be one of {RETRAIN_POLICIES}")
        if self.oracle not in ORACLE_MODES:
            raise ValidationError(f"oracle must be one of {ORACLE_MODES}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValidationError("test_fraction must lie in (0, 1)")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ValidationError("label_noise must lie in [0, 1]")
        return self

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["strategy"] = self.strategy.value
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}")
        kwargs = dict(doc)
        if "strategy" in kwargs and not isinstance(kwargs["strategy"], StrategyKind):
            kwargs["strategy"] = StrategyKind.from_string(kwargs["strategy"])
        try:
            cfg = cls(**kwargs)
        except TypeError as exc:
            raise ValidationError(str(exc)) from None
        return cfg.validate()


@dataclass
class QueryBatch:
    """One query's selected pool samples, awaiting (or holding) labels."""

    query_index: int
    sample_ids: list[str]
    scores: list[float]
    strategy: StrategyKind
    status: str = "pending"  # pending -> labeled


@dataclass
class PoolState:
    """Algorithm bookkeeping: unlabeled pool, labeled teach set, held-out
    test set."""

    pool: set[str]
    teach: list[str]
    test: list[str]
    query_history: list[QueryBatch] = field(default_factory=list)
    committed: dict[str, str] = field(default_factory=dict)

    def check_invariants(self, initial_n: int, batch_n: int) -> None:
        pool, teach, test = self.pool, set(self.teach), set(self.test)
        if len(self.teach) != len(teach):
            raise AssertionError("duplicate ids in teach")
        if pool & teach or pool & test or teach & test:
            raise AssertionError("pool/teach/test overlap")
        completed = [b for b in self.query_history if b.status == "labeled"]
        if len(self.teach) != initial_n + len(completed) * batch_n:
            raise AssertionError("teach size does not match completed queries")
        seen: set[str] = set()
        for batch in self.query_history:
            ids = set(batch.sample_ids)
            if ids & seen:
                raise AssertionError("sample id appears in two query batches")
            seen |= ids
        missing = [i for i in self.teach if i not in self.committed]
        if missing:
            raise AssertionError(f"teach ids without committed labels: {missing[:5]}")


class SimulatedOracle:
    """Answers queries from ground truth, optionally with seeded label
    noise."""

    def __init__(self, dataset: datasets.Dataset, noise: float = 0.0, seed: int = 0):
        self.dataset = dataset
        self.noise = noise
        self._rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))

    def label(self, ids) -> dict[str, str]:
        out = {}
        for sample_id in ids:
            truth = self.dataset.ground_truth(sample_id)
            if self.noise > 0.0 and self._rng.random() < self.noise:
                truth = "defect" if truth == "normal" else "normal"
            out[sample_id] = truth
        return out


def label_to_int(label: str) -> int:
    if label not in datasets.LABELS:
        raise ValidationError(f"unknown label {label!r}")
    return 1 if label == "defect" else 0


class ActiveLearningRun:
    """One experiment: owns the pool state, classifier, and metrics log.

    The stepwise surface (init_run / propose_query / complete_query) lets a
    human oracle drive iterations; run_all loops them with the simulated
    oracle.
    """

    def __init__(self, cfg: ExperimentConfig, dataset: datasets.Dataset,
                 extractor=None):
        self.cfg = cfg.validate()
        self.dataset = dataset
        self.extractor = extractor or make_extractor(cfg.extractor)
        self.extractor.fit()
        train_ids, test_ids = datasets.split(dataset, cfg.test_fraction, cfg.seed)
        budget = cfg.initial_n + cfg.queries * cfg.batch_n
        if budget > len(train_ids):
            raise ConfigurationError(
                f"config needs {budget} labelable samples but the train split has "
                f"{len(train_ids)}")
        self.train_ids = train_ids
        self.state = PoolState(pool=set(train_ids), teach=[], test=list(test_ids))
        self.log = MetricsLog(header={"format": "defectloop-metrics", "version": 1,
                                      "dataset_id": dataset.dataset_id,
                                      **cfg.to_dict()})
        self.summary: RunSummary | None = None
        self._features: dict[str, np.ndarray] = {}
        self._init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        self._random_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
        self.oracle = (SimulatedOracle(dataset, cfg.label_noise, cfg.seed)
                       if cfg.oracle == "simulated" else None)
        self.clf = GapDenseClassifier(
            hidden1=cfg.hidden1, hidden2=cfg.hidden2,
            learning_rate=cfg.learning_rate, momentum=cfg.momentum,
            batch_size=cfg.train_batch_size, epochs=cfg.epochs_per_query,
            warm_start=(cfg.retrain_policy == "continue"),
            random_state=cfg.seed)
        self._test_labels = np.array(
            [label_to_int(dataset.ground_truth(i)) for i in self.state.test])
        self._initialized = False

    # -- feature cache -------------------------------------------------------

    def features(self, ids) -> np.ndarray:
        missing = [i for i in ids if i not in self._features]
        if missing:
            matrix = self.extractor.features_for(self.dataset, missing)
            for sample_id, vec in zip(missing, matrix):
                self._features[sample_id] = vec
        return np.stack([self._features[i] for i in ids])

    # -- loop steps ----------------------------------------------------------

    def init_run(self) -> None:
        """Draw and label the initial teach set, then train the initial
        classifier (metrics land under query_index 0)."""
        if self._initialized:
            raise ConfigurationError("run already initialized")
        # prefix of a seeded permutation: initial sets nest across different
        # initial_n at the same seed, so size comparisons share their draw
        perm = self._init_rng.permutation(sorted(self.state.pool))
        initial = sorted(str(i) for i in perm[: self.cfg.initial_n])
        # the initial set is prepared data: labels come from ground truth in
        # both oracle modes, without label noise
        for sample_id in initial:
            self.state.committed[sample_id] = self.dataset.ground_truth(sample_id)
        self.state.teach.extend(initial)
        self.state.pool.difference_update(initial)
        self._initialized = True
        self._train_and_record(query_index=0)

    def pending_batch(self) -> QueryBatch | None:
        if self.state.query_history and self.state.query_history[-1].status == "pending":
            return self.state.query_history[-1]
        return None

    def propose_query(self) -> QueryBatch:
        """Score the pool and select the next batch; leaves it pending."""
        if not self._initialized:
            raise ConfigurationError("init_run must complete before queries")
        if self.pending_batch() is not None:
            raise ConfigurationError("previous query batch is still pending labels")
        next_index = len(self.state.query_history) + 1
        if next_index > self.cfg.queries:
            raise RunCompleteError("configured query budget exhausted")
        if len(self.state.pool) < self.cfg.batch_n:
            raise RunCompleteError(
                f"pool ({len(self.state.pool)}) smaller than batch size {self.cfg.batch_n}")
        pool_ids = sorted(self.state.pool)
        if self.cfg.strategy is StrategyKind.RANDOM:
            values = self._random_rng.random(len(pool_ids))
            scored = list(zip(pool_ids, values.tolist()))
        else:
            sigmoid = self.clf.decision_function(self.features(pool_ids))
            scored = [(sample_id, score(self.cfg.strategy, binary_prob_vector(p)))
                      for sample_id, p in zip(pool_ids, sigmoid)]
        selected = select_batch(scored, self.cfg.batch_n)
        by_id = dict(scored)
        batch = QueryBatch(query_index=next_index, sample_ids=selected,
                           scores=[float(by_id[i]) for i in selected],
                           strategy=self.cfg.strategy)
        self.state.query_history.append(batch)
        return batch

    def complete_query(self, labels: dict[str, str]) -> QueryBatch:
        """Commit a fully labeled batch, retrain, and record metrics."""
        batch = self.pending_batch()
        if batch is None:
            raise ConfigurationError("no pending query batch")
        missing = [i for i in batch.sample_ids if i not in labels]
        if missing:
            raise ValidationError(f"labels missing for batch ids {missing}")
        extra = [i for i in labels if i not in batch.sample_ids]
        if extra:
            raise ValidationError(f"labels for ids outside the pending batch: {extra}")
        for sample_id in batch.sample_ids:
            self.state.committed[sample_id] = labels[sample_id]
        self.state.teach.extend(batch.sample_ids)
        self.state.pool.difference_update(batch.sample_ids)
        batch.status = "labeled"
        self._train_and_record(query_index=batch.query_index)
        return batch

    def run_query_iteration(self) -> QueryBatch:
        if self.oracle is None:
            raise ConfigurationError("human-oracle runs must use propose/complete")
        batch = self.propose_query()
        return self.complete_query(self.oracle.label(batch.sample_ids))

    def run_all(self) -> tuple[MetricsLog, RunSummary]:
        """Execute init plus exactly cfg.queries iterations."""
        self.init_run()
        for _ in range(self.cfg.queries):
            self.run_query_iteration()
        self.summary = last_query_summary(self.log)
        return self.log, self.summary

    def finish(self) -> RunSummary:
        self.summary = last_query_summary(self.log)
        return self.summary

    # -- persistence ---------------------------------------------------------

    def snapshot(self) -> dict:
        """JSON-serializable loop state (classifier weights are checkpointed
        separately)."""
        return {
            "initialized": self._initialized,
            "teach": list(self.state.teach),
            "pool": sorted(self.state.pool),
            "test": list(self.state.test),
            "committed": dict(self.state.committed),
            "batches": [
                {"query_index": b.query_index, "sample_ids": b.sample_ids,
                 "scores": b.scores, "strategy": b.strategy.value, "status": b.status}
                for b in self.state.query_history
            ],
            "rows": [[r.query_index, r.epoch, r.train_accuracy, r.train_loss,
                      r.test_accuracy, r.test_loss] for r in self.log.rows],
            "random_rng_state": self._random_rng.bit_generator.state,
        }

    def restore(self, snapshot: dict) -> None:
        """Reinstate loop state saved by snapshot(); the caller restores the
        classifier weights."""
        if set(snapshot["test"]) != set(self.state.test):
            raise ConfigurationError("snapshot test split does not match dataset/config")
        self._initialized = snapshot["initialized"]
        self.state.teach = list(snapshot["teach"])
        self.state.pool = set(snapshot["pool"])
        self.state.committed = dict(snapshot["committed"])
        self.state.query_history = [
            QueryBatch(query_index=b["query_index"], sample_ids=list(b["sample_ids"]),
                       scores=list(b["scores"]),
                       strategy=StrategyKind.from_string(b["strategy"]),
                       status=b["status"])
            for b in snapshot["batches"]
        ]
        self.log.rows = [MetricsRow(query_index=int(r[0]), epoch=int(r[1]),
                                    train_accuracy=float(r[2]), train_loss=float(r[3]),
                                    test_accuracy=float(r[4]), test_loss=float(r[5]))
                         for r in snapshot["rows"]]
        self._random_rng.bit_generator.state = snapshot["random_rng_state"]

    # -- internals -----------------------------------------------------------

    def _train_and_record(self, query_index: int) -> None:
        X = self.features(self.state.teach)
        y = np.array([label_to_int(self.state.committed[i]) for i in self.state.teach])
        if len(np.unique(y)) < 2:
            logger.warning("query %d: teach set is single-class (%d samples)",
                           query_index, len(y))
        X_test = self.features(self.state.test)
        self.clf.fit(X, y, eval_set=(X_test, self._test_labels))
        for record in self.clf.history_:
            self.log.append(MetricsRow(
                query_index=query_index, epoch=record.epoch,
                train_accuracy=record.train.accuracy, train_loss=record.train.loss,
                test_accuracy=record.test.accuracy, test_loss=record.test.loss))


def run_experiment(cfg: ExperimentConfig, dataset: datasets.Dataset,
                   extractor=None) -> tuple[MetricsLog, RunSummary]:
    """Convenience wrapper: build a run, execute it fully, return its log
    and summary."""
    if cfg.oracle != "simulated":
        raise ConfigurationError("run_experiment drives the simulated oracle only")
    return ActiveLearningRun(cfg, dataset, extractor=extractor).run_all()
