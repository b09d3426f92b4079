"""Trainable classifier head: two dense ReLU layers and a sigmoid output.

The head sits on top of a frozen feature extractor (see features.py) and is
the only part that trains. Training is plain minibatch SGD with momentum on
binary cross-entropy, implemented directly in numpy with an explicit
backward pass; gradient_check validates it against central finite
differences.

GapDenseClassifier follows the sklearn estimator API: hyperparameters in
__init__, fit(X, y) with warm_start support, predict/predict_proba,
get_params. predict_proba uses sklearn column order [P(0), P(1)] =
[P(normal), P(defect)]; the package-wide ProbVector convention (defect
first) is produced by predict_proba_samples below.
"""

from __future__ import annotations

import base64
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .errors import ConfigurationError, TrainingDivergedError, ValidationError
from .strategies import binary_prob_vector
from .validation import check_finite

logger = logging.getLogger(__name__)

BCE_CLAMP = 1e-7
SIGMOID_CLAMP = 1e-12
CHECKPOINT_FORMAT = "defectloop-classifier"
CHECKPOINT_VERSION = 1

LABEL_NORMAL = 0
LABEL_DEFECT = 1


@dataclass(frozen=True)
class EvalResult:
    """Accuracy fraction and mean binary cross-entropy in nats."""

    accuracy: float
    loss: float


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train: EvalResult
    test: EvalResult | None = None


def bce_loss(prediction: float, label: int) -> float:
    """Binary cross-entropy of one prediction, clamped to [1e-7, 1 - 1e-7]."""
    p = min(max(float(prediction), BCE_CLAMP), 1.0 - BCE_CLAMP)
    y = float(label)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return np.clip(out, SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)


def _mean_bce(p: np.ndarray, y: np.ndarray) -> float:
    pc = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    return float(-(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)).mean())


class GapDenseClassifier(ClassifierMixin, BaseEstimator):
    """Dense ReLU-ReLU-sigmoid head trained with SGD(+momentum) on BCE.

    Labels are 0 = normal, 1 = defect. With warm_start=True a repeated fit
    keeps the current weights and continues training (the query-loop
    "continue" retraining policy); otherwise fit reinitializes.
    """

    def __init__(self, hidden1: int = 64, hidden2: int = 16,
                 learning_rate: float = 0.01, momentum: float = 0.9,
                 batch_size: int = 16, epochs: int = 25,
                 warm_start: bool = False, random_state: int | None = None):
        self.hidden1 = hidden1
        self.hidden2 = hidden2
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.epochs = epochs
        self.warm_start = warm_start
        self.random_state = random_state

    # -- weight lifecycle ---------------------------------------------------

    def _validate_hyperparams(self):
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.hidden1 < 1 or self.hidden2 < 1:
            raise ValidationError("hidden layer widths must be >= 1")

    def init_weights(self, n_features: int) -> "GapDenseClassifier":
        """Materialize seeded initial weights for input width n_features.

        Uniform in +-sqrt(6 / (fan_in + fan_out)) per layer, zero biases,
        so early sigmoid outputs sit near 0.5.
        """
        self._validate_hyperparams()
        if n_features < 1:
            raise ConfigurationError(f"n_features must be >= 1, got {n_features}")
        self._rng = np.random.default_rng(self.random_state)

        def glorot(fan_in, fan_out, shape):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            return self._rng.uniform(-limit, limit, size=shape)

        self.n_features_in_ = n_features
        self.w1_ = glorot(n_features, self.hidden1, (n_features, self.hidden1))
        self.b1_ = np.zeros(self.hidden1)
        self.w2_ = glorot(self.hidden1, self.hidden2, (self.hidden1, self.hidden2))
        self.b2_ = np.zeros(self.hidden2)
        self.w3_ = glorot(self.hidden2, 1, (self.hidden2,))
        self.b3_ = 0.0
        self.classes_ = np.array([LABEL_NORMAL, LABEL_DEFECT])
        self.history_ = []
        return self

    def _check_fitted(self):
        if not hasattr(self, "w1_"):
            raise NotFittedError("classifier head has no weights; call fit or init_weights")

    def _check_width(self, X: np.ndarray):
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ConfigurationError(
                f"feature matrix shape {X.shape} does not match head input width "
                f"{self.n_features_in_}")

    # -- forward / backward -------------------------------------------------

    def _forward_cached(self, X: np.ndarray):
        # extreme weights may overflow to inf; the sigmoid clamp saturates them
        with np.errstate(over="ignore"):
            z1 = X @ self.w1_ + self.b1_
            a1 = np.maximum(z1, 0.0)
            z2 = a1 @ self.w2_ + self.b2_
            a2 = np.maximum(z2, 0.0)
            z3 = a2 @ self.w3_ + self.b3_
            return z1, a1, z2, a2, _sigmoid(z3)

    def decision_function(self, X) -> np.ndarray:
        """Sigmoid outputs P(defect) for a feature matrix."""
        self._check_fitted()
        X = check_finite(X, "features")
        if X.ndim == 1:
            X = X[None, :]
        self._check_width(X)
        return self._forward_cached(X)[-1]

    def forward(self, features) -> float:
        """Sigmoid probability for a single feature vector; in (0, 1)."""
        return float(self.decision_function(np.atleast_2d(features))[0])

    def predict_proba(self, X) -> np.ndarray:
        p = self.decision_function(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) >= 0.5).astype(int)

    def _gradients(self, X, y):
        n = X.shape[0]
        z1, a1, z2, a2, p = self._forward_cached(X)
        dz3 = (p - y) / n
        gw3 = a2.T @ dz3
        gb3 = dz3.sum()
        da2 = np.outer(dz3, self.w3_)
        dz2 = da2 * (z2 > 0)
        gw2 = a1.T @ dz2
        gb2 = dz2.sum(axis=0)
        da1 = dz2 @ self.w2_.T
        dz1 = da1 * (z1 > 0)
        gw1 = X.T @ dz1
        gb1 = dz1.sum(axis=0)
        return [gw1, gb1, gw2, gb2, gw3, gb3]

    def _params(self):
        return [self.w1_, self.b1_, self.w2_, self.b2_, self.w3_, self.b3_]

    def _set_params_list(self, values):
        self.w1_, self.b1_, self.w2_, self.b2_, self.w3_ = values[:5]
        self.b3_ = float(values[5])

    # -- training -----------------------------------------------------------

    def fit(self, X, y, eval_set=None) -> "GapDenseClassifier":
        """Train for self.epochs epochs; per-epoch metrics land in history_.

        eval_set, when given as (X_test, y_test), is evaluated after every
        epoch alongside the training set.
        """
        self._validate_hyperparams()
        X = check_finite(X, "features")
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValidationError(f"training set must be a nonempty 2-D matrix, got {X.shape}")
        if y.shape != (X.shape[0],):
            raise ValidationError(f"labels shape {y.shape} does not match {X.shape[0]} samples")
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise ValidationError("labels must be 0 (normal) or 1 (defect)")
        if len(np.unique(y)) < 2:
            logger.warning("training set contains a single class; proceeding anyway")

        if not (self.warm_start and hasattr(self, "w1_")):
            self.init_weights(X.shape[1])
        self._check_width(X)

        n = X.shape[0]
        # momentum state starts cold on every fit; warm start keeps weights only
        velocities = [np.zeros_like(p) if isinstance(p, np.ndarray) else 0.0
                      for p in self._params()]
        self.history_ = []
        for epoch in range(self.epochs):
            order = self._rng.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                # overflow surfaces as non-finite gradients, checked below
                with np.errstate(over="ignore", invalid="ignore"):
                    grads = self._gradients(X[idx], y[idx])
                for g in grads:
                    if not np.all(np.isfinite(g)):
                        raise TrainingDivergedError(epoch)
                params = self._params()
                for i, (param, grad) in enumerate(zip(params, grads)):
                    velocities[i] = self.momentum * velocities[i] - self.learning_rate * grad
                    params[i] = param + velocities[i]
                self._set_params_list(params)
            for param in self._params():
                if not np.all(np.isfinite(param)):
                    raise TrainingDivergedError(epoch)
            record = EpochRecord(
                epoch=epoch,
                train=self.evaluate(X, y),
                test=self.evaluate(*eval_set) if eval_set is not None else None,
            )
            self.history_.append(record)
        return self

    def evaluate(self, X, y) -> EvalResult:
        """Accuracy at the 0.5 threshold plus mean BCE over a labeled set."""
        y = np.asarray(y, dtype=np.float64)
        if y.size == 0:
            raise ValidationError("cannot evaluate on an empty set")
        p = self.decision_function(X)
        accuracy = float(((p >= 0.5) == (y == 1.0)).mean())
        return EvalResult(accuracy=accuracy, loss=_mean_bce(p, y))


def gradient_check(clf: GapDenseClassifier, features, label,
                   epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Perturbs every parameter of bce_loss(forward(x), y) by +-epsilon and
    compares against the backward pass: |ga - gf| / max(1e-8, |ga| + |gf|).
    """
    if not 1e-6 <= epsilon <= 1e-4:
        raise ValidationError(f"epsilon must lie in [1e-6, 1e-4], got {epsilon}")
    clf._check_fitted()
    x = check_finite(features, "features").reshape(1, -1)
    y = np.array([float(label)])

    analytic = clf._gradients(x, y)

    def loss_at() -> float:
        return bce_loss(clf.forward(x[0]), int(y[0]))

    worst = 0.0
    params = clf._params()
    for pi, param in enumerate(params):
        if isinstance(param, float):
            clf.b3_ = param + epsilon
            up = loss_at()
            clf.b3_ = param - epsilon
            down = loss_at()
            clf.b3_ = param
            numeric = (up - down) / (2.0 * epsilon)
            ga = float(analytic[pi])
            worst = max(worst, abs(ga - numeric) / max(1e-8, abs(ga) + abs(numeric)))
            continue
        flat = param.ravel()
        ga_flat = analytic[pi].ravel()
        for j in range(flat.size):
            original = flat[j]
            flat[j] = original + epsilon
            up = loss_at()
            flat[j] = original - epsilon
            down = loss_at()
            flat[j] = original
            numeric = (up - down) / (2.0 * epsilon)
            ga = float(ga_flat[j])
            worst = max(worst, abs(ga - numeric) / max(1e-8, abs(ga) + abs(numeric)))
    return worst


def predict_proba_samples(clf: GapDenseClassifier, extractor, store, ids):
    """Score samples through extractor -> head -> 2-class probability vector.

    Returns [(sample_id, ProbVector)] in input order; ProbVector follows the
    package convention [P(defect), P(normal)].
    """
    ids = list(ids)
    if not ids:
        return []
    if hasattr(extractor, "output_channels"):
        width = extractor.output_channels
        if hasattr(clf, "n_features_in_") and width != clf.n_features_in_:
            raise ConfigurationError(
                f"extractor emits {width} channels but head expects {clf.n_features_in_}")
    X = extractor.features_for(store, ids)
    p = clf.decision_function(X)
    return [(sample_id, binary_prob_vector(v)) for sample_id, v in zip(ids, p)]


# -- checkpoint io ----------------------------------------------------------

def _encode_array(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype=np.float64)
    return {"shape": list(data.shape),
            "data": base64.b64encode(data.tobytes()).decode("ascii")}


def _decode_array(doc: dict) -> np.ndarray:
    raw = base64.b64decode(doc["data"])
    return np.frombuffer(raw, dtype=np.float64).reshape(doc["shape"]).copy()


def save_checkpoint(clf: GapDenseClassifier, path) -> None:
    """Write a versioned JSON checkpoint; round-trips bit-exactly."""
    clf._check_fitted()
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "params": clf.get_params(),
        "n_features": clf.n_features_in_,
        "weights": {
            "w1": _encode_array(clf.w1_), "b1": _encode_array(clf.b1_),
            "w2": _encode_array(clf.w2_), "b2": _encode_array(clf.b2_),
            "w3": _encode_array(clf.w3_), "b3": clf.b3_.hex(),
        },
        "rng_state": clf._rng.bit_generator.state,
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_checkpoint(path) -> GapDenseClassifier:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path}: not a classifier checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    clf = GapDenseClassifier(**doc["params"])
    clf.init_weights(doc["n_features"])
    weights = doc["weights"]
    clf.w1_ = _decode_array(weights["w1"])
    clf.b1_ = _decode_array(weights["b1"])
    clf.w2_ = _decode_array(weights["w2"])
    clf.b2_ = _decode_array(weights["b2"])
    clf.w3_ = _decode_array(weights["w3"])
    clf.b3_ = float.fromhex(weights["b3"])
    clf._rng.bit_generator.state = doc["rng_state"]
    return clf
