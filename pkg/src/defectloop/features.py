"""Feature extraction front ends for the classifier.

The pretrained-CNN feature stage is abstracted behind three interchangeable
extractors, all deterministic and frozen (only the classifier head trains):

* FixedConvExtractor  - seeded bank of small convolution filters + ReLU with
  stride, followed by global average pooling. The desk-scale default.
* RawDownsampleExtractor - block-averaged pixels as a plain feature vector.
* PrecomputedExtractor   - per-sample feature vectors ingested from a CSV
  (e.g. features exported from an external pretrained network).

All extractors implement the sklearn transformer API (fit/transform,
get_params) and the id-based `features_for(store, ids)` used by the engine.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import DataError, ValidationError
from .validation import check_feature_map, check_image

FILTER_BANK_SEED = 1829


def gap2d(fm) -> np.ndarray:
    """Global average pooling: mean over all H x W positions per channel.

    Input is an H x W x C activation tensor; output has length C.
    """
    arr = check_feature_map(fm)
    return arr.mean(axis=(0, 1))


def _as_image_array(x) -> np.ndarray:
    return check_image(x).astype(np.float64) / 255.0


class FixedConvExtractor(TransformerMixin, BaseEstimator):
    """Frozen seeded convolutional filter bank + biased ReLU + stride + GAP.

    Filters are zero-mean unit-norm kernels (edge/blob detectors) drawn once
    from `seed`; they never train. `bias` acts as a detection threshold that
    suppresses smooth-background responses, `gain` rescales the pooled
    activations to a range the dense head trains well on. Emits an
    (H', W', C) feature map per image; `transform` pools it to a length-C
    vector.
    """

    def __init__(self, n_filters: int = 16, kernel_size: int = 3,
                 stride: int = 2, bias: float = -0.12, gain: float = 200.0,
                 seed: int = FILTER_BANK_SEED):
        self.n_filters = n_filters
        self.kernel_size = kernel_size
        self.stride = stride
        self.bias = bias
        self.gain = gain
        self.seed = seed

    @property
    def output_channels(self) -> int:
        return self.n_filters

    def _filters(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        bank = rng.normal(size=(self.n_filters, self.kernel_size, self.kernel_size))
        bank -= bank.mean(axis=(1, 2), keepdims=True)
        norms = np.sqrt((bank ** 2).sum(axis=(1, 2), keepdims=True))
        return bank / norms

    def fit(self, X=None, y=None):
        self.filters_ = self._filters()
        return self

    def feature_map(self, image) -> np.ndarray:
        """Convolve one image with the filter bank; valid boundary, strided."""
        img = _as_image_array(image)
        k = self.kernel_size
        h, w = img.shape
        if h < k or w < k:
            raise ValidationError(f"image {img.shape} smaller than kernel {k}x{k}")
        filters = getattr(self, "filters_", None)
        if filters is None:
            filters = self._filters()
        # im2col over strided valid windows, then one matmul for all filters
        windows = np.lib.stride_tricks.sliding_window_view(img, (k, k))
        windows = windows[:: self.stride, :: self.stride]
        oh, ow = windows.shape[:2]
        cols = windows.reshape(oh * ow, k * k)
        responses = cols @ filters.reshape(self.n_filters, k * k).T + self.bias
        out = np.maximum(responses, 0.0) * self.gain
        return out.reshape(oh, ow, self.n_filters)

    def transform(self, X) -> np.ndarray:
        return np.stack([gap2d(self.feature_map(img)) for img in X])

    def features_for(self, store, ids) -> np.ndarray:
        return self.transform([store.get_image(sample_id) for sample_id in ids])


class RawDownsampleExtractor(TransformerMixin, BaseEstimator):
    """Block-averaged pixels in [0, 1] as the feature vector (C = h * w)."""

    def __init__(self, target_height: int = 8, target_width: int = 8):
        self.target_height = target_height
        self.target_width = target_width

    @property
    def output_channels(self) -> int:
        return self.target_height * self.target_width

    def fit(self, X=None, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        out = np.empty((len(X), self.output_channels))
        for i, image in enumerate(X):
            img = check_image(image)
            resized = Image.fromarray(img).resize(
                (self.target_width, self.target_height), Image.BILINEAR)
            out[i] = np.asarray(resized, dtype=np.float64).ravel() / 255.0
        return out

    def features_for(self, store, ids) -> np.ndarray:
        return self.transform([store.get_image(sample_id) for sample_id in ids])


class PrecomputedExtractor(TransformerMixin, BaseEstimator):
    """Feature lookup table keyed by sample id.

    `transform` and `features_for` take sample ids, not pixels; a missing id
    raises DataError naming it.
    """

    def __init__(self, table: dict[str, np.ndarray] | None = None):
        self.table = table

    @property
    def output_channels(self) -> int:
        if not self.table:
            raise ValidationError("empty precomputed feature table")
        return len(next(iter(self.table.values())))

    @classmethod
    def from_csv(cls, path) -> "PrecomputedExtractor":
        return cls(table=load_feature_csv(path))

    def fit(self, X=None, y=None):
        return self

    def _lookup(self, sample_id) -> np.ndarray:
        try:
            return self.table[sample_id]
        except (KeyError, TypeError):
            raise DataError(f"no precomputed features for sample {sample_id!r}") from None

    def transform(self, ids) -> np.ndarray:
        return np.stack([self._lookup(sample_id) for sample_id in ids])

    def features_for(self, store, ids) -> np.ndarray:
        return self.transform(ids)


def load_feature_csv(path) -> dict[str, np.ndarray]:
    """Read a `sample_id,f0,...,f{C-1}` feature file; rows must have
    constant width."""
    path = Path(path)
    table: dict[str, np.ndarray] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "sample_id":
            raise DataError(f"{path}: expected header starting with 'sample_id'")
        width = len(header) - 1
        if width < 1:
            raise DataError(f"{path}: header declares no feature columns")
        expected = ["sample_id"] + [f"f{i}" for i in range(width)]
        if header != expected:
            raise DataError(f"{path}: malformed header {header!r}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != width + 1:
                raise DataError(f"{path}:{line_no}: expected {width + 1} columns, got {len(row)}")
            sample_id = row[0]
            if sample_id in table:
                raise DataError(f"{path}:{line_no}: duplicate sample id {sample_id!r}")
            try:
                table[sample_id] = np.array([float(v) for v in row[1:]], dtype=np.float64)
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: {exc}") from None
    if not table:
        raise DataError(f"{path}: no feature rows")
    return table


def save_feature_csv(path, table: dict[str, np.ndarray]) -> None:
    width = len(next(iter(table.values())))
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id"] + [f"f{i}" for i in range(width)])
        for sample_id in sorted(table):
            vec = np.asarray(table[sample_id], dtype=np.float64)
            if len(vec) != width:
                raise DataError(f"inconsistent feature width for {sample_id!r}")
            writer.writerow([sample_id] + [repr(float(v)) for v in vec])


def make_extractor(name: str, **kwargs):
    """Extractor factory used by configs ('fixed-conv', 'raw-downsample',
    'precomputed')."""
    if name == "fixed-conv":
        return FixedConvExtractor(**kwargs)
    if name == "raw-downsample":
        return RawDownsampleExtractor(**kwargs)
    if name == "precomputed":
        if "csv_path" in kwargs:
            return PrecomputedExtractor.from_csv(kwargs["csv_path"])
        return PrecomputedExtractor(**kwargs)
    raise ValidationError(f"unknown extractor {name!r}")
