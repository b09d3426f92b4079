"""Dataset creation, ingestion, label persistence, and split management.

A dataset is a directory: manifest.json (identity, per-sample records,
integrity digest), images/*.png (pixel samples), optional features.csv
(feature-vector samples), and labels.jsonl (append-only label audit log).

The synthetic generator stands in for real melt-pool emission exports: a
smooth seeded background texture inside a gray intensity band, with defect
samples carrying one or more darker circular voids. Backgrounds depend only
on (seed, sample index), never on the class, so a defect image and its
voids-disabled twin differ exactly inside the void disks.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .errors import DataError, LabelConflictError, SampleNotFoundError, ValidationError
from .features import load_feature_csv, save_feature_csv

LABELS = ("normal", "defect")
MANIFEST_FORMAT = "defectloop-dataset"
MANIFEST_VERSION = 1


@dataclass
class Sample:
    """One sample: pixel grid or feature vector, plus labeling state."""

    id: str
    image: np.ndarray | None = None
    features: np.ndarray | None = None
    ground_truth: str | None = None
    committed_label: str | None = None
    provenance: str = "generated"
    voids: list[tuple[float, float, float]] | None = None  # (cy, cx, r)


@dataclass(frozen=True)
class SynthParams:
    """Synthetic emission-image generator settings.

    Both classes share the background texture, sensor noise, and bright
    spatter spots; only defect samples additionally carry dark low-emission
    voids. Optional shallow dark marks (off by default) can be enabled on
    both classes to create a severity continuum: marks sit just below the
    void contrast range, so class separation then hinges on a threshold the
    classifier has to learn from near-boundary examples.
    """

    height: int = 64
    width: int = 64
    band: tuple[int, int] = (110, 210)      # background gray range
    smoothness: float = 3.0                 # gaussian sigma of the texture
    pixel_noise: float = 6.0                # sensor noise sigma, gray levels
    void_count: tuple[int, int] = (1, 2)    # inclusive range per defect
    void_radius: tuple[float, float] = (2.0, 6.0)
    void_contrast: tuple[float, float] = (0.50, 0.50)  # darkening inside voids
    mark_count: tuple[int, int] = (0, 0)    # shallow marks, both classes
    mark_radius: tuple[float, float] = (2.0, 5.0)
    mark_contrast: tuple[float, float] = (0.10, 0.25)
    spatter_count: tuple[int, int] = (0, 2)  # bright distractors, both classes
    spatter_radius: tuple[float, float] = (1.5, 3.5)
    spatter_contrast: float = 0.35          # fractional brightening
    balance: float = 0.5                    # defect fraction
    seed: int = 0

    def validate(self):
        if self.height < 8 or self.width < 8:
            raise ValidationError("image size must be at least 8x8")
        if not 0 <= self.band[0] < self.band[1] <= 255:
            raise ValidationError(f"bad intensity band {self.band}")
        if self.smoothness <= 0:
            raise ValidationError("smoothness must be positive")
        if self.pixel_noise < 0:
            raise ValidationError("pixel_noise must be >= 0")
        if not 1 <= self.void_count[0] <= self.void_count[1]:
            raise ValidationError(f"bad void count range {self.void_count}")
        for name, radius in (("void", self.void_radius), ("mark", self.mark_radius),
                             ("spatter", self.spatter_radius)):
            if not 0 < radius[0] <= radius[1]:
                raise ValidationError(f"bad {name} radius range {radius}")
        if not 0.0 < self.void_contrast[0] <= self.void_contrast[1] <= 1.0:
            raise ValidationError(f"bad void contrast range {self.void_contrast}")
        if not 0.0 <= self.mark_contrast[0] <= self.mark_contrast[1] <= 1.0:
            raise ValidationError(f"bad mark contrast range {self.mark_contrast}")
        if not 0 <= self.mark_count[0] <= self.mark_count[1]:
            raise ValidationError(f"bad mark count range {self.mark_count}")
        if not 0 <= self.spatter_count[0] <= self.spatter_count[1]:
            raise ValidationError(f"bad spatter count range {self.spatter_count}")
        if self.spatter_contrast < 0:
            raise ValidationError("spatter contrast must be >= 0")
        if not 0.0 < self.balance < 1.0:
            raise ValidationError("class balance must lie strictly in (0, 1)")


def _stamp_disks(img, rng, count_range, radius_range, contrast_range, brighten):
    """Multiply random disks into img; returns the drawn (cy, cx, r) list."""
    height, width = img.shape
    yy, xx = np.mgrid[0:height, 0:width]
    count = int(rng.integers(count_range[0], count_range[1] + 1))
    disks = []
    for _ in range(count):
        r = float(rng.uniform(*radius_range))
        cy = float(rng.uniform(r, height - r))
        cx = float(rng.uniform(r, width - r))
        if isinstance(contrast_range, tuple):
            c = float(rng.uniform(*contrast_range))
        else:
            c = float(contrast_range)
        factor = 1.0 + c if brighten else 1.0 - c
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r ** 2] *= factor
        disks.append((cy, cx, r))
    return disks


def render_sample_image(params: SynthParams, index: int, defect: bool) -> tuple[np.ndarray, list]:
    """Render one image deterministically; voids only when defect=True.

    Background, spatter, mark, and noise streams depend on (seed, index)
    alone, never on the class, so a defect image and its voids-disabled twin
    differ exactly inside the void disks.
    """
    bg_rng = np.random.default_rng(np.random.SeedSequence([params.seed, index, 0]))
    noise = bg_rng.normal(size=(params.height, params.width))
    smooth = gaussian_filter(noise, sigma=params.smoothness)
    lo, hi = smooth.min(), smooth.max()
    unit = (smooth - lo) / (hi - lo) if hi > lo else np.zeros_like(smooth)
    img = params.band[0] + unit * (params.band[1] - params.band[0])

    spatter_rng = np.random.default_rng(np.random.SeedSequence([params.seed, index, 2]))
    _stamp_disks(img, spatter_rng, params.spatter_count, params.spatter_radius,
                 params.spatter_contrast, brighten=True)
    mark_rng = np.random.default_rng(np.random.SeedSequence([params.seed, index, 3]))
    _stamp_disks(img, mark_rng, params.mark_count, params.mark_radius,
                 params.mark_contrast, brighten=False)

    voids = []
    if defect:
        void_rng = np.random.default_rng(np.random.SeedSequence([params.seed, index, 1]))
        voids = _stamp_disks(img, void_rng, params.void_count, params.void_radius,
                             params.void_contrast, brighten=False)

    if params.pixel_noise > 0:
        img = img + bg_rng.normal(0.0, params.pixel_noise, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), voids


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


class Dataset:
    """In-memory dataset with optional directory binding for persistence."""

    def __init__(self, dataset_id: str, samples: list[Sample],
                 image_size: tuple[int, int] | None = None,
                 generator: dict | None = None, provenance: str = "generated",
                 source_digest: str | None = None):
        self.dataset_id = dataset_id
        self.samples: dict[str, Sample] = {}
        for sample in samples:
            if sample.id in self.samples:
                raise ValidationError(f"duplicate sample id {sample.id!r}")
            self.samples[sample.id] = sample
        self.ids = [s.id for s in samples]
        self.image_size = image_size
        self.generator = generator
        self.provenance = provenance
        self.source_digest = source_digest
        self.audit: list[dict] = []
        self.directory: Path | None = None

    def __len__(self) -> int:
        return len(self.ids)

    def get_sample(self, sample_id: str) -> Sample:
        try:
            return self.samples[sample_id]
        except KeyError:
            raise SampleNotFoundError(f"unknown sample {sample_id!r}") from None

    def get_image(self, sample_id: str) -> np.ndarray:
        sample = self.get_sample(sample_id)
        if sample.image is None:
            raise DataError(f"sample {sample_id!r} has no pixel data")
        return sample.image

    def ground_truth(self, sample_id: str) -> str:
        sample = self.get_sample(sample_id)
        if sample.ground_truth is None:
            raise DataError(f"sample {sample_id!r} has no ground-truth label")
        return sample.ground_truth

    def class_counts(self) -> dict[str, int]:
        counts = {"normal": 0, "defect": 0, "unlabeled": 0}
        for sample in self.samples.values():
            counts[sample.ground_truth or "unlabeled"] += 1
        return counts

    def commit_label(self, sample_id: str, label: str, annotator: str,
                     query_index: int | None = None) -> dict:
        """Commit a label exactly once; append an audit record."""
        if label not in LABELS:
            raise ValidationError(f"unknown label {label!r}; expected one of {LABELS}")
        sample = self.get_sample(sample_id)
        if sample.committed_label is not None:
            raise LabelConflictError(
                f"sample {sample_id!r} already labeled {sample.committed_label!r}")
        sample.committed_label = label
        record = {"sample_id": sample_id, "label": label, "annotator": annotator,
                  "timestamp": _utc_now(), "query_index": query_index}
        self.audit.append(record)
        if self.directory is not None:
            with (self.directory / "labels.jsonl").open("a") as fh:
                fh.write(json.dumps(record) + "\n")
        return record

    # -- persistence --------------------------------------------------------

    def _sample_digest(self, sample: Sample) -> str:
        h = hashlib.sha256()
        h.update(sample.id.encode())
        if sample.image is not None:
            h.update(b"image")
            h.update(sample.image.tobytes())
        if sample.features is not None:
            h.update(b"features")
            h.update(np.ascontiguousarray(sample.features, dtype=np.float64).tobytes())
        h.update((sample.ground_truth or "").encode())
        return h.hexdigest()

    def digest(self) -> str:
        h = hashlib.sha256()
        for sample_id in sorted(self.ids):
            h.update(self._sample_digest(self.samples[sample_id]).encode())
        return h.hexdigest()

    def manifest(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "dataset_id": self.dataset_id,
            "n_samples": len(self.ids),
            "class_counts": self.class_counts(),
            "image_size": list(self.image_size) if self.image_size else None,
            "provenance": self.provenance,
            "generator": self.generator,
            "source_digest": self.source_digest,
            "digest": self.digest(),
            "samples": [
                {
                    "id": s.id,
                    "ground_truth": s.ground_truth,
                    "provenance": s.provenance,
                    "kind": "image" if s.image is not None else "features",
                    "voids": s.voids,
                }
                for s in (self.samples[i] for i in self.ids)
            ],
        }

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        feature_table = {}
        for sample in self.samples.values():
            if sample.image is not None:
                path = directory / "images" / f"{sample.id}.png"
                path.parent.mkdir(parents=True, exist_ok=True)
                Image.fromarray(sample.image, mode="L").save(path)
            if sample.features is not None:
                feature_table[sample.id] = sample.features
        if feature_table:
            save_feature_csv(directory / "features.csv", feature_table)
        manifest_path = directory / "manifest.json"
        manifest_path.write_text(json.dumps(self.manifest(), indent=1))
        audit_path = directory / "labels.jsonl"
        if not audit_path.exists():
            with audit_path.open("w") as fh:
                for record in self.audit:
                    fh.write(json.dumps(record) + "\n")
        self.directory = directory
        return manifest_path

    @classmethod
    def load(cls, directory) -> "Dataset":
        directory = Path(directory)
        manifest_path = directory / "manifest.json"
        if not manifest_path.exists():
            raise DataError(f"{directory}: no manifest.json")
        doc = json.loads(manifest_path.read_text())
        if doc.get("format") != MANIFEST_FORMAT:
            raise DataError(f"{manifest_path}: not a dataset manifest")
        features_path = directory / "features.csv"
        feature_table = load_feature_csv(features_path) if features_path.exists() else {}
        samples = []
        for rec in doc["samples"]:
            sample = Sample(id=rec["id"], ground_truth=rec["ground_truth"],
                            provenance=rec["provenance"],
                            voids=[tuple(v) for v in rec["voids"]] if rec.get("voids") else None)
            if rec["kind"] == "image":
                img_path = directory / "images" / f"{sample.id}.png"
                if not img_path.exists():
                    raise DataError(f"missing image file for sample {sample.id!r}")
                sample.image = np.asarray(Image.open(img_path).convert("L"), dtype=np.uint8)
            else:
                if sample.id not in feature_table:
                    raise DataError(f"missing features for sample {sample.id!r}")
                sample.features = feature_table[sample.id]
            samples.append(sample)
        ds = cls(dataset_id=doc["dataset_id"], samples=samples,
                 image_size=tuple(doc["image_size"]) if doc.get("image_size") else None,
                 generator=doc.get("generator"), provenance=doc.get("provenance", "ingested"),
                 source_digest=doc.get("source_digest"))
        if ds.digest() != doc["digest"]:
            raise DataError(f"{directory}: digest mismatch, stored data was modified")
        audit_path = directory / "labels.jsonl"
        if audit_path.exists():
            for line in audit_path.read_text().splitlines():
                if not line.strip():
                    continue
                record = json.loads(line)
                ds.audit.append(record)
                ds.samples[record["sample_id"]].committed_label = record["label"]
        ds.directory = directory
        return ds

    @classmethod
    def from_feature_table(cls, dataset_id: str, table: dict[str, np.ndarray],
                           ground_truth: dict[str, str] | None = None) -> "Dataset":
        samples = [Sample(id=k, features=np.asarray(v, dtype=np.float64),
                          ground_truth=(ground_truth or {}).get(k), provenance="ingested")
                   for k, v in table.items()]
        return cls(dataset_id=dataset_id, samples=samples, provenance="ingested")


def generate_synthetic(params: SynthParams, n: int,
                       dataset_id: str | None = None) -> Dataset:
    """Generate n synthetic samples; deterministic per params.seed."""
    params.validate()
    if n < 2:
        raise ValidationError(f"need at least 2 samples, got {n}")
    n_defect = int(round(n * params.balance))
    if n_defect < 1 or n_defect > n - 1:
        raise ValidationError("class balance leaves a class empty")
    flags = np.zeros(n, dtype=bool)
    flags[:n_defect] = True
    rng = np.random.default_rng(np.random.SeedSequence([params.seed, 10**9]))
    rng.shuffle(flags)
    width = len(str(n - 1))
    samples = []
    for i in range(n):
        defect = bool(flags[i])
        image, voids = render_sample_image(params, i, defect)
        samples.append(Sample(
            id=f"synth-{i:0{width}d}", image=image,
            ground_truth="defect" if defect else "normal",
            provenance="generated", voids=voids or None))
    return Dataset(
        dataset_id=dataset_id or f"synthetic-{params.seed}-{n}",
        samples=samples, image_size=(params.height, params.width),
        generator={"n": n, **{k: list(v) if isinstance(v, tuple) else v
                              for k, v in params.__dict__.items()}},
        provenance="generated")


def ingest_directory(path, labeling: str = "from-subdirectories",
                     resize_to: tuple[int, int] | None = None,
                     dataset_id: str | None = None) -> tuple[Dataset, list[str]]:
    """Build a dataset from a directory of PNG/PGM grayscale images.

    With labeling='from-subdirectories', images under normal/ and defect/
    get ground-truth labels; 'unlabeled' leaves every label unset. Returns
    the dataset plus a list of per-file error strings (unreadable files are
    skipped, ingest continues).
    """
    if labeling not in ("from-subdirectories", "unlabeled"):
        raise ValidationError(f"unknown labeling mode {labeling!r}")
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"{root} is not a directory")
    errors: list[str] = []
    samples: list[Sample] = []
    sizes: dict[tuple[int, int], list[str]] = {}
    digest = hashlib.sha256()
    for file in sorted(root.rglob("*")):
        if not file.is_file() or file.suffix.lower() not in (".png", ".pgm"):
            continue
        rel = file.relative_to(root).as_posix()
        try:
            with Image.open(file) as im:
                if im.mode in ("RGB", "RGBA"):
                    channels = np.asarray(im.convert("RGB"), dtype=np.float64)
                    arr = np.rint(channels.mean(axis=2)).astype(np.uint8)
                else:
                    arr = np.asarray(im.convert("L"), dtype=np.uint8)
        except Exception as exc:
            errors.append(f"{rel}: {exc}")
            continue
        if resize_to is not None and arr.shape != tuple(resize_to):
            resized = Image.fromarray(arr).resize((resize_to[1], resize_to[0]), Image.BILINEAR)
            arr = np.asarray(resized, dtype=np.uint8)
        label = None
        if labeling == "from-subdirectories":
            top = rel.split("/", 1)[0]
            if top in LABELS:
                label = top
        sizes.setdefault(arr.shape, []).append(rel)
        digest.update(rel.encode())
        digest.update(arr.tobytes())
        samples.append(Sample(id=rel, image=arr, ground_truth=label, provenance="ingested"))
    if not samples:
        raise DataError(f"{root}: no readable images" + (f" ({len(errors)} failed)" if errors else ""))
    if len(sizes) > 1 and resize_to is None:
        listing = "; ".join(f"{hw}: {names[:3]}" for hw, names in sorted(sizes.items()))
        raise DataError(f"mixed image dimensions and no resize policy: {listing}")
    image_size = samples[0].image.shape
    return Dataset(dataset_id=dataset_id or root.name, samples=samples,
                   image_size=image_size, provenance="ingested",
                   source_digest=digest.hexdigest()), errors


def split(dataset: Dataset, test_fraction: float, seed: int,
          stratified: bool = True) -> tuple[list[str], list[str]]:
    """Deterministic disjoint exhaustive train/test id split."""
    if not 0.0 < test_fraction < 1.0:
        raise ValidationError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7**5]))
    if not stratified:
        ids = sorted(dataset.ids)
        order = rng.permutation(len(ids))
        n_test = int(round(len(ids) * test_fraction))
        test = sorted(ids[i] for i in order[:n_test])
        train = sorted(ids[i] for i in order[n_test:])
        return train, test
    by_class: dict[str, list[str]] = {}
    for sample_id in sorted(dataset.ids):
        sample = dataset.samples[sample_id]
        if sample.ground_truth is None:
            raise ValidationError(f"stratified split requires ground truth; {sample_id!r} has none")
        by_class.setdefault(sample.ground_truth, []).append(sample_id)
    train: list[str] = []
    test: list[str] = []
    for label in sorted(by_class):
        ids = by_class[label]
        n_test = int(round(len(ids) * test_fraction))
        if n_test == 0 or n_test == len(ids):
            raise ValidationError(
                f"class {label!r} with {len(ids)} samples is too small to stratify "
                f"at test_fraction={test_fraction}")
        order = rng.permutation(len(ids))
        test.extend(ids[i] for i in order[:n_test])
        train.extend(ids[i] for i in order[n_test:])
    return sorted(train), sorted(test)
