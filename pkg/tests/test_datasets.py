import json

import numpy as np
import pytest
from PIL import Image

from defectloop import (DataError, Dataset, LabelConflictError,
                        SampleNotFoundError, SynthParams, ValidationError,
                        generate_synthetic, ingest_directory, split)
from defectloop.datasets import render_sample_image


class TestGenerate:
    def test_balanced_counts(self):
        ds = generate_synthetic(SynthParams(seed=7), 300)
        counts = ds.class_counts()
        assert counts == {"normal": 150, "defect": 150, "unlabeled": 0}

    def test_deterministic_per_seed(self):
        a = generate_synthetic(SynthParams(seed=3), 12)
        b = generate_synthetic(SynthParams(seed=3), 12)
        c = generate_synthetic(SynthParams(seed=4), 12)
        for sid in a.ids:
            np.testing.assert_array_equal(a.samples[sid].image, b.samples[sid].image)
        assert any(not np.array_equal(a.samples[s].image, c.samples[s].image)
                   for s in a.ids)

    def test_defect_minus_normal_twin_differs_only_inside_voids(self):
        params = SynthParams(seed=9)
        ds = generate_synthetic(params, 40)
        checked = 0
        for index, sid in enumerate(ds.ids):
            sample = ds.samples[sid]
            if sample.ground_truth != "defect":
                continue
            twin, _ = render_sample_image(params, index, defect=False)
            diff = sample.image.astype(int) - twin.astype(int)
            yy, xx = np.mgrid[0:params.height, 0:params.width]
            mask = np.zeros_like(diff, dtype=bool)
            for cy, cx, r in sample.voids:
                mask |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r ** 2
            assert np.all(diff[~mask] == 0)
            assert np.any(diff[mask] != 0)
            checked += 1
        assert checked >= 10

    def test_void_interiors_darker_than_surroundings(self):
        params = SynthParams(seed=21)
        ds = generate_synthetic(params, 30)
        yy, xx = np.mgrid[0:params.height, 0:params.width]
        for sid in ds.ids:
            sample = ds.samples[sid]
            if not sample.voids:
                continue
            mask = np.zeros(sample.image.shape, dtype=bool)
            for cy, cx, r in sample.voids:
                mask |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r ** 2
            assert sample.image[mask].mean() < sample.image[~mask].mean()

    def test_normal_samples_have_no_voids(self):
        ds = generate_synthetic(SynthParams(seed=5), 20)
        for sample in ds.samples.values():
            if sample.ground_truth == "normal":
                assert not sample.voids
            else:
                assert len(sample.voids) >= 1

    def test_bad_params_rejected(self):
        with pytest.raises(ValidationError):
            generate_synthetic(SynthParams(seed=0), 1)
        with pytest.raises(ValidationError):
            generate_synthetic(SynthParams(seed=0, balance=1.5), 10)
        with pytest.raises(ValidationError):
            generate_synthetic(SynthParams(seed=0, band=(200, 100)), 10)


class TestPersistence:
    def test_round_trip_bit_exact(self, tmp_path):
        ds = generate_synthetic(SynthParams(seed=13), 16)
        ds.commit_label(ds.ids[0], "defect", annotator="tester", query_index=1)
        ds.save(tmp_path / "ds")
        loaded = Dataset.load(tmp_path / "ds")
        assert loaded.ids == ds.ids
        assert loaded.digest() == ds.digest()
        for sid in ds.ids:
            np.testing.assert_array_equal(loaded.samples[sid].image,
                                          ds.samples[sid].image)
            assert loaded.samples[sid].ground_truth == ds.samples[sid].ground_truth
        assert loaded.samples[ds.ids[0]].committed_label == "defect"
        assert len(loaded.audit) == 1

    def test_digest_detects_tampering(self, tmp_path):
        ds = generate_synthetic(SynthParams(seed=13), 6)
        ds.save(tmp_path / "ds")
        victim = ds.ids[2]
        img_path = tmp_path / "ds" / "images" / f"{victim}.png"
        img = np.asarray(Image.open(img_path)).copy()
        img[0, 0] ^= 0xFF
        Image.fromarray(img, mode="L").save(img_path)
        with pytest.raises(DataError, match="digest"):
            Dataset.load(tmp_path / "ds")

    def test_feature_dataset_round_trip(self, tmp_path, feature_dataset):
        feature_dataset.save(tmp_path / "fd")
        loaded = Dataset.load(tmp_path / "fd")
        for sid in feature_dataset.ids:
            np.testing.assert_array_equal(loaded.samples[sid].features,
                                          feature_dataset.samples[sid].features)


class TestCommitLabel:
    def test_first_commit_audited(self):
        ds = generate_synthetic(SynthParams(seed=1), 4)
        record = ds.commit_label(ds.ids[0], "normal", annotator="alice", query_index=2)
        assert record["annotator"] == "alice"
        assert record["query_index"] == 2
        assert ds.samples[ds.ids[0]].committed_label == "normal"
        assert len(ds.audit) == 1

    def test_relabel_conflict(self):
        ds = generate_synthetic(SynthParams(seed=1), 4)
        ds.commit_label(ds.ids[0], "normal", annotator="a")
        with pytest.raises(LabelConflictError):
            ds.commit_label(ds.ids[0], "defect", annotator="b")
        assert len(ds.audit) == 1

    def test_unknown_id_and_label(self):
        ds = generate_synthetic(SynthParams(seed=1), 4)
        with pytest.raises(SampleNotFoundError):
            ds.commit_label("nope", "normal", annotator="a")
        with pytest.raises(ValidationError):
            ds.commit_label(ds.ids[0], "maybe", annotator="a")

    def test_audit_appends_to_file(self, tmp_path):
        ds = generate_synthetic(SynthParams(seed=1), 4)
        ds.save(tmp_path / "ds")
        ds.commit_label(ds.ids[1], "defect", annotator="a", query_index=1)
        lines = (tmp_path / "ds" / "labels.jsonl").read_text().splitlines()
        assert len(lines) == 1
        assert json.loads(lines[0])["sample_id"] == ds.ids[1]


class TestIngest:
    def _write_images(self, root, spec):
        for rel, shape, value in spec:
            path = root / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            Image.fromarray(np.full(shape, value, dtype=np.uint8), mode="L").save(path)

    def test_labeled_subdirectories(self, tmp_path):
        self._write_images(tmp_path, [
            ("normal/a.png", (16, 16), 100),
            ("normal/b.png", (16, 16), 110),
            ("normal/c.png", (16, 16), 120),
            ("defect/d.png", (16, 16), 40),
            ("defect/e.png", (16, 16), 50),
        ])
        ds, errors = ingest_directory(tmp_path)
        assert errors == []
        counts = ds.class_counts()
        assert counts["normal"] == 3 and counts["defect"] == 2
        assert "normal/a.png" in ds.samples

    def test_unlabeled_mode(self, tmp_path):
        self._write_images(tmp_path, [("x.png", (8, 8), 10), ("y.png", (8, 8), 20)])
        ds, _ = ingest_directory(tmp_path, labeling="unlabeled")
        assert all(s.ground_truth is None for s in ds.samples.values())

    def test_mixed_dimensions_rejected_with_names(self, tmp_path):
        self._write_images(tmp_path, [("a.png", (8, 8), 10), ("b.png", (9, 9), 20)])
        with pytest.raises(DataError) as err:
            ingest_directory(tmp_path)
        assert "a.png" in str(err.value) and "b.png" in str(err.value)

    def test_resize_policy(self, tmp_path):
        self._write_images(tmp_path, [("a.png", (8, 8), 10), ("b.png", (9, 9), 20)])
        ds, _ = ingest_directory(tmp_path, resize_to=(8, 8))
        assert all(s.image.shape == (8, 8) for s in ds.samples.values())

    def test_unreadable_file_skipped(self, tmp_path):
        self._write_images(tmp_path, [("ok.png", (8, 8), 10)])
        (tmp_path / "broken.png").write_bytes(b"not a png")
        ds, errors = ingest_directory(tmp_path, labeling="unlabeled")
        assert len(ds) == 1
        assert len(errors) == 1 and "broken.png" in errors[0]

    def test_empty_directory_rejected(self, tmp_path):
        with pytest.raises(DataError):
            ingest_directory(tmp_path)

    def test_rgb_converted_by_channel_mean(self, tmp_path):
        arr = np.zeros((8, 8, 3), dtype=np.uint8)
        arr[..., 0] = 90
        arr[..., 1] = 120
        arr[..., 2] = 150
        Image.fromarray(arr, mode="RGB").save(tmp_path / "rgb.png")
        ds, _ = ingest_directory(tmp_path, labeling="unlabeled")
        np.testing.assert_array_equal(ds.samples["rgb.png"].image,
                                      np.full((8, 8), 120, dtype=np.uint8))

    def test_pgm_supported(self, tmp_path):
        img = np.arange(64, dtype=np.uint8).reshape(8, 8)
        Image.fromarray(img, mode="L").save(tmp_path / "img.pgm")
        ds, _ = ingest_directory(tmp_path, labeling="unlabeled")
        np.testing.assert_array_equal(ds.samples["img.pgm"].image, img)


class TestSplit:
    def test_stratified_300(self):
        ds = generate_synthetic(SynthParams(seed=2), 300)
        train, test = split(ds, 0.5, seed=0)
        assert len(train) == len(test) == 150
        per_class = {"normal": 0, "defect": 0}
        for sid in test:
            per_class[ds.samples[sid].ground_truth] += 1
        assert per_class == {"normal": 75, "defect": 75}

    def test_partition(self):
        ds = generate_synthetic(SynthParams(seed=2), 50)
        train, test = split(ds, 0.3, seed=1)
        assert set(train) | set(test) == set(ds.ids)
        assert set(train) & set(test) == set()

    def test_extreme_fraction_unstratified(self):
        ds = generate_synthetic(SynthParams(seed=2), 300)
        train, test = split(ds, 0.99, seed=0, stratified=False)
        assert len(train) == 3 and len(test) == 297

    def test_deterministic(self):
        ds = generate_synthetic(SynthParams(seed=2), 40)
        assert split(ds, 0.5, seed=9) == split(ds, 0.5, seed=9)
        assert split(ds, 0.5, seed=9) != split(ds, 0.5, seed=10)

    def test_stratify_requires_ground_truth(self):
        table = {"a": np.zeros(2), "b": np.zeros(2)}
        ds = Dataset.from_feature_table("t", table)
        with pytest.raises(ValidationError):
            split(ds, 0.5, seed=0)

    def test_class_too_small(self):
        table = {f"s{i}": np.zeros(2) for i in range(10)}
        truth = {k: "normal" for k in table}
        truth["s0"] = "defect"
        ds = Dataset.from_feature_table("t", table, ground_truth=truth)
        with pytest.raises(ValidationError):
            split(ds, 0.5, seed=0)

    def test_fraction_bounds(self):
        ds = generate_synthetic(SynthParams(seed=2), 10)
        for bad in (0.0, 1.0, -0.5):
            with pytest.raises(ValidationError):
                split(ds, bad, seed=0)
