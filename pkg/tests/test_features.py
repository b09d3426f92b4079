import numpy as np
import pytest

from defectloop import (DataError, FixedConvExtractor, PrecomputedExtractor,
                        RawDownsampleExtractor, ValidationError, gap2d,
                        load_feature_csv, save_feature_csv)


class TestGap2d:
    def test_identity_on_1x1(self):
        np.testing.assert_allclose(gap2d([[[1.0, 2.0, 3.0]]]), [1.0, 2.0, 3.0])

    def test_mean_on_2x2(self):
        fm = np.array([[[1.0], [2.0]], [[3.0], [4.0]]])
        np.testing.assert_allclose(gap2d(fm), [2.5])

    def test_constant_map(self):
        fm = np.full((5, 7, 3), 4.25)
        np.testing.assert_allclose(gap2d(fm), [4.25, 4.25, 4.25])

    def test_output_length_matches_channels(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            h, w, c = rng.integers(1, 12, size=3)
            fm = rng.normal(size=(h, w, c))
            out = gap2d(fm)
            assert out.shape == (c,)
            np.testing.assert_allclose(out, fm.reshape(-1, c).mean(axis=0))

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValidationError):
            gap2d(np.zeros((4, 4)))
        with pytest.raises(ValidationError):
            gap2d(np.full((2, 2, 2), np.nan))


class TestFixedConv:
    def test_deterministic_per_seed(self):
        img = np.random.default_rng(1).integers(0, 255, size=(32, 32), dtype=np.uint8)
        a = FixedConvExtractor(seed=9).fit().transform([img])
        b = FixedConvExtractor(seed=9).fit().transform([img])
        c = FixedConvExtractor(seed=10).fit().transform([img])
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_output_channels(self):
        ex = FixedConvExtractor(n_filters=5)
        assert ex.output_channels == 5
        img = np.zeros((16, 16), dtype=np.uint8)
        assert ex.transform([img]).shape == (1, 5)

    def test_filters_zero_mean_unit_norm(self):
        ex = FixedConvExtractor().fit()
        sums = ex.filters_.sum(axis=(1, 2))
        norms = (ex.filters_ ** 2).sum(axis=(1, 2))
        np.testing.assert_allclose(sums, 0.0, atol=1e-12)
        np.testing.assert_allclose(norms, 1.0, atol=1e-12)

    def test_translation_covariance_on_interior(self):
        # a pattern shifted by one stride shifts the feature map by one cell
        ex = FixedConvExtractor(stride=2)
        base = np.zeros((40, 40), dtype=np.uint8)
        pattern = (np.arange(25).reshape(5, 5) * 9).astype(np.uint8)
        a = base.copy()
        a[10:15, 10:15] = pattern
        b = base.copy()
        b[10:15, 12:17] = pattern
        fa = ex.feature_map(a)
        fb = ex.feature_map(b)
        np.testing.assert_allclose(fa[4:8, 4:8], fb[4:8, 5:9], atol=1e-12)

    def test_too_small_image_rejected(self):
        with pytest.raises(ValidationError):
            FixedConvExtractor(kernel_size=3).feature_map(np.zeros((2, 5), np.uint8))


class TestRawDownsample:
    def test_shape_and_range(self):
        ex = RawDownsampleExtractor(target_height=4, target_width=6)
        assert ex.output_channels == 24
        img = np.full((64, 64), 255, dtype=np.uint8)
        out = ex.transform([img])
        assert out.shape == (1, 24)
        np.testing.assert_allclose(out, 1.0)

    def test_constant_image(self):
        ex = RawDownsampleExtractor(target_height=2, target_width=2)
        img = np.full((32, 48), 128, dtype=np.uint8)
        np.testing.assert_allclose(ex.transform([img]), 128 / 255, atol=1e-3)


class TestPrecomputed:
    def test_lookup_and_missing_id(self):
        ex = PrecomputedExtractor(table={"a": np.array([1.0, 2.0])})
        np.testing.assert_allclose(ex.transform(["a"]), [[1.0, 2.0]])
        with pytest.raises(DataError, match="missing-id"):
            ex.transform(["missing-id"])


class TestFeatureCsv:
    def test_round_trip(self, tmp_path):
        table = {"s1": np.array([0.25, -1.5]), "s0": np.array([1e-9, 3.0])}
        path = tmp_path / "features.csv"
        save_feature_csv(path, table)
        loaded = load_feature_csv(path)
        assert set(loaded) == {"s0", "s1"}
        for key in table:
            np.testing.assert_array_equal(loaded[key], table[key])

    def test_header_enforced(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,f0\nx,1.0\n")
        with pytest.raises(DataError):
            load_feature_csv(path)

    def test_constant_width_enforced(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("sample_id,f0,f1\na,1.0,2.0\nb,1.0\n")
        with pytest.raises(DataError, match="ragged.csv:3"):
            load_feature_csv(path)
