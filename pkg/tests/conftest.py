import numpy as np
import pytest

from defectloop import (Dataset, ExperimentConfig, FixedConvExtractor,
                        SynthParams, generate_synthetic)


@pytest.fixture(scope="session")
def small_dataset():
    """60 synthetic samples, enough for fast loop tests."""
    return generate_synthetic(SynthParams(seed=11), 60)


@pytest.fixture(scope="session")
def extractor():
    return FixedConvExtractor().fit()


@pytest.fixture()
def feature_dataset():
    """Feature-only dataset with hand-set vectors."""
    rng = np.random.default_rng(5)
    table = {f"s{i:02d}": rng.normal(size=4) for i in range(20)}
    truth = {k: ("defect" if i % 2 else "normal") for i, k in enumerate(sorted(table))}
    return Dataset.from_feature_table("feat-ds", table, ground_truth=truth)


def quick_config(**overrides):
    base = dict(initial_n=10, queries=3, batch_n=5, epochs_per_query=3,
                seed=4, test_fraction=0.5)
    base.update(overrides)
    return ExperimentConfig.from_dict(base)
