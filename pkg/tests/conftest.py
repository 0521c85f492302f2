import numpy as np
import pytest

from persista.models import FeatureDataset, RngSeed
from persista.synth import generate_feature_set


@pytest.fixture
def seed():
    return RngSeed(seed=42)


@pytest.fixture
def tiny_dataset():
    # Three subjects, two features; column j of session s is values[:, j, s].
    values = np.array(
        [
            [[1.0, 2.0], [0.5, 0.25]],
            [[3.0, 4.0], [1.5, 1.0]],
            [[5.0, 9.0], [-2.0, -1.5]],
        ]
    )
    return FeatureDataset(values=values, subject_ids=["s1", "s2", "s3"], feature_names=["Feat01", "Feat02"])


@pytest.fixture
def synthetic_dataset(seed):
    return generate_feature_set(n_subjects=200, n_features=8, icc_target=0.7, seed=seed)
