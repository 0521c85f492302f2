import numpy as np
import pytest
from pydantic import ValidationError

from persista.errors import DomainError
from persista.models import (
    BandSpec,
    CorrStudyConfig,
    FeatureDataset,
    RngSeed,
    SimilarityScores,
    Spread,
    SweepConfig,
    default_bands,
)


def test_rng_seed_accepts_bare_integer():
    assert RngSeed.model_validate(7) == RngSeed(seed=7)
    assert SweepConfig(seed=7).seed.seed == 7


def test_rng_seed_streams_are_reproducible_and_independent():
    seed = RngSeed(seed=3)
    first = seed.child(1, 2).generator().standard_normal(5)
    again = RngSeed(seed=3).child(1, 2).generator().standard_normal(5)
    other = seed.child(2, 1).generator().standard_normal(5)
    assert np.array_equal(first, again)
    assert not np.array_equal(first, other)
    assert seed.child(1).child(2) == seed.child(1, 2)


def test_rng_seed_rejects_negative_seed():
    with pytest.raises(ValidationError):
        RngSeed(seed=-1)


def test_feature_dataset_values_are_read_only(tiny_dataset):
    with pytest.raises(ValueError):
        tiny_dataset.values[0, 0, 0] = 10.0


def test_feature_dataset_requires_two_sessions():
    with pytest.raises(ValidationError):
        FeatureDataset(values=np.zeros((2, 1, 3)), subject_ids=["a", "b"], feature_names=["Feat01"])


def test_feature_dataset_rejects_duplicate_subjects():
    with pytest.raises(ValidationError):
        FeatureDataset(values=np.zeros((2, 1, 2)), subject_ids=["a", "a"], feature_names=["Feat01"])


def test_feature_dataset_rejects_non_finite_values():
    values = np.zeros((2, 1, 2))
    values[1, 0, 1] = np.nan
    with pytest.raises(ValidationError):
        FeatureDataset(values=values, subject_ids=["a", "b"], feature_names=["Feat01"])


def test_feature_dataset_stacking(tiny_dataset):
    stacked = tiny_dataset.stacked()
    assert stacked.shape == (6, 2)
    assert stacked[:, 0].tolist() == [1.0, 3.0, 5.0, 2.0, 4.0, 9.0]
    assert np.array_equal(tiny_dataset.with_stacked(stacked).values, tiny_dataset.values)


def test_feature_dataset_select(tiny_dataset):
    selected = tiny_dataset.select(["Feat02"])
    assert selected.feature_names == ["Feat02"]
    assert selected.feature_column("Feat02").tolist() == [[0.5, 0.25], [1.5, 1.0], [-2.0, -1.5]]
    with pytest.raises(KeyError):
        tiny_dataset.select(["Feat03"])


def test_band_spec_default_targets():
    band = BandSpec.default(3)
    assert band.n_features == 50
    assert band.icc_low == 0.3
    assert band.icc_high == 0.4
    assert band.sub_targets[0] == (0.305, 5)
    assert band.sub_targets[-1] == (0.395, 5)
    assert band.targets()[:6] == [0.305] * 5 + [0.315]


def test_band_spec_validation():
    with pytest.raises(ValidationError):
        BandSpec(band_index=10, sub_targets=[(0.95, 5)])
    with pytest.raises(ValidationError):
        BandSpec(band_index=0, sub_targets=[])
    with pytest.raises(ValidationError):
        BandSpec(band_index=0, sub_targets=[(0.05, 0)])


def test_default_bands_cover_every_decile():
    assert [band.band_index for band in default_bands()] == list(range(10))


def test_sweep_config_expands_band_indexes():
    config = SweepConfig(bands=[0, 9])
    assert config.bands == [BandSpec.default(0), BandSpec.default(9)]


def test_sweep_config_rejects_oversized_subsets():
    with pytest.raises(ValidationError):
        SweepConfig(bands=[0], subset_size=51)


def test_corr_study_config_counts_combined_features():
    assert CorrStudyConfig(subset_size=100).subset_size == 100
    with pytest.raises(ValidationError):
        CorrStudyConfig(subset_size=101)


def test_similarity_scores_must_lie_in_unit_interval():
    with pytest.raises(ValidationError):
        SimilarityScores(genuine=[0.5, 1.2], impostor=[0.1])


def test_spread():
    spread = Spread.of([3.0, 1.0, 2.0, 10.0])
    assert (spread.median, spread.min, spread.max) == (2.5, 1.0, 10.0)


@pytest.mark.parametrize("band_index", [-1, 10])
def test_band_spec_default_rejects_band_index(band_index):
    with pytest.raises(DomainError, match="Band index"):
        BandSpec.default(band_index)
    with pytest.raises(DomainError):
        BandSpec.default(2, n_targets=0)
