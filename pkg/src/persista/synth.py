"""
Synthetic two-session feature generation with a controlled intraclass correlation.

Session 1 is drawn from a standard normal, session 2 starts as an exact copy (ICC = 1), and
independent normal noise with variance ``(1 - t) / t`` is added to every cell of both sessions.
The subject variance is 1 and the error variance is ``(1 - t) / t``, so the ratio
``1 / (1 + (1 - t) / t)`` equals the target ``t``. Each feature is finally z-scored over both
sessions concatenated. Normal deviates come from numpy's ``Generator.standard_normal``
(ziggurat method) on a PCG64 stream addressed by :class:`persista.models.RngSeed`.

Example usage of this module:
    from persista.models import BandSpec, RngSeed
    from persista.synth import generate_band, generate_feature_set

    dataset = generate_feature_set(n_subjects=1000, n_features=10, icc_target=0.7, seed=RngSeed(seed=42))
    band = generate_band(BandSpec.default(3), n_subjects=1000, seed=RngSeed(seed=42))
"""
from __future__ import annotations

import logging
import math
from typing import List, Optional, Sequence

import numpy as np

from persista.decorrelate import cholesky_factor, correlate_dataset, exchangeable_correlation, standardize_columns
from persista.errors import DomainError, InsufficientSubjectsError
from persista.models import SESSIONS, BandSpec, FeatureDataset, RngSeed

logger = logging.getLogger(__name__)


def noise_sd(icc_target: float) -> float:
    """Standard deviation of the session noise that yields ``icc_target`` for a unit-variance subject effect."""
    if not 0.0 < icc_target <= 1.0:
        raise DomainError(f"ICC target must lie in (0, 1], got {icc_target}.")
    return math.sqrt((1.0 - icc_target) / icc_target)


def feature_names(n_features: int) -> List[str]:
    width = max(2, len(str(n_features)))
    return [f"Feat{index:0{width}d}" for index in range(1, n_features + 1)]


def subject_ids(n_subjects: int) -> List[str]:
    return [str(index) for index in range(1, n_subjects + 1)]


def _check_subjects(n_subjects: int):
    if n_subjects < 2:
        raise InsufficientSubjectsError(
            f"At least 2 subjects are needed to separate subject from error variance, got {n_subjects}."
        )


def _draw(
    rng: np.random.Generator,
    n_subjects: int,
    noise_sds: np.ndarray,
    latent_correlation: Optional[np.ndarray] = None,
) -> np.ndarray:
    n_features = noise_sds.size
    subject_effect = rng.standard_normal((n_subjects, n_features))
    if latent_correlation is not None:
        subject_effect = subject_effect @ cholesky_factor(latent_correlation).T
    values = np.repeat(subject_effect[:, :, np.newaxis], SESSIONS, axis=2)
    values += rng.standard_normal(values.shape) * noise_sds[np.newaxis, :, np.newaxis]
    return _zscore(values)


def _zscore(values: np.ndarray, names: Optional[Sequence[str]] = None) -> np.ndarray:
    n_subjects = values.shape[0]
    stacked = np.concatenate([values[:, :, s] for s in range(SESSIONS)], axis=0)
    standardized = standardize_columns(stacked, names)
    return np.stack([standardized[s * n_subjects : (s + 1) * n_subjects] for s in range(SESSIONS)], axis=2)


def zscore_normalize(dataset: FeatureDataset) -> FeatureDataset:
    """Centres and scales every feature to mean 0 and population SD 1 over all sessions concatenated."""
    return dataset.with_values(_zscore(dataset.values, dataset.feature_names))


def generate_feature_set(
    n_subjects: int,
    n_features: int,
    icc_target: float,
    seed: RngSeed,
    latent_correlation: Optional[np.ndarray] = None,
) -> FeatureDataset:
    """
    Generates ``n_features`` mutually independent features sharing the same target ICC.

    :param latent_correlation: Optional K x K correlation matrix imposed on the subject effect
        before session noise is added (forward Cholesky). The observed intercorrelation then
        scales with the ICC of the features.
    """
    sd = noise_sd(icc_target)
    _check_subjects(n_subjects)
    if n_features < 1:
        raise DomainError(f"At least one feature is required, got {n_features}.")
    values = _draw(seed.generator(), n_subjects, np.full(n_features, sd), latent_correlation)
    return FeatureDataset(values=values, subject_ids=subject_ids(n_subjects), feature_names=feature_names(n_features))


def band_feature_names(band: BandSpec) -> List[str]:
    width = max(2, len(str(band.n_features)))
    return [f"Feat{index:0{width}d}_T{target:.3f}" for index, target in enumerate(band.targets(), start=1)]


def generate_band(
    band: BandSpec,
    n_subjects: int,
    seed: RngSeed,
    latent_correlation: Optional[np.ndarray] = None,
) -> FeatureDataset:
    """
    Generates all features of one ICC band. Feature names record the target, e.g. ``Feat01_T0.005``.
    All features of the band are drawn together so that ``latent_correlation`` can span the band.
    """
    sds = np.array([noise_sd(target) for target in band.targets()])
    _check_subjects(n_subjects)
    logger.debug("Generating band %d: %d features, %d subjects", band.band_index, band.n_features, n_subjects)
    values = _draw(seed.generator(), n_subjects, sds, latent_correlation)
    return FeatureDataset(values=values, subject_ids=subject_ids(n_subjects), feature_names=band_feature_names(band))


def generate_correlated_band(
    band: BandSpec,
    n_subjects: int,
    rho: float,
    seed: RngSeed,
    stage: str = "latent",
) -> FeatureDataset:
    """
    Generates a band whose features share an exchangeable correlation ``rho``.

    ``latent`` imposes ``rho`` on the subject effect, so observed correlations shrink with noise
    (roughly ``rho * ICC``); ``observed`` imposes ``rho`` on the finished, noisy features.
    """
    target = exchangeable_correlation(band.n_features, rho)
    if stage == "latent":
        return generate_band(band, n_subjects, seed, latent_correlation=target)
    if stage == "observed":
        return correlate_dataset(generate_band(band, n_subjects, seed), target)
    raise DomainError(f"Unknown correlation stage '{stage}'.")


def generate_independent_sessions(n_subjects: int, n_features: int, seed: RngSeed) -> FeatureDataset:
    """Two sessions drawn independently: there is no shared subject effect, so the true ICC is 0."""
    _check_subjects(n_subjects)
    values = seed.generator().standard_normal((n_subjects, n_features, SESSIONS))
    return FeatureDataset(
        values=_zscore(values), subject_ids=subject_ids(n_subjects), feature_names=feature_names(n_features)
    )


def dataset_file_name(n_subjects: int, n_features: int, icc_target: float) -> str:
    return f"SynthFeatSet_NSess_{SESSIONS}_ICC_Targ_{icc_target * 10:g}_NFeat_{n_features}_NSubs_{n_subjects}.csv"
