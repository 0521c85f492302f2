"""
Genuine / impostor similarity scoring and ROC analysis.

Every subject's session-1 vector is compared with every subject's session-2 vector by cosine
distance. Pairs of the same subject are genuine (N scores), all other ordered pairs are
impostors (N * (N - 1) scores). Distances are scaled to [0, 1] by a :class:`DistanceScaling`
and reflected, ``similarity = 1 - scaled distance``.

Example usage of this module:
    from persista.similarity import roc_eer, score_pairs

    scores = score_pairs(dataset, dataset.feature_names[:20])
    roc_eer(scores).eer_percent
"""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from typing import Dict, List, Sequence, Type, Union

import numpy as np

from persista.errors import (
    DegenerateScalingError,
    DegenerateVectorError,
    DomainError,
    EmptyDistributionError,
    InsufficientSubjectsError,
)
from persista.models import DistributionSummary, FeatureDataset, RngSeed, RocResult, ScalingRecord, SimilarityScores

logger = logging.getLogger(__name__)


class DistanceScaling(ABC):
    """Maps the pooled cosine distances of one evaluation run onto [0, 1]."""

    mode: str

    @abstractmethod
    def scale(self, distances: np.ndarray) -> np.ndarray:
        pass


class EmpiricalMax(DistanceScaling):
    """Divides by the largest pooled distance; the lower end stays anchored at the analytic minimum 0."""

    mode = "empirical-max"

    def scale(self, distances: np.ndarray) -> np.ndarray:
        smallest, largest = distances.min(), distances.max()
        if largest == smallest:
            raise DegenerateScalingError(f"All pooled distances equal {largest}; empirical scaling is undefined.")
        return distances / largest


class EmpiricalMinMax(DistanceScaling):
    mode = "empirical-minmax"

    def scale(self, distances: np.ndarray) -> np.ndarray:
        smallest, largest = distances.min(), distances.max()
        if largest == smallest:
            raise DegenerateScalingError(f"All pooled distances equal {smallest}; min-max scaling is undefined.")
        return (distances - smallest) / (largest - smallest)


class AnalyticHalfRange(DistanceScaling):
    """Cosine distance lives in [0, 2]; halving needs no empirical extremes."""

    mode = "analytic-halfrange"

    def scale(self, distances: np.ndarray) -> np.ndarray:
        return distances / 2.0


SCALINGS: Dict[str, Type[DistanceScaling]] = {
    scaling.mode: scaling for scaling in (EmpiricalMax, EmpiricalMinMax, AnalyticHalfRange)
}


def scaling_for(mode: Union[str, DistanceScaling]) -> DistanceScaling:
    if isinstance(mode, DistanceScaling):
        return mode
    try:
        return SCALINGS[mode]()
    except KeyError:
        raise DomainError(f"Unknown scaling mode '{mode}'. Choose one of {sorted(SCALINGS)}.") from None


def cosine_distance(u: Sequence[float], v: Sequence[float]) -> float:
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    if u.shape != v.shape or u.ndim != 1 or u.size < 1:
        raise DomainError(f"Vectors must be 1-dimensional with the same non-zero length, got {u.shape} and {v.shape}.")
    norm_u, norm_v = np.linalg.norm(u), np.linalg.norm(v)
    if norm_u == 0.0 or norm_v == 0.0:
        raise DegenerateVectorError("Cosine distance is undefined for an all-zero vector.")
    return float(np.clip(1.0 - u @ v / (norm_u * norm_v), 0.0, 2.0))


def _unit_rows(vectors: np.ndarray, dataset: FeatureDataset, session: int) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateVectorError(
            f"Subject '{dataset.subject_ids[zero[0]]}' has an all-zero vector in session "
            f"{dataset.session_ids[session]}; cosine distance is undefined."
        )
    return vectors / norms[:, np.newaxis]


def pairwise_distances(dataset: FeatureDataset, feature_subset: Sequence[str]) -> np.ndarray:
    """N x N cosine distances; row i is subject i in session 1, column j subject j in session 2."""
    if not feature_subset:
        raise DomainError("The feature subset is empty.")
    if dataset.n_subjects < 2:
        raise InsufficientSubjectsError(f"Scoring needs at least 2 subjects, got {dataset.n_subjects}.")
    missing = [name for name in feature_subset if name not in dataset.feature_names]
    if missing:
        raise DomainError(f"Features not in the dataset: {missing}.")
    subset = dataset.select(feature_subset)
    probes = _unit_rows(subset.session(0), dataset, 0)
    gallery = _unit_rows(subset.session(1), dataset, 1)
    return np.clip(1.0 - probes @ gallery.T, 0.0, 2.0)


def score_pairs(
    dataset: FeatureDataset,
    feature_subset: Sequence[str],
    scaling: Union[str, DistanceScaling] = "empirical-max",
) -> SimilarityScores:
    scaling = scaling_for(scaling)
    distances = pairwise_distances(dataset, feature_subset)
    # Extremes are taken over the whole matrix, so the result does not depend on pair order.
    similarities = 1.0 - np.clip(scaling.scale(distances), 0.0, 1.0)
    genuine_mask = np.eye(dataset.n_subjects, dtype=bool)
    return SimilarityScores(
        genuine=similarities[genuine_mask],
        impostor=similarities[~genuine_mask],
        scaling_record=ScalingRecord(
            mode=scaling.mode,
            observed_min_distance=float(distances.min()),
            observed_max_distance=float(distances.max()),
        ),
    )


def distribution_summary(scores: Sequence[float]) -> DistributionSummary:
    """Median and IQR with linear interpolation between order statistics."""
    values = np.asarray(scores, dtype=float)
    if values.size == 0:
        raise EmptyDistributionError("Cannot summarise an empty score distribution.")
    q25, median, q75 = np.percentile(values, [25, 50, 75])
    return DistributionSummary(median=median, iqr=max(0.0, q75 - q25), q25=q25, q75=q75, count=values.size)


def roc_eer(scores: SimilarityScores) -> RocResult:
    """
    Sweeps every distinct pooled score as a threshold, plus one sentinel just above the maximum.
    FAR(t) is the share of impostor scores >= t, FRR(t) the share of genuine scores < t. The EER
    is found by linear interpolation between the two thresholds where FAR - FRR changes sign.
    """
    genuine, impostor = scores.genuine, scores.impostor
    if genuine.size == 0 or impostor.size == 0:
        raise EmptyDistributionError("ROC analysis needs both genuine and impostor scores.")
    pooled_max = max(genuine.max(), impostor.max())
    thresholds = np.append(np.unique(np.concatenate([genuine, impostor])), np.nextafter(pooled_max, np.inf))
    far = (impostor.size - np.searchsorted(np.sort(impostor), thresholds, side="left")) / impostor.size
    frr = np.searchsorted(np.sort(genuine), thresholds, side="left") / genuine.size

    difference = far - frr
    crossing = int(np.argmax(difference <= 0.0))
    if difference[crossing] == 0.0:
        eer, eer_threshold = far[crossing], thresholds[crossing]
    else:
        before, after = difference[crossing - 1], difference[crossing]
        weight = before / (before - after)
        eer = far[crossing - 1] + weight * (far[crossing] - far[crossing - 1])
        eer_threshold = thresholds[crossing - 1] + weight * (thresholds[crossing] - thresholds[crossing - 1])
    if eer > 0.5:
        logger.warning("EER %.4f is above 0.5: genuine scores rank below impostor scores.", eer)
    return RocResult(thresholds=thresholds, far=far, frr=frr, eer=float(eer), eer_threshold=float(eer_threshold))


def subset_sample(feature_names: Sequence[str], subset_size: int, n_repeats: int, seed: RngSeed) -> List[List[str]]:
    """``n_repeats`` independent draws of ``subset_size`` distinct names; repeat ``r`` uses stream ``seed.child(r)``."""
    names = list(feature_names)
    if subset_size > len(names):
        raise DomainError(f"Cannot sample {subset_size} features from {len(names)}.")
    if subset_size < 1 or n_repeats < 1:
        raise DomainError(f"`subset_size` and `n_repeats` must be positive, got {subset_size} and {n_repeats}.")
    subsets = []
    for repeat in range(n_repeats):
        picked = seed.child(repeat).generator().choice(len(names), size=subset_size, replace=False)
        subsets.append([names[index] for index in picked])
    return subsets
