"""
Variance components and intraclass correlation for balanced two-session data.

Subjects are crossed with sessions, one observation per cell, and both factors are random.
Components come from the ANOVA method of moments::

    var_error   = MS_error
    var_session = max(0, (MS_session - MS_error) / N)
    var_subject = max(0, (MS_subject - MS_error) / S)
    ICC         = var_subject / (var_subject + var_session + var_error)

For balanced data these coincide with REML estimates whenever no component is truncated, so
no iterative optimiser is needed.
"""
from __future__ import annotations

import logging
from typing import List, Sequence, Tuple

import numpy as np

from persista.errors import BalanceError, DegenerateFeatureError, DomainError, InsufficientSubjectsError
from persista.models import SESSIONS, AnovaTable, BandPartition, FeatureDataset, IccEstimate, VarianceComponents

logger = logging.getLogger(__name__)

# Features processed per vectorised ANOVA pass; bounds the size of the temporaries.
CHUNK_SIZE = 256


def _sums_of_squares(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    n_subjects, _, n_sessions = values.shape
    grand = values.mean(axis=(0, 2))
    subject_means = values.mean(axis=2)
    session_means = values.mean(axis=0)
    ss_total = ((values - grand[np.newaxis, :, np.newaxis]) ** 2).sum(axis=(0, 2))
    ss_subject = n_sessions * ((subject_means - grand) ** 2).sum(axis=0)
    ss_session = n_subjects * ((session_means - grand[:, np.newaxis]) ** 2).sum(axis=1)
    residual = values - subject_means[:, :, np.newaxis] - session_means[np.newaxis, :, :] + grand[np.newaxis, :, np.newaxis]
    ss_error = (residual**2).sum(axis=(0, 2))
    return ss_subject, ss_session, ss_error, ss_total


def _components(values: np.ndarray) -> np.ndarray:
    """Returns a K x 3 array of (subject, session, error) variances for an N x K x S array."""
    n_subjects, n_features, n_sessions = values.shape
    result = np.empty((n_features, 3))
    for start in range(0, n_features, CHUNK_SIZE):
        chunk = values[:, start : start + CHUNK_SIZE, :]
        ss_subject, ss_session, ss_error, _ = _sums_of_squares(chunk)
        ms_subject = ss_subject / (n_subjects - 1)
        ms_session = ss_session / (n_sessions - 1)
        ms_error = ss_error / ((n_subjects - 1) * (n_sessions - 1))
        result[start : start + CHUNK_SIZE, 0] = np.maximum(0.0, (ms_subject - ms_error) / n_sessions)
        result[start : start + CHUNK_SIZE, 1] = np.maximum(0.0, (ms_session - ms_error) / n_subjects)
        result[start : start + CHUNK_SIZE, 2] = ms_error
    constant = np.all(values == values[:1, :, :1], axis=(0, 2))
    result[constant] = 0.0
    return result


def _check_column(feature_column: np.ndarray) -> np.ndarray:
    column = np.asarray(feature_column, dtype=float)
    if column.ndim != 2 or column.shape[1] != SESSIONS:
        raise BalanceError(f"Expected an N x {SESSIONS} matrix (every subject in both sessions), got shape {column.shape}.")
    if not np.all(np.isfinite(column)):
        raise BalanceError("Feature column has missing or non-finite values.")
    if column.shape[0] < 2:
        raise InsufficientSubjectsError(f"At least 2 subjects are required, got {column.shape[0]}.")
    return column


def anova_table(feature_column: np.ndarray) -> AnovaTable:
    column = _check_column(feature_column)
    n_subjects = column.shape[0]
    sums = _sums_of_squares(column[:, np.newaxis, :])
    ss_subject, ss_session, ss_error, ss_total = (float(item[0]) for item in sums)
    return AnovaTable(
        ss_subject=ss_subject,
        ss_session=ss_session,
        ss_error=ss_error,
        ss_total=ss_total,
        df_subject=n_subjects - 1,
        df_session=SESSIONS - 1,
        df_error=(n_subjects - 1) * (SESSIONS - 1),
    )


def variance_components(feature_column: np.ndarray) -> VarianceComponents:
    column = _check_column(feature_column)
    var_subject, var_session, var_error = _components(column[:, np.newaxis, :])[0]
    return VarianceComponents(var_subject=var_subject, var_session=var_session, var_error=var_error)


def icc_from_components(components: VarianceComponents, feature_name: str = "") -> float:
    total = components.total
    if total <= 0.0:
        raise DegenerateFeatureError(f"Feature '{feature_name}' has zero total variance; its ICC is undefined.", feature=feature_name)
    return float(min(1.0, max(0.0, components.var_subject / total)))


def estimate_icc(dataset: FeatureDataset) -> List[IccEstimate]:
    """One estimate per feature, in ``dataset.feature_names`` order."""
    if dataset.n_subjects < 2:
        raise InsufficientSubjectsError(f"At least 2 subjects are required, got {dataset.n_subjects}.")
    components = _components(dataset.values)
    estimates = []
    for name, (var_subject, var_session, var_error) in zip(dataset.feature_names, components):
        parts = VarianceComponents(var_subject=var_subject, var_session=var_session, var_error=var_error)
        estimates.append(IccEstimate(feature_name=name, components=parts, icc=icc_from_components(parts, name)))
    logger.debug("Estimated ICC for %d features", len(estimates))
    return estimates


def decile_edges() -> List[float]:
    return [round(index / 10, 1) for index in range(11)]


def band_partition(estimates: Sequence[IccEstimate], edges: Sequence[float]) -> BandPartition:
    """
    Assigns each feature to the half-open interval ``[edges[b], edges[b + 1])`` containing its
    ICC. A feature exactly on an edge goes to the higher band; ICCs at or above the last edge
    join the top band only when that edge is 1.0.
    """
    edges = [float(edge) for edge in edges]
    if len(edges) < 2:
        raise DomainError("At least two band edges are required.")
    if any(low >= high for low, high in zip(edges, edges[1:])):
        raise DomainError(f"Band edges must be strictly ascending, got {edges}.")
    if edges[0] < 0.0 or edges[-1] > 1.0:
        raise DomainError(f"Band edges must lie within [0, 1], got {edges}.")

    n_bands = len(edges) - 1
    partition = BandPartition(edges=edges, counts={band: 0 for band in range(n_bands)})
    for estimate in estimates:
        band = int(np.searchsorted(edges, estimate.icc, side="right")) - 1
        if band == n_bands and edges[-1] == 1.0:
            band = n_bands - 1
        if 0 <= band < n_bands:
            partition.assignment[estimate.feature_name] = band
            partition.counts[band] += 1
        else:
            partition.unassigned.append(estimate.feature_name)
    if partition.unassigned:
        logger.warning("%d features fall outside the band edges %s", len(partition.unassigned), edges)
    return partition
