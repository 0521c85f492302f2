"""
Correlation analysis, removal and induction.

Whitening follows ``T = D (D^T D)^(-1/2)`` where ``D`` is the column-centred r x K data matrix
and the exponent is the symmetric inverse square root, computed from the eigendecomposition of
the symmetric positive definite ``D^T D``. The columns of ``T`` are orthonormal, hence exactly
uncorrelated. The forward direction multiplies near-uncorrelated columns by ``L^T`` where ``L``
is the lower Cholesky factor of a target correlation matrix.

Example usage of this module:
    from persista.decorrelate import center_columns, correlation_matrix, whiten
    from persista.models import DataMatrix

    matrix = DataMatrix.from_dataset(dataset)
    whitened = whiten(center_columns(matrix))
    correlation_matrix(whitened).median_abs_offdiag  # ~0
"""
from __future__ import annotations

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import linalg

from persista.errors import (
    DecompositionError,
    DegenerateFeatureError,
    DomainError,
    RankDeficiencyError,
)
from persista.models import BandCorrelation, CorrelationSummary, DataMatrix, FeatureDataset

logger = logging.getLogger(__name__)

# Smallest eigenvalue of D^T D relative to the largest below which whitening is refused.
RANK_TOLERANCE = 1e-10


def _constant_columns(values: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.ptp(values, axis=0) == 0.0)


def _degenerate(values: np.ndarray, names: Optional[Sequence[str]], message: str):
    constant = _constant_columns(values)
    if constant.size:
        name = names[constant[0]] if names is not None else f"#{constant[0]}"
        raise DegenerateFeatureError(message.format(name=name), feature=name)


def standardize_columns(values: np.ndarray, names: Optional[Sequence[str]] = None) -> np.ndarray:
    """Z-scores every column with the population SD (divide by r)."""
    values = np.asarray(values, dtype=float)
    if values.shape[0]:
        _degenerate(values, names, "Feature '{name}' has zero variance and cannot be z-scored.")
    return (values - values.mean(axis=0)) / values.std(axis=0)


def center_columns(matrix: DataMatrix) -> DataMatrix:
    """``D = X - (1/r) Z X``: subtracts every column mean."""
    if matrix.values.shape[0] < 1:
        raise DomainError("Cannot centre a matrix without rows.")
    return matrix.with_values(matrix.values - matrix.values.mean(axis=0))


def whiten(matrix: DataMatrix) -> DataMatrix:
    """
    Returns ``T = D (D^T D)^(-1/2)`` for a column-centred ``D``. ``T^T T`` is the identity and the
    column span of ``T`` equals that of ``D``.
    """
    values = matrix.values
    rows, columns = values.shape
    if rows <= columns:
        raise RankDeficiencyError(
            f"Whitening needs more rows than columns, got {rows} rows for {columns} columns.",
            deficient_dimensions=columns - rows + 1,
        )
    gram = values.T @ values
    eigenvalues, eigenvectors = np.linalg.eigh(gram)
    largest = eigenvalues.max()
    deficient = int(np.sum(eigenvalues <= RANK_TOLERANCE * largest)) if largest > 0 else columns
    if deficient:
        raise RankDeficiencyError(
            f"D^T D is singular or near-singular: {deficient} of {columns} dimensions are (nearly) collinear.",
            deficient_dimensions=deficient,
        )
    inverse_root = (eigenvectors / np.sqrt(eigenvalues)) @ eigenvectors.T
    return matrix.with_values(values @ inverse_root)


def correlation_matrix(matrix: DataMatrix) -> CorrelationSummary:
    values = matrix.values
    rows, columns = values.shape
    if rows < 3:
        raise DomainError(f"Correlations need at least 3 rows, got {rows}.")
    _degenerate(values, matrix.column_names, "Feature '{name}' is constant; its correlations are undefined.")
    standardized = standardize_columns(values)
    correlations = standardized.T @ standardized / rows
    correlations = np.clip((correlations + correlations.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(correlations, 1.0)
    off_diagonal = np.abs(correlations[np.triu_indices(columns, k=1)])
    return CorrelationSummary(
        matrix=correlations,
        column_names=matrix.column_names,
        median_abs_offdiag=float(np.median(off_diagonal)) if off_diagonal.size else 0.0,
        max_abs_offdiag=float(off_diagonal.max()) if off_diagonal.size else 0.0,
    )


def exchangeable_correlation(size: int, rho: float) -> np.ndarray:
    """Correlation matrix with unit diagonal and every off-diagonal entry equal to ``rho``."""
    if size < 1:
        raise DomainError(f"Correlation matrix size must be positive, got {size}.")
    if size > 1 and not -1.0 / (size - 1) < rho < 1.0:
        raise DomainError(f"rho={rho} does not give a positive definite {size} x {size} correlation matrix.")
    return (1.0 - rho) * np.eye(size) + rho * np.ones((size, size))


def cholesky_factor(target: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite correlation matrix."""
    target = np.asarray(target, dtype=float)
    if target.ndim != 2 or target.shape[0] != target.shape[1]:
        raise DomainError(f"Correlation matrix must be square, got shape {target.shape}.")
    if not np.allclose(target, target.T, atol=1e-10):
        raise DecompositionError("Correlation matrix is not symmetric.")
    if not np.allclose(np.diag(target), 1.0, atol=1e-10):
        raise DecompositionError("Correlation matrix must have a unit diagonal.")
    if np.linalg.eigvalsh(target).min() <= 0.0:
        raise DecompositionError("Correlation matrix is not positive definite.")
    try:
        return linalg.cholesky(target, lower=True)
    except linalg.LinAlgError as e:
        raise DecompositionError(f"Cholesky decomposition failed: {e}") from e


def induce_correlation(matrix: DataMatrix, target: np.ndarray) -> DataMatrix:
    """
    Imposes ``target`` on near-uncorrelated columns: returns ``X L^T`` re-z-scored per column.
    The empirical correlation of the output approaches ``target`` as the row count grows.
    """
    factor = cholesky_factor(target)
    if factor.shape[0] != matrix.values.shape[1]:
        raise DomainError(
            f"Correlation matrix is {factor.shape[0]} x {factor.shape[0]} but the data has {matrix.values.shape[1]} columns."
        )
    return matrix.with_values(standardize_columns(matrix.values @ factor.T, matrix.column_names))


def correlate_dataset(dataset: FeatureDataset, target: np.ndarray) -> FeatureDataset:
    correlated = induce_correlation(DataMatrix.from_dataset(dataset), target)
    return dataset.with_stacked(correlated.values)


def whiten_dataset(dataset: FeatureDataset, rescale: bool = True) -> FeatureDataset:
    """
    Whitens the r x K stacked form of ``dataset`` and splits the rows back into sessions. With
    ``rescale`` the columns are multiplied by sqrt(r) so each has unit population SD.
    """
    whitened = whiten(center_columns(DataMatrix.from_dataset(dataset))).values
    if rescale:
        whitened = whitened * np.sqrt(whitened.shape[0])
    return dataset.with_stacked(whitened)


def band_correlation_summaries(datasets: Dict[int, FeatureDataset]) -> List[BandCorrelation]:
    """Median and max absolute intercorrelation of the features within each band."""
    summaries = []
    for band_index in sorted(datasets):
        summary = correlation_matrix(DataMatrix.from_dataset(datasets[band_index]))
        summaries.append(
            BandCorrelation(
                band_index=band_index,
                median_abs_offdiag=summary.median_abs_offdiag,
                max_abs_offdiag=summary.max_abs_offdiag,
            )
        )
    return summaries
