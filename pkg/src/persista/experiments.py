"""
Experiment drivers: the band sweep, ICC histogram validation, the intercorrelation versus
impostor-IQR study and the raw versus whitened comparison.

Every random draw comes from a sub-stream of the configured :class:`RngSeed`, addressed by
(stream kind, band index, repeat index), so reports do not depend on task scheduling and bands
may run in parallel (``n_jobs``).
"""
from __future__ import annotations

import logging
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from persista.decorrelate import band_correlation_summaries, correlation_matrix, whiten_dataset
from persista.errors import DomainError, PersistaError
from persista.icc import estimate_icc
from persista.models import (
    BandAggregate,
    BandSpec,
    BandSweepReport,
    CorrIqrRow,
    CorrIqrStudyReport,
    CorrStudyConfig,
    DataMatrix,
    DecorrCompareConfig,
    DecorrelationCurve,
    DecorrelationReport,
    DecorrelationRow,
    FeatureDataset,
    IccHistogramReport,
    RepeatRow,
    RngSeed,
    ScoreHistogram,
    SimilarityScores,
    Spread,
    SubsetEvaluation,
    SweepConfig,
)
from persista.similarity import DistanceScaling, distribution_summary, roc_eer, score_pairs, subset_sample
from persista.synth import generate_band, generate_correlated_band, generate_feature_set

logger = logging.getLogger(__name__)

DATA_STREAM = 0
SUBSET_STREAM = 1


def evaluate_subset(
    dataset: FeatureDataset,
    feature_subset: Sequence[str],
    scaling: Union[str, DistanceScaling] = "empirical-max",
) -> SubsetEvaluation:
    scores = score_pairs(dataset, feature_subset, scaling)
    return SubsetEvaluation(
        feature_subset=list(feature_subset),
        scores=scores,
        genuine=distribution_summary(scores.genuine),
        impostor=distribution_summary(scores.impostor),
        roc=roc_eer(scores),
    )


def _sweep_band(band: BandSpec, config: SweepConfig) -> List[RepeatRow]:
    context = f"band {band.band_index}"
    try:
        dataset = generate_band(band, config.n_subjects, config.seed.child(DATA_STREAM, band.band_index))
        subsets = subset_sample(
            dataset.feature_names, config.subset_size, config.n_repeats, config.seed.child(SUBSET_STREAM, band.band_index)
        )
    except PersistaError as e:
        raise e.with_context(context) from e

    rows = []
    for repeat, subset in enumerate(subsets):
        try:
            evaluation = evaluate_subset(dataset, subset, config.scaling_mode)
        except PersistaError as e:
            raise e.with_context(f"{context}, repeat {repeat}") from e
        rows.append(
            RepeatRow(
                band=band.band_index,
                repeat=repeat,
                genuine_median=evaluation.genuine.median,
                impostor_median=evaluation.impostor.median,
                genuine_iqr=evaluation.genuine.iqr,
                impostor_iqr=evaluation.impostor.iqr,
                eer_percent=evaluation.roc.eer_percent,
            )
        )
        logger.debug("Band %d repeat %d: EER %.2f%%", band.band_index, repeat, evaluation.roc.eer_percent)
    logger.info("Band %d done (%d repeats)", band.band_index, len(rows))
    return rows


def aggregate_rows(rows: Sequence[RepeatRow]) -> List[BandAggregate]:
    """(median, min, max) across repeats for every band present in ``rows``."""
    aggregates = []
    for band in sorted({row.band for row in rows}):
        selected = [row for row in rows if row.band == band]
        aggregates.append(
            BandAggregate(
                band=band,
                genuine_median=Spread.of([row.genuine_median for row in selected]),
                impostor_median=Spread.of([row.impostor_median for row in selected]),
                genuine_iqr=Spread.of([row.genuine_iqr for row in selected]),
                impostor_iqr=Spread.of([row.impostor_iqr for row in selected]),
                eer_percent=Spread.of([row.eer_percent for row in selected]),
            )
        )
    return aggregates


def run_band_sweep(config: SweepConfig) -> BandSweepReport:
    logger.info(
        "Band sweep: %d bands, %d subjects, %d repeats of %d features",
        len(config.bands),
        config.n_subjects,
        config.n_repeats,
        config.subset_size,
    )
    per_band = Parallel(n_jobs=config.n_jobs)(delayed(_sweep_band)(band, config) for band in config.bands)
    rows = [row for band_rows in per_band for row in band_rows]
    return BandSweepReport(config=config, bands=aggregate_rows(rows), rows=rows)


def run_icc_histogram_experiment(
    n_subjects: int,
    n_features: int,
    icc_target: float,
    bins: int,
    seed: RngSeed,
) -> IccHistogramReport:
    if bins < 1:
        raise DomainError(f"`bins` must be positive, got {bins}.")
    dataset = generate_feature_set(n_subjects, n_features, icc_target, seed)
    estimates = estimate_icc(dataset)
    iccs = np.array([estimate.icc for estimate in estimates])
    counts, edges = np.histogram(iccs, bins=bins, range=(0.0, 1.0))
    correlations = correlation_matrix(DataMatrix.from_dataset(dataset))
    logger.info("ICC histogram: mean %.4f over %d features (target %.3f)", iccs.mean(), n_features, icc_target)
    return IccHistogramReport(
        n_subjects=n_subjects,
        n_features=n_features,
        icc_target=icc_target,
        bin_edges=edges.tolist(),
        counts=counts.tolist(),
        proportions=(counts / iccs.size).tolist(),
        icc_mean=float(iccs.mean()),
        icc_min=float(iccs.min()),
        icc_max=float(iccs.max()),
        median_abs_corr=correlations.median_abs_offdiag,
        max_abs_corr=correlations.max_abs_offdiag,
        estimates=estimates,
    )


def _spearman(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) < 2:
        logger.warning("Spearman correlation needs at least two rows; reporting 0")
        return 0.0
    rho = stats.spearmanr(x, y)[0]
    if not np.isfinite(rho):
        logger.warning("Spearman correlation is undefined (a column is constant); reporting 0")
        return 0.0
    return float(np.clip(rho, -1.0, 1.0))


def _corr_iqr_rows(
    dataset: FeatureDataset,
    n_iterations: int,
    subset_size: int,
    seed: RngSeed,
    scaling: Union[str, DistanceScaling],
    first_iteration: int = 0,
    rho: Optional[float] = None,
) -> List[CorrIqrRow]:
    rows = []
    for offset, subset in enumerate(subset_sample(dataset.feature_names, subset_size, n_iterations, seed)):
        iteration = first_iteration + offset
        try:
            correlations = correlation_matrix(DataMatrix.from_dataset(dataset.select(subset)))
            impostor = distribution_summary(score_pairs(dataset, subset, scaling).impostor)
        except PersistaError as e:
            raise e.with_context(f"iteration {iteration}") from e
        rows.append(
            CorrIqrRow(
                iteration=iteration,
                median_abs_corr=correlations.median_abs_offdiag,
                impostor_iqr=impostor.iqr,
                rho=rho,
            )
        )
    return rows


def run_corr_vs_impostor_iqr(
    dataset: FeatureDataset,
    n_iterations: int,
    subset_size: int,
    seed: RngSeed,
    scaling: Union[str, DistanceScaling] = "empirical-max",
) -> CorrIqrStudyReport:
    """
    Per iteration: draws ``subset_size`` features, records their median absolute intercorrelation
    and the IQR of the impostor scores they produce, then rank-correlates the two columns.
    """
    if subset_size > dataset.n_features:
        raise DomainError(f"`subset_size` {subset_size} exceeds the {dataset.n_features} features of the dataset.")
    rows = _corr_iqr_rows(dataset, n_iterations, subset_size, seed, scaling)
    return CorrIqrStudyReport(
        rows=rows, spearman_rho=_spearman([r.median_abs_corr for r in rows], [r.impostor_iqr for r in rows])
    )


def combined_band(bands: Sequence[BandSpec]) -> BandSpec:
    """Merges several bands into one feature pool, labelled with the first band's index."""
    return BandSpec(
        band_index=bands[0].band_index,
        sub_targets=[sub_target for band in bands for sub_target in band.sub_targets],
    )


def run_corr_study(config: CorrStudyConfig) -> CorrIqrStudyReport:
    """Pools :func:`run_corr_vs_impostor_iqr` over correlation-induced datasets, one per ``rho``."""
    pool = combined_band(config.bands)
    rows: List[CorrIqrRow] = []
    for index, rho in enumerate(config.rhos):
        try:
            dataset = generate_correlated_band(
                pool, config.n_subjects, rho, config.seed.child(DATA_STREAM, index), stage=config.correlation_stage
            )
        except PersistaError as e:
            raise e.with_context(f"rho {rho}") from e
        rows.extend(
            _corr_iqr_rows(
                dataset,
                config.n_iterations,
                config.subset_size,
                config.seed.child(SUBSET_STREAM, index),
                config.scaling_mode,
                first_iteration=len(rows),
                rho=rho,
            )
        )
        logger.info("Correlation study: rho %.2f done", rho)
    spearman = _spearman([r.median_abs_corr for r in rows], [r.impostor_iqr for r in rows])
    return CorrIqrStudyReport(rows=rows, spearman_rho=spearman, config=config)


def _summary_row(band: int, repeat: int, variant: str, evaluation: SubsetEvaluation) -> DecorrelationRow:
    return DecorrelationRow(
        band=band,
        repeat=repeat,
        variant=variant,
        genuine_median=evaluation.genuine.median,
        impostor_median=evaluation.impostor.median,
        genuine_iqr=evaluation.genuine.iqr,
        impostor_iqr=evaluation.impostor.iqr,
    )


def run_decorrelation_comparison(
    datasets: Dict[int, FeatureDataset],
    subset_size: int,
    n_repeats: int,
    seed: RngSeed,
    scaling: Union[str, DistanceScaling] = "empirical-max",
) -> DecorrelationReport:
    """
    Scores identical feature subsets on each band's raw data and on its whitened version. The
    whole band is whitened over its stacked r x K matrix before subsets are drawn.
    """
    rows: List[DecorrelationRow] = []
    curves: List[DecorrelationCurve] = []
    for band in sorted(datasets):
        raw = datasets[band]
        if raw.n_features < subset_size:
            raise DomainError(f"band {band}: {raw.n_features} features is fewer than `subset_size` {subset_size}.")
        try:
            variants = {"raw": raw, "whitened": whiten_dataset(raw)}
            subsets = subset_sample(raw.feature_names, subset_size, n_repeats, seed.child(band))
        except PersistaError as e:
            raise e.with_context(f"band {band}") from e

        for variant, dataset in variants.items():
            variant_rows = []
            for repeat, subset in enumerate(subsets):
                try:
                    evaluation = evaluate_subset(dataset, subset, scaling)
                except PersistaError as e:
                    raise e.with_context(f"band {band}, repeat {repeat}, {variant}") from e
                variant_rows.append(_summary_row(band, repeat, variant, evaluation))
            rows.extend(variant_rows)
            curves.append(
                DecorrelationCurve(
                    band=band,
                    variant=variant,
                    genuine_iqr=Spread.of([row.genuine_iqr for row in variant_rows]),
                    impostor_iqr=Spread.of([row.impostor_iqr for row in variant_rows]),
                    median_abs_offdiag=correlation_matrix(DataMatrix.from_dataset(dataset)).median_abs_offdiag,
                )
            )
        logger.info("Decorrelation comparison: band %d done", band)
    return DecorrelationReport(rows=rows, curves=curves, correlations=band_correlation_summaries(datasets))


def correlated_bands(
    bands: Sequence[BandSpec], n_subjects: int, rho: float, seed: RngSeed, stage: str = "latent"
) -> Dict[int, FeatureDataset]:
    return {
        band.band_index: generate_correlated_band(band, n_subjects, rho, seed.child(band.band_index), stage=stage)
        for band in bands
    }


def run_decorrelation_study(config: DecorrCompareConfig) -> DecorrelationReport:
    datasets = correlated_bands(
        config.bands, config.n_subjects, config.rho, config.seed.child(DATA_STREAM), stage=config.correlation_stage
    )
    report = run_decorrelation_comparison(
        datasets, config.subset_size, config.n_repeats, config.seed.child(SUBSET_STREAM), config.scaling_mode
    )
    return report.model_copy(update={"config": config})


def export_score_histograms(scores: SimilarityScores, bins: int) -> ScoreHistogram:
    """Per-distribution proportions over ``bins`` equal-width bins on [0, 1], plus the EER threshold."""
    if bins < 2:
        raise DomainError(f"At least 2 bins are required, got {bins}.")
    edges = np.linspace(0.0, 1.0, bins + 1)
    genuine, _ = np.histogram(scores.genuine, bins=edges)
    impostor, _ = np.histogram(scores.impostor, bins=edges)
    return ScoreHistogram(
        bin_edges=edges.tolist(),
        genuine=(genuine / scores.genuine.size).tolist(),
        impostor=(impostor / scores.impostor.size).tolist(),
        eer_threshold=roc_eer(scores).eer_threshold,
    )
