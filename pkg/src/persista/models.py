from __future__ import annotations

from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    computed_field,
    field_validator,
    model_validator,
)

from persista.errors import DomainError

SESSIONS = 2
N_BANDS = 10

ScalingMode = Literal["empirical-max", "empirical-minmax", "analytic-halfrange"]
CorrelationStage = Literal["latent", "observed"]


def _frozen_array(value: Any, ndim: int, name: str) -> np.ndarray:
    array = np.array(value, dtype=float)
    if array.ndim != ndim:
        raise ValueError(f"`{name}` must be a {ndim}-dimensional array, got shape {array.shape}.")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"`{name}` contains missing or non-finite values.")
    array.setflags(write=False)
    return array


class RngSeed(BaseModel):
    """
    Master seed plus a sub-stream address. Two seeds with the same ``seed``, ``stream_id`` and
    ``path`` always produce the same generator; any difference yields an independent stream.
    """

    model_config = ConfigDict(frozen=True)

    seed: int = Field(default=0, ge=0)
    stream_id: int = Field(default=0, ge=0)
    path: Tuple[int, ...] = ()

    @model_validator(mode="before")
    @classmethod
    def accept_bare_integer(cls, data: Any) -> Any:
        if isinstance(data, int) and not isinstance(data, bool):
            return {"seed": data}
        return data

    def child(self, *keys: int) -> RngSeed:
        return RngSeed(seed=self.seed, stream_id=self.stream_id, path=self.path + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,) + self.path)
        return np.random.Generator(np.random.PCG64(sequence))


class FeatureDataset(BaseModel):
    """
    Two-session feature measurements. ``values[i, j, s]`` is feature ``j`` of subject ``i`` in
    session ``s``. The array is stored read-only; operations return new datasets.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray
    subject_ids: List[str]
    session_ids: List[str] = ["1", "2"]
    feature_names: List[str]

    @field_validator("values", mode="before")
    @classmethod
    def check_values(cls, value: Any) -> np.ndarray:
        array = _frozen_array(value, 3, "values")
        if array.shape[2] != SESSIONS:
            raise ValueError(f"Exactly {SESSIONS} sessions are supported, got {array.shape[2]}.")
        return array

    @field_validator("subject_ids", "session_ids", "feature_names", mode="before")
    @classmethod
    def stringify(cls, value: Any) -> List[str]:
        return [str(item) for item in value]

    @model_validator(mode="after")
    def check_labels(self):
        n_subjects, n_features, _ = self.values.shape
        if len(self.subject_ids) != n_subjects:
            raise ValueError(f"Got {len(self.subject_ids)} subject ids for {n_subjects} subjects.")
        if len(self.feature_names) != n_features:
            raise ValueError(f"Got {len(self.feature_names)} feature names for {n_features} features.")
        if len(self.session_ids) != SESSIONS:
            raise ValueError(f"Expected {SESSIONS} session ids, got {len(self.session_ids)}.")
        if len(set(self.subject_ids)) != n_subjects:
            raise ValueError("Subject ids must be unique.")
        if len(set(self.feature_names)) != n_features:
            raise ValueError("Feature names must be unique.")
        return self

    @property
    def n_subjects(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def session(self, index: int) -> np.ndarray:
        return self.values[:, :, index]

    def stacked(self) -> np.ndarray:
        """All sessions concatenated vertically: an (N * S) x K matrix, session 1 rows first."""
        return np.concatenate([self.session(s) for s in range(SESSIONS)], axis=0)

    def feature_index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise KeyError(f"Feature '{name}' is not part of the dataset.") from None

    def feature_column(self, name: str) -> np.ndarray:
        return self.values[:, self.feature_index(name), :]

    def select(self, feature_names: Sequence[str]) -> FeatureDataset:
        indexes = [self.feature_index(name) for name in feature_names]
        return self.with_values(self.values[:, indexes, :], feature_names=list(feature_names))

    def with_values(self, values: np.ndarray, feature_names: Optional[List[str]] = None) -> FeatureDataset:
        return FeatureDataset(
            values=values,
            subject_ids=self.subject_ids,
            session_ids=self.session_ids,
            feature_names=self.feature_names if feature_names is None else feature_names,
        )

    def with_stacked(self, matrix: np.ndarray, feature_names: Optional[List[str]] = None) -> FeatureDataset:
        """Inverse of :meth:`stacked`: splits an (N * S) x K matrix back into sessions."""
        n = self.n_subjects
        values = np.stack([matrix[s * n : (s + 1) * n] for s in range(SESSIONS)], axis=2)
        return self.with_values(values, feature_names=feature_names)


class BandSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    band_index: int = Field(ge=0, le=N_BANDS - 1)
    sub_targets: List[Tuple[float, int]]

    @field_validator("sub_targets")
    @classmethod
    def check_counts(cls, value: List[Tuple[float, int]]) -> List[Tuple[float, int]]:
        if not value:
            raise ValueError("A band needs at least one sub-target.")
        for target, count in value:
            if count < 1:
                raise ValueError(f"Sub-target {target} has non-positive count {count}.")
        return value

    @computed_field
    @property
    def icc_low(self) -> float:
        return round(self.band_index / N_BANDS, 10)

    @computed_field
    @property
    def icc_high(self) -> float:
        return round(self.icc_low + 1.0 / N_BANDS, 10)

    @computed_field
    @property
    def n_features(self) -> int:
        return sum(count for _, count in self.sub_targets)

    @classmethod
    def default(cls, band_index: int, n_targets: int = 10, per_target: int = 5) -> BandSpec:
        """Evenly spread targets at the centres of ``n_targets`` sub-intervals of the band."""
        if not 0 <= band_index < N_BANDS:
            raise DomainError(f"Band index must lie in [0, {N_BANDS - 1}], got {band_index}.")
        if n_targets < 1 or per_target < 1:
            raise DomainError(f"`n_targets` and `per_target` must be positive, got {n_targets} and {per_target}.")
        low = band_index / N_BANDS
        width = 1.0 / N_BANDS / n_targets
        targets = [(round(low + width * (m + 0.5), 6), per_target) for m in range(n_targets)]
        return cls(band_index=band_index, sub_targets=targets)

    def targets(self) -> List[float]:
        return [target for target, count in self.sub_targets for _ in range(count)]


def default_bands() -> List[BandSpec]:
    return [BandSpec.default(index) for index in range(N_BANDS)]


def _coerce_bands(value: Any) -> Any:
    if isinstance(value, list):
        return [BandSpec.default(item) if isinstance(item, int) else item for item in value]
    return value


class VarianceComponents(BaseModel):
    model_config = ConfigDict(frozen=True)

    var_subject: float = Field(ge=0)
    var_session: float = Field(ge=0)
    var_error: float = Field(ge=0)

    @property
    def total(self) -> float:
        return self.var_subject + self.var_session + self.var_error


class AnovaTable(BaseModel):
    """Two-way (subjects x sessions, one observation per cell) ANOVA for one feature."""

    model_config = ConfigDict(frozen=True)

    ss_subject: float
    ss_session: float
    ss_error: float
    ss_total: float
    df_subject: int
    df_session: int
    df_error: int

    @property
    def ms_subject(self) -> float:
        return self.ss_subject / self.df_subject

    @property
    def ms_session(self) -> float:
        return self.ss_session / self.df_session

    @property
    def ms_error(self) -> float:
        return self.ss_error / self.df_error


class IccEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    feature_name: str
    components: VarianceComponents
    icc: float = Field(ge=0, le=1)


class BandPartition(BaseModel):
    edges: List[float]
    assignment: Dict[str, int] = {}
    counts: Dict[int, int] = {}
    unassigned: List[str] = []

    def features_in(self, band_index: int) -> List[str]:
        return [name for name, band in self.assignment.items() if band == band_index]


class ScalingRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: ScalingMode
    observed_min_distance: float
    observed_max_distance: float


class SimilarityScores(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    genuine: np.ndarray
    impostor: np.ndarray
    scaling_record: Optional[ScalingRecord] = None

    @field_validator("genuine", "impostor", mode="before")
    @classmethod
    def check_scores(cls, value: Any) -> np.ndarray:
        array = _frozen_array(value, 1, "scores")
        if array.size and (array.min() < 0.0 or array.max() > 1.0):
            raise ValueError("Similarity scores must lie in [0, 1].")
        return array


class DistributionSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    median: float
    iqr: float = Field(ge=0)
    q25: float
    q75: float
    count: int


class RocResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    thresholds: np.ndarray
    far: np.ndarray
    frr: np.ndarray
    eer: float = Field(ge=0, le=1)
    eer_threshold: float

    @property
    def eer_percent(self) -> float:
        return 100.0 * self.eer


class DataMatrix(BaseModel):
    """Rows are observations (subjects of every session stacked), columns are features."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray
    column_names: List[str]

    @field_validator("values", mode="before")
    @classmethod
    def check_values(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, 2, "values")

    @model_validator(mode="after")
    def check_columns(self):
        if len(self.column_names) != self.values.shape[1]:
            raise ValueError(f"Got {len(self.column_names)} column names for {self.values.shape[1]} columns.")
        return self

    @classmethod
    def from_dataset(cls, dataset: FeatureDataset) -> DataMatrix:
        return cls(values=dataset.stacked(), column_names=dataset.feature_names)

    def with_values(self, values: np.ndarray) -> DataMatrix:
        return DataMatrix(values=values, column_names=self.column_names)


class CorrelationSummary(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    matrix: np.ndarray
    column_names: List[str]
    median_abs_offdiag: float = Field(ge=0, le=1)
    max_abs_offdiag: float = Field(ge=0, le=1)


class BandCorrelation(BaseModel):
    band_index: int
    median_abs_offdiag: float
    max_abs_offdiag: float


class SubsetEvaluation(BaseModel):
    feature_subset: List[str]
    scores: SimilarityScores
    genuine: DistributionSummary
    impostor: DistributionSummary
    roc: RocResult


class ScoreHistogram(BaseModel):
    bin_edges: List[float]
    genuine: List[float]
    impostor: List[float]
    eer_threshold: float


class Spread(BaseModel):
    median: float
    min: float
    max: float

    @classmethod
    def of(cls, values: Sequence[float]) -> Spread:
        array = np.asarray(values, dtype=float)
        return cls(median=float(np.median(array)), min=float(array.min()), max=float(array.max()))


class SweepConfig(BaseModel):
    n_subjects: int = Field(default=1000, ge=2)
    bands: List[BandSpec] = Field(default_factory=default_bands)
    subset_size: int = Field(default=20, ge=1)
    n_repeats: int = Field(default=10, ge=1)
    seed: RngSeed = RngSeed()
    scaling_mode: ScalingMode = "empirical-max"
    n_jobs: int = 1

    @field_validator("bands", mode="before")
    @classmethod
    def expand_band_indexes(cls, value: Any) -> Any:
        return _coerce_bands(value)

    @model_validator(mode="after")
    def check_subset_size(self):
        for band in self.bands:
            if self.subset_size > band.n_features:
                raise ValueError(
                    f"`subset_size` {self.subset_size} exceeds the {band.n_features} features of band {band.band_index}."
                )
        return self


class RepeatRow(BaseModel):
    band: int
    repeat: int
    genuine_median: float
    impostor_median: float
    genuine_iqr: float
    impostor_iqr: float
    eer_percent: float


class BandAggregate(BaseModel):
    band: int
    genuine_median: Spread
    impostor_median: Spread
    genuine_iqr: Spread
    impostor_iqr: Spread
    eer_percent: Spread


class BandSweepReport(BaseModel):
    config: SweepConfig
    bands: List[BandAggregate]
    rows: List[RepeatRow]

    def band(self, band_index: int) -> BandAggregate:
        return next(item for item in self.bands if item.band == band_index)


class IccHistogramReport(BaseModel):
    n_subjects: int
    n_features: int
    icc_target: float
    bin_edges: List[float]
    counts: List[int]
    proportions: List[float]
    icc_mean: float
    icc_min: float
    icc_max: float
    median_abs_corr: float
    max_abs_corr: float
    estimates: List[IccEstimate]


class CorrStudyConfig(BaseModel):
    n_subjects: int = Field(default=1000, ge=2)
    bands: List[BandSpec] = Field(default_factory=lambda: [BandSpec.default(6), BandSpec.default(7)])
    rhos: List[float] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
    n_iterations: int = Field(default=100, ge=1)
    subset_size: int = Field(default=10, ge=2)
    correlation_stage: CorrelationStage = "latent"
    scaling_mode: ScalingMode = "empirical-max"
    seed: RngSeed = RngSeed()

    @field_validator("bands", mode="before")
    @classmethod
    def expand_band_indexes(cls, value: Any) -> Any:
        return _coerce_bands(value)

    @model_validator(mode="after")
    def check_subset_size(self):
        n_features = sum(band.n_features for band in self.bands)
        if self.subset_size > n_features:
            raise ValueError(f"`subset_size` {self.subset_size} exceeds the {n_features} combined features.")
        return self


class CorrIqrRow(BaseModel):
    iteration: int
    median_abs_corr: float
    impostor_iqr: float
    rho: Optional[float] = None


class CorrIqrStudyReport(BaseModel):
    rows: List[CorrIqrRow]
    spearman_rho: float = Field(ge=-1, le=1)
    config: Optional[CorrStudyConfig] = None


class DecorrCompareConfig(BaseModel):
    n_subjects: int = Field(default=1000, ge=2)
    bands: List[BandSpec] = Field(default_factory=default_bands)
    rho: float = Field(default=0.3, ge=0, lt=1)
    subset_size: int = Field(default=20, ge=1)
    n_repeats: int = Field(default=10, ge=1)
    correlation_stage: CorrelationStage = "latent"
    scaling_mode: ScalingMode = "empirical-max"
    seed: RngSeed = RngSeed()

    @field_validator("bands", mode="before")
    @classmethod
    def expand_band_indexes(cls, value: Any) -> Any:
        return _coerce_bands(value)


class DecorrelationRow(BaseModel):
    band: int
    repeat: int
    variant: Literal["raw", "whitened"]
    genuine_median: float
    impostor_median: float
    genuine_iqr: float
    impostor_iqr: float


class DecorrelationCurve(BaseModel):
    band: int
    variant: Literal["raw", "whitened"]
    genuine_iqr: Spread
    impostor_iqr: Spread
    median_abs_offdiag: float


class DecorrelationReport(BaseModel):
    rows: List[DecorrelationRow]
    curves: List[DecorrelationCurve]
    correlations: List[BandCorrelation] = []
    config: Optional[DecorrCompareConfig] = None

    def curve(self, variant: str) -> List[DecorrelationCurve]:
        return sorted((c for c in self.curves if c.variant == variant), key=lambda c: c.band)
