"""
Dataset and report serialization, configuration loading.

Datasets use the two-session CSV layout ``Subject,Session,Feat01,...``: one row per
(subject, session) pair, all session-1 rows first. Reports are bundles of named tables plus a
JSON summary; every file is staged in a temporary file next to its target and renamed only when
the whole bundle has been produced, so a failed run leaves no partial output behind.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Type, TypeVar, Union

import numpy as np
import pandas as pd
import yaml
from pydantic import BaseModel, ValidationError

from persista.errors import BalanceError, ConfigError, DatasetFormatError, DatasetParseError
from persista.models import (
    SESSIONS,
    BandCorrelation,
    BandPartition,
    BandSweepReport,
    CorrIqrStudyReport,
    DecorrelationReport,
    FeatureDataset,
    IccEstimate,
    IccHistogramReport,
    ScoreHistogram,
    Spread,
    SubsetEvaluation,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
HEADER = ("Subject", "Session")
FLOAT_FORMAT = "%.17g"

ConfigT = TypeVar("ConfigT", bound=BaseModel)
PathLike = Union[str, Path]


class ReportBundle(BaseModel):
    """Everything one CLI run produces: the tables, the summary and the configuration that made them."""

    command: str
    run_id: str
    config_echo: Dict[str, Any]
    tables: Dict[str, List[Dict[str, Any]]] = {}
    summary: Dict[str, Any] = {}

    @classmethod
    def create(
        cls,
        command: str,
        config_echo: Dict[str, Any],
        tables: Optional[Dict[str, List[Dict[str, Any]]]] = None,
        summary: Optional[Dict[str, Any]] = None,
    ) -> ReportBundle:
        return cls(
            command=command,
            run_id=run_id_for(command, config_echo),
            config_echo=config_echo,
            tables=tables or {},
            summary=summary or {},
        )

    def header(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "run_id": self.run_id,
            "config": self.config_echo,
            "summary": self.summary,
        }


def _canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=False)


def run_id_for(command: str, config_echo: Dict[str, Any]) -> str:
    digest = hashlib.sha256(_canonical_json({"command": command, "config": config_echo}).encode("utf-8"))
    return digest.hexdigest()[:12]


class AtomicWriteContext:
    """
    Collects output files and writes them when the context exits without an error. Each file
    goes to a temporary sibling first; the renames happen only after every file is staged.
    """

    def __init__(self, directory: PathLike):
        self._directory = Path(directory)
        self._files: Dict[Path, str] = {}

    def put_text(self, name: PathLike, text: str):
        self._files[self._directory / name] = text

    def put_frame(self, name: PathLike, frame: pd.DataFrame, float_format: Optional[str] = None):
        self.put_text(name, frame.to_csv(index=False, float_format=float_format, lineterminator="\n"))

    def put_json(self, name: PathLike, payload: Any):
        self.put_text(name, _canonical_json(payload) + "\n")

    @property
    def paths(self) -> List[Path]:
        return list(self._files)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if exc_type is None:
            self._commit()
        else:
            logger.debug("Discarding %d staged files after %s", len(self._files), exc_type.__name__)
        self._files.clear()

    def _commit(self):
        staged: List[Tuple[str, Path]] = []
        try:
            for target, text in self._files.items():
                target.parent.mkdir(parents=True, exist_ok=True)
                handle, temporary = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
                with os.fdopen(handle, "w", encoding="utf-8", newline="") as stream:
                    stream.write(text)
                staged.append((temporary, target))
        except OSError:
            for temporary, _ in staged:
                Path(temporary).unlink(missing_ok=True)
            raise
        for temporary, target in staged:
            os.replace(temporary, target)
            logger.debug("Wrote %s", target)


def dataset_frame(dataset: FeatureDataset) -> pd.DataFrame:
    subjects = np.tile(np.array(dataset.subject_ids, dtype=object), SESSIONS)
    sessions = np.repeat(np.array(dataset.session_ids, dtype=object), dataset.n_subjects)
    frame = pd.DataFrame(dataset.stacked(), columns=dataset.feature_names)
    frame.insert(0, HEADER[1], sessions)
    frame.insert(0, HEADER[0], subjects)
    return frame


def write_dataset(dataset: FeatureDataset, path: PathLike) -> Path:
    """Writes ``dataset`` as CSV with 17 significant digits, so values survive a reload exactly."""
    path = Path(path)
    with AtomicWriteContext(path.parent) as context:
        context.put_frame(path.name, dataset_frame(dataset), float_format=FLOAT_FORMAT)
    logger.info("Wrote %d subjects x %d features to %s", dataset.n_subjects, dataset.n_features, path)
    return path


def _session_order(labels: Sequence[str]) -> List[str]:
    try:
        return sorted(labels, key=float)
    except ValueError:
        return sorted(labels)


def _parse_cells(frame: pd.DataFrame, feature_names: List[str]) -> np.ndarray:
    cells = frame[feature_names].to_numpy(dtype=object)
    try:
        values = cells.astype(float)
    except ValueError:
        values = None
    if values is not None and np.all(np.isfinite(values)):
        return values
    for row, column in np.ndindex(cells.shape):
        try:
            parsed = float(cells[row, column])
        except ValueError:
            parsed = float("nan")
        if not np.isfinite(parsed):
            # Row numbers count the header as line 1.
            raise DatasetParseError(
                f"Row {row + 2}, column '{feature_names[column]}': '{cells[row, column]}' is not a finite number.",
                row=row + 2,
                column=feature_names[column],
            )
    raise DatasetParseError("Feature cells could not be parsed.")  # pragma: no cover


def load_dataset(path: PathLike) -> FeatureDataset:
    """
    Reads a two-session CSV. Subjects keep their order of first appearance and the two session
    labels are mapped to "1" and "2" in ascending order (numeric when every label is a number).
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise DatasetFormatError(f"{path}: file is empty, expected a header starting with Subject,Session.") from None
    except pd.errors.ParserError as e:
        raise DatasetFormatError(f"{path}: {e}") from None

    columns = [str(column).strip() for column in frame.columns]
    if tuple(columns[:2]) != HEADER:
        raise DatasetFormatError(f"{path}: header must start with Subject,Session, got {','.join(columns[:2])}.")
    frame.columns = columns
    feature_names = columns[2:]
    if len(set(feature_names)) != len(feature_names):
        raise DatasetFormatError(f"{path}: feature names must be unique.")

    subjects = frame["Subject"].str.strip()
    sessions = frame["Session"].str.strip()
    if frame.empty:
        return FeatureDataset(values=np.empty((0, len(feature_names), SESSIONS)), subject_ids=[], feature_names=feature_names)
    labels = _session_order(sessions.unique().tolist())
    if len(labels) != SESSIONS:
        raise BalanceError(f"{path}: expected exactly {SESSIONS} distinct sessions, got {len(labels)} ({labels}).")
    pairs = pd.Series(list(zip(subjects, sessions)))
    if pairs.duplicated().any():
        subject, session = pairs[pairs.duplicated()].iloc[0]
        raise BalanceError(f"{path}: subject '{subject}' appears more than once in session '{session}'.")
    subject_ids = subjects.unique().tolist()
    counts = subjects.value_counts()
    incomplete = [subject for subject in subject_ids if counts[subject] != SESSIONS]
    if incomplete:
        raise BalanceError(f"{path}: subject '{incomplete[0]}' is not present in both sessions.")

    cells = _parse_cells(frame, feature_names)
    subject_index = {subject: index for index, subject in enumerate(subject_ids)}
    session_index = {label: index for index, label in enumerate(labels)}
    values = np.empty((len(subject_ids), len(feature_names), SESSIONS))
    values[subjects.map(subject_index).to_numpy(), :, sessions.map(session_index).to_numpy()] = cells
    logger.info("Loaded %d subjects x %d features from %s", len(subject_ids), len(feature_names), path)
    return FeatureDataset(values=values, subject_ids=subject_ids, feature_names=feature_names)


def load_correlation_matrix(path: PathLike) -> np.ndarray:
    """Reads a headerless, comma-separated K x K table of correlations."""
    try:
        frame = pd.read_csv(path, header=None, dtype=float)
    except pd.errors.EmptyDataError:
        raise DatasetFormatError(f"{path}: correlation matrix file is empty.") from None
    except ValueError as e:
        raise DatasetParseError(f"{path}: correlation matrix must be numeric ({e}).") from None
    return frame.to_numpy()


def _validation_message(error: ValidationError) -> str:
    return "; ".join(
        f"{'.'.join(str(part) for part in item['loc']) or 'config'}: {item['msg']}" for item in error.errors()
    )


def load_config(source: PathLike, model: Type[ConfigT], seed: Optional[int] = None) -> ConfigT:
    """
    Builds ``model`` from a YAML file, or from the built-in defaults when ``source`` is the
    literal ``default``. ``seed`` replaces the master seed of the file.
    """
    if str(source) == "default":
        data: Any = {}
    else:
        with open(source, encoding="utf-8") as stream:
            try:
                data = yaml.safe_load(stream) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"{source}: invalid YAML ({e}).") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{source}: expected a mapping of settings, got {type(data).__name__}.")
    if seed is not None:
        current = data.get("seed", {})
        data["seed"] = {**current, "seed": seed} if isinstance(current, dict) else seed
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"{source}: {_validation_message(e)}") from None


def write_bundle(bundle: ReportBundle, out_dir: PathLike, output_format: str = "csv") -> List[Path]:
    """
    ``csv`` writes one ``<table>.csv`` per table plus ``summary.json``; ``json`` writes a single
    ``report.json`` that also contains the tables.
    """
    with AtomicWriteContext(out_dir) as context:
        if output_format == "json":
            context.put_json("report.json", {**bundle.header(), "tables": bundle.tables})
        elif output_format == "csv":
            for name, records in bundle.tables.items():
                context.put_frame(f"{name}.csv", pd.DataFrame.from_records(records))
            context.put_json("summary.json", bundle.header())
        else:
            raise ValueError(f"Unknown report format '{output_format}'.")
        paths = context.paths
    logger.info("Report %s (%s) written to %s", bundle.run_id, bundle.command, out_dir)
    return paths


def _spread_columns(prefix: str, spread: Spread) -> Dict[str, float]:
    return {f"{prefix}_median": spread.median, f"{prefix}_min": spread.min, f"{prefix}_max": spread.max}


def icc_records(estimates: Sequence[IccEstimate]) -> List[Dict[str, Any]]:
    return [
        {
            "feature_name": estimate.feature_name,
            "var_subject": estimate.components.var_subject,
            "var_session": estimate.components.var_session,
            "var_error": estimate.components.var_error,
            "icc": estimate.icc,
        }
        for estimate in estimates
    ]


def icc_tables(estimates: Sequence[IccEstimate], partition: Optional[BandPartition] = None) -> Dict[str, List[Dict[str, Any]]]:
    tables = {"icc": icc_records(estimates)}
    if partition is not None:
        tables["bands"] = [
            {"feature_name": estimate.feature_name, "band_index": partition.assignment.get(estimate.feature_name)}
            for estimate in estimates
        ]
        tables["band_counts"] = [
            {
                "band_index": band,
                "icc_low": partition.edges[band],
                "icc_high": partition.edges[band + 1],
                "n_features": count,
            }
            for band, count in sorted(partition.counts.items())
        ]
    return tables


def sweep_tables(report: BandSweepReport) -> Dict[str, List[Dict[str, Any]]]:
    bands = []
    for aggregate in report.bands:
        record: Dict[str, Any] = {"band": aggregate.band}
        for name in ("genuine_median", "impostor_median", "genuine_iqr", "impostor_iqr", "eer_percent"):
            record.update(_spread_columns(name, getattr(aggregate, name)))
        bands.append(record)
    return {"repeats": [row.model_dump() for row in report.rows], "bands": bands}


def sweep_summary(report: BandSweepReport) -> Dict[str, Any]:
    return {
        "bands": {
            str(aggregate.band): {
                "genuine_median": aggregate.genuine_median.median,
                "impostor_median": aggregate.impostor_median.median,
                "genuine_iqr": aggregate.genuine_iqr.median,
                "impostor_iqr": aggregate.impostor_iqr.median,
                "eer_percent": aggregate.eer_percent.median,
            }
            for aggregate in report.bands
        }
    }


def evaluation_tables(
    evaluations: Sequence[SubsetEvaluation], histograms: Sequence[ScoreHistogram]
) -> Dict[str, List[Dict[str, Any]]]:
    summary, roc, histogram_rows = [], [], []
    for repeat, (evaluation, histogram) in enumerate(zip(evaluations, histograms)):
        summary.append(
            {
                "repeat": repeat,
                "features": ";".join(evaluation.feature_subset),
                "genuine_median": evaluation.genuine.median,
                "impostor_median": evaluation.impostor.median,
                "genuine_iqr": evaluation.genuine.iqr,
                "impostor_iqr": evaluation.impostor.iqr,
                "eer_percent": evaluation.roc.eer_percent,
                "eer_threshold": evaluation.roc.eer_threshold,
            }
        )
        result = evaluation.roc
        roc.extend(
            {"repeat": repeat, "threshold": threshold, "far": far, "frr": frr}
            for threshold, far, frr in zip(result.thresholds.tolist(), result.far.tolist(), result.frr.tolist())
        )
        edges = histogram.bin_edges
        histogram_rows.extend(
            {
                "repeat": repeat,
                "bin_low": edges[index],
                "bin_high": edges[index + 1],
                "genuine": histogram.genuine[index],
                "impostor": histogram.impostor[index],
            }
            for index in range(len(histogram.genuine))
        )
    return {"evaluation": summary, "roc": roc, "histogram": histogram_rows}


def corr_study_tables(report: CorrIqrStudyReport) -> Dict[str, List[Dict[str, Any]]]:
    return {"iterations": [row.model_dump() for row in report.rows]}


def correlation_records(correlations: Sequence[BandCorrelation]) -> List[Dict[str, Any]]:
    return [item.model_dump() for item in correlations]


def decorrelation_tables(report: DecorrelationReport) -> Dict[str, List[Dict[str, Any]]]:
    curves = []
    for curve in report.curves:
        record: Dict[str, Any] = {"band": curve.band, "variant": curve.variant}
        record.update(_spread_columns("genuine_iqr", curve.genuine_iqr))
        record.update(_spread_columns("impostor_iqr", curve.impostor_iqr))
        record["median_abs_offdiag"] = curve.median_abs_offdiag
        curves.append(record)
    return {
        "repeats": [row.model_dump() for row in report.rows],
        "curves": curves,
        "correlation": correlation_records(report.correlations),
    }


def icc_histogram_tables(report: IccHistogramReport) -> Dict[str, List[Dict[str, Any]]]:
    histogram = [
        {
            "bin_low": report.bin_edges[index],
            "bin_high": report.bin_edges[index + 1],
            "count": count,
            "proportion": report.proportions[index],
        }
        for index, count in enumerate(report.counts)
    ]
    return {"histogram": histogram, "icc": icc_records(report.estimates)}

