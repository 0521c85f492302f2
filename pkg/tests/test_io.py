import json

import numpy as np
import pandas as pd
import pytest

from persista.errors import BalanceError, ConfigError, DatasetFormatError, DatasetParseError
from persista.experiments import aggregate_rows
from persista.io import (
    AtomicWriteContext,
    ReportBundle,
    load_config,
    load_correlation_matrix,
    load_dataset,
    run_id_for,
    sweep_tables,
    write_bundle,
    write_dataset,
)
from persista.models import BandSpec, BandSweepReport, FeatureDataset, RepeatRow, SweepConfig


def _write(path, text):
    path.write_text(text)
    return path


def test_dataset_round_trip_is_lossless(tmp_path, synthetic_dataset):
    path = write_dataset(synthetic_dataset, tmp_path / "features.csv")
    loaded = load_dataset(path)
    assert loaded.subject_ids == synthetic_dataset.subject_ids
    assert loaded.feature_names == synthetic_dataset.feature_names
    assert np.abs(loaded.values - synthetic_dataset.values).max() <= 1e-12


def test_written_layout(tmp_path, tiny_dataset):
    lines = write_dataset(tiny_dataset, tmp_path / "tiny.csv").read_text().splitlines()
    assert lines[0] == "Subject,Session,Feat01,Feat02"
    assert len(lines) == 7
    assert lines[1] == "s1,1,1,0.5"
    assert lines[4] == "s1,2,2,0.25"


def test_empty_dataset_writes_header_only(tmp_path):
    empty = FeatureDataset(values=np.empty((0, 2, 2)), subject_ids=[], feature_names=["Feat01", "Feat02"])
    path = write_dataset(empty, tmp_path / "empty.csv")
    assert path.read_text() == "Subject,Session,Feat01,Feat02\n"
    assert load_dataset(path).n_subjects == 0


def test_write_creates_missing_directories(tmp_path, tiny_dataset):
    path = write_dataset(tiny_dataset, tmp_path / "nested" / "deeper" / "tiny.csv")
    assert path.exists()


def test_load_orders_subjects_and_sessions(tmp_path):
    path = _write(
        tmp_path / "labels.csv",
        '"Subject","Session","Feat01"\nb,10,1.5\na,10,2.5\na,2,3.5\nb,2,4.5\n',
    )
    dataset = load_dataset(path)
    assert dataset.subject_ids == ["b", "a"]
    assert dataset.session_ids == ["1", "2"]
    # Session "2" sorts before "10" numerically, so it becomes the first session.
    assert dataset.feature_column("Feat01").tolist() == [[4.5, 1.5], [3.5, 2.5]]


def test_load_rejects_missing_header(tmp_path):
    with pytest.raises(DatasetFormatError):
        load_dataset(_write(tmp_path / "bad.csv", "Id,Visit,Feat01\n1,1,0.5\n"))
    with pytest.raises(DatasetFormatError):
        load_dataset(_write(tmp_path / "empty.csv", ""))


def test_load_rejects_unbalanced_sessions(tmp_path):
    with pytest.raises(BalanceError, match="'2'"):
        load_dataset(_write(tmp_path / "missing.csv", "Subject,Session,Feat01\n1,1,0.1\n2,1,0.2\n1,2,0.3\n"))
    with pytest.raises(BalanceError):
        load_dataset(_write(tmp_path / "three.csv", "Subject,Session,Feat01\n1,1,0.1\n1,2,0.2\n1,3,0.3\n"))
    with pytest.raises(BalanceError):
        load_dataset(_write(tmp_path / "twice.csv", "Subject,Session,Feat01\n1,1,0.1\n1,1,0.2\n1,2,0.3\n"))


def test_load_reports_unparseable_cell(tmp_path):
    path = _write(tmp_path / "cells.csv", "Subject,Session,Feat01,Feat02\n1,1,0.1,0.2\n2,1,0.3,abc\n1,2,0.5,0.6\n2,2,0.7,0.8\n")
    with pytest.raises(DatasetParseError) as e:
        load_dataset(path)
    assert (e.value.row, e.value.column) == (3, "Feat02")


def test_load_rejects_missing_value(tmp_path):
    path = _write(tmp_path / "gap.csv", "Subject,Session,Feat01\n1,1,0.1\n2,1,\n1,2,0.5\n2,2,0.7\n")
    with pytest.raises(DatasetParseError) as e:
        load_dataset(path)
    assert e.value.row == 3


def test_load_correlation_matrix(tmp_path):
    matrix = load_correlation_matrix(_write(tmp_path / "corr.csv", "1,0.2\n0.2,1\n"))
    assert matrix.tolist() == [[1.0, 0.2], [0.2, 1.0]]
    with pytest.raises(DatasetParseError):
        load_correlation_matrix(_write(tmp_path / "text.csv", "1,x\n0.2,1\n"))


def test_load_default_config():
    config = load_config("default", SweepConfig, seed=5)
    assert config.seed.seed == 5
    assert len(config.bands) == 10


def test_load_yaml_config(tmp_path):
    path = _write(tmp_path / "sweep.yaml", "n_subjects: 300\nbands: [0, 9]\nsubset_size: 10\nseed:\n  seed: 3\n  stream_id: 2\n")
    config = load_config(path, SweepConfig)
    assert config.n_subjects == 300
    assert config.bands == [BandSpec.default(0), BandSpec.default(9)]
    assert (config.seed.seed, config.seed.stream_id) == (3, 2)
    overridden = load_config(path, SweepConfig, seed=11)
    assert (overridden.seed.seed, overridden.seed.stream_id) == (11, 2)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="subset_size"):
        load_config(_write(tmp_path / "bad.yaml", "subset_size: 0\n"), SweepConfig)
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path / "list.yaml", "- 1\n- 2\n"), SweepConfig)
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path / "broken.yaml", "bands: [0, 1\n"), SweepConfig)
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "absent.yaml", SweepConfig)


def test_run_id_depends_on_config():
    assert run_id_for("sweep", {"seed": 1}) == run_id_for("sweep", {"seed": 1})
    assert run_id_for("sweep", {"seed": 1}) != run_id_for("sweep", {"seed": 2})
    assert len(run_id_for("sweep", {})) == 12


def test_write_bundle_csv(tmp_path):
    bundle = ReportBundle.create("icc", {"dataset": "x.csv"}, {"icc": [{"feature_name": "Feat01", "icc": 0.5}]}, {"n": 1})
    write_bundle(bundle, tmp_path)
    assert pd.read_csv(tmp_path / "icc.csv").to_dict("records") == [{"feature_name": "Feat01", "icc": 0.5}]
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["schema_version"] == 1
    assert summary["run_id"] == bundle.run_id
    assert summary["config"] == {"dataset": "x.csv"}
    assert summary["summary"] == {"n": 1}


def test_write_bundle_json(tmp_path):
    bundle = ReportBundle.create("icc", {"dataset": "x.csv"}, {"icc": [{"feature_name": "Feat01", "icc": 0.5}]})
    write_bundle(bundle, tmp_path, "json")
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["tables"]["icc"][0]["icc"] == 0.5
    assert not (tmp_path / "summary.json").exists()


def test_atomic_write_discards_on_error(tmp_path):
    with pytest.raises(RuntimeError):
        with AtomicWriteContext(tmp_path) as context:
            context.put_text("first.csv", "a\n")
            raise RuntimeError("interrupted")
    assert list(tmp_path.iterdir()) == []


def test_atomic_write_replaces_existing_file(tmp_path):
    (tmp_path / "out.txt").write_text("old")
    with AtomicWriteContext(tmp_path) as context:
        context.put_text("out.txt", "new")
    assert (tmp_path / "out.txt").read_text() == "new"
    assert [path.name for path in tmp_path.iterdir()] == ["out.txt"]


def test_sweep_tables_columns():
    rows = [RepeatRow(band=0, repeat=0, genuine_median=0.5, impostor_median=0.46, genuine_iqr=0.17, impostor_iqr=0.17, eer_percent=45.0)]
    report = BandSweepReport(config=SweepConfig(bands=[0]), bands=aggregate_rows(rows), rows=rows)
    tables = sweep_tables(report)
    assert list(tables["repeats"][0]) == [
        "band",
        "repeat",
        "genuine_median",
        "impostor_median",
        "genuine_iqr",
        "impostor_iqr",
        "eer_percent",
    ]
    assert tables["bands"][0]["eer_percent_median"] == 45.0
