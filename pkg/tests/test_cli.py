import json

import numpy as np
import pandas as pd
import pytest

from persista.cli import EXIT_DATA_ERROR, EXIT_IO_ERROR, EXIT_OK, EXIT_USAGE, main
from persista.decorrelate import correlation_matrix
from persista.io import load_dataset, write_dataset
from persista.models import DataMatrix, RngSeed
from persista.synth import dataset_file_name, generate_feature_set


@pytest.fixture
def dataset_file(tmp_path, synthetic_dataset):
    return str(write_dataset(synthetic_dataset, tmp_path / "features.csv"))


def test_generate(tmp_path):
    argv = ["generate", "--subjects", "100", "--features", "10", "--icc", "0.7", "--seed", "42", "--out-dir", str(tmp_path)]
    assert main(argv) == EXIT_OK
    path = tmp_path / dataset_file_name(100, 10, 0.7)
    lines = path.read_text().splitlines()
    assert len(lines) == 201
    assert lines[0].startswith("Subject,Session,Feat01,")


def test_generate_is_reproducible(tmp_path):
    for name in ("a.csv", "b.csv"):
        assert main(["generate", "--subjects", "20", "--features", "3", "--seed", "9", "--out", str(tmp_path / name)]) == EXIT_OK
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_common_options_before_the_command(tmp_path):
    assert main(["--seed", "9", "--out-dir", str(tmp_path / "before"), "generate", "--subjects", "20", "--features", "3"]) == EXIT_OK
    assert main(["generate", "--subjects", "20", "--features", "3", "--seed", "9", "--out-dir", str(tmp_path / "after")]) == EXIT_OK
    name = dataset_file_name(20, 3, 0.7)
    assert (tmp_path / "before" / name).read_bytes() == (tmp_path / "after" / name).read_bytes()


def test_generate_band(tmp_path):
    assert main(["generate", "--subjects", "20", "--band", "4", "--out", str(tmp_path / "band.csv")]) == EXIT_OK
    assert load_dataset(tmp_path / "band.csv").feature_names[0] == "Feat01_T0.405"


def test_icc_of_perfectly_persistent_features(tmp_path):
    write_dataset(generate_feature_set(50, 4, 1.0, RngSeed(seed=1)), tmp_path / "perfect.csv")
    assert main(["icc", str(tmp_path / "perfect.csv"), "--out-dir", str(tmp_path / "report")]) == EXIT_OK
    table = pd.read_csv(tmp_path / "report" / "icc.csv")
    assert list(table.columns) == ["feature_name", "var_subject", "var_session", "var_error", "icc"]
    assert np.allclose(table["icc"], 1.0, atol=1e-12)
    counts = pd.read_csv(tmp_path / "report" / "band_counts.csv")
    assert counts.loc[counts.band_index == 9, "n_features"].item() == 4


def test_icc_with_custom_edges(tmp_path, dataset_file):
    assert main(["icc", dataset_file, "--edges", "0,0.5,1", "--out-dir", str(tmp_path / "report")]) == EXIT_OK
    summary = json.loads((tmp_path / "report" / "summary.json").read_text())
    assert summary["command"] == "icc"
    assert summary["config"]["edges"] == [0.0, 0.5, 1.0]
    assert sum(summary["summary"]["band_counts"].values()) == 8


def test_evaluate(tmp_path, dataset_file):
    out = tmp_path / "report"
    argv = ["evaluate", dataset_file, "--subset-size", "4", "--repeats", "3", "--bins", "10", "--out-dir", str(out)]
    assert main(argv) == EXIT_OK
    evaluation = pd.read_csv(out / "evaluation.csv")
    assert len(evaluation) == 3
    assert (evaluation["eer_percent"] < 50).all()
    assert len(pd.read_csv(out / "histogram.csv")) == 30
    roc = pd.read_csv(out / "roc.csv")
    assert set(roc.columns) == {"repeat", "threshold", "far", "frr"}


def test_evaluate_rejects_empty_subsets(tmp_path, dataset_file, capsys):
    assert main(["evaluate", dataset_file, "--subset-size", "0", "--out-dir", str(tmp_path / "out")]) == EXIT_DATA_ERROR
    assert "error[domain]" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_evaluate_named_features_as_json(tmp_path, dataset_file):
    out = tmp_path / "report"
    argv = ["evaluate", dataset_file, "--features", "Feat01,Feat03", "--format", "json", "--out-dir", str(out)]
    assert main(argv) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["schema_version"] == 1
    assert report["tables"]["evaluation"][0]["features"] == "Feat01;Feat03"


def test_decorrelate(tmp_path, dataset_file):
    target = tmp_path / "white.csv"
    assert main(["decorrelate", dataset_file, "--out", str(target)]) == EXIT_OK
    whitened = load_dataset(target)
    assert correlation_matrix(DataMatrix.from_dataset(whitened)).max_abs_offdiag <= 1e-8


def test_correlate(tmp_path, dataset_file):
    assert main(["correlate", dataset_file, "--rho", "0.5", "--out-dir", str(tmp_path)]) == EXIT_OK
    correlated = load_dataset(tmp_path / "features_correlated.csv")
    assert correlation_matrix(DataMatrix.from_dataset(correlated)).median_abs_offdiag > 0.35


def test_correlate_with_matrix_file(tmp_path, dataset_file):
    matrix = tmp_path / "target.csv"
    np.savetxt(matrix, 0.8 * np.eye(8) + 0.2, delimiter=",")
    assert main(["correlate", dataset_file, "--corr-matrix", str(matrix), "--out", str(tmp_path / "c.csv")]) == EXIT_OK
    assert (tmp_path / "c.csv").exists()


def test_sweep_is_byte_reproducible(tmp_path):
    config = tmp_path / "sweep.yaml"
    config.write_text("n_subjects: 60\nbands: [1, 8]\nsubset_size: 5\nn_repeats: 2\n")
    for name in ("first", "second"):
        assert main(["sweep", "--config", str(config), "--seed", "4", "--out-dir", str(tmp_path / name)]) == EXIT_OK
    for artifact in ("repeats.csv", "bands.csv", "summary.json"):
        assert (tmp_path / "first" / artifact).read_bytes() == (tmp_path / "second" / artifact).read_bytes()
    summary = json.loads((tmp_path / "first" / "summary.json").read_text())
    assert summary["config"]["seed"]["seed"] == 4
    assert set(summary["summary"]["bands"]) == {"1", "8"}


def test_corr_study_and_decorr_compare(tmp_path):
    corr = tmp_path / "corr.yaml"
    corr.write_text("n_subjects: 100\nrhos: [0.0, 0.4]\nn_iterations: 3\n")
    assert main(["corr-study", "--config", str(corr), "--out-dir", str(tmp_path / "corr")]) == EXIT_OK
    assert len(pd.read_csv(tmp_path / "corr" / "iterations.csv")) == 6

    decorr = tmp_path / "decorr.yaml"
    decorr.write_text("n_subjects: 100\nbands: [2, 7]\nn_repeats: 2\nsubset_size: 10\n")
    assert main(["decorr-compare", "--config", str(decorr), "--out-dir", str(tmp_path / "decorr")]) == EXIT_OK
    correlation = pd.read_csv(tmp_path / "decorr" / "correlation.csv")
    assert list(correlation.columns) == ["band_index", "median_abs_offdiag", "max_abs_offdiag"]
    assert len(pd.read_csv(tmp_path / "decorr" / "curves.csv")) == 4


def test_icc_histogram(tmp_path):
    argv = ["icc-histogram", "--subjects", "200", "--features", "20", "--bins", "10", "--out-dir", str(tmp_path)]
    assert main(argv) == EXIT_OK
    histogram = pd.read_csv(tmp_path / "histogram.csv")
    assert histogram["count"].sum() == 20


def test_usage_errors(capsys):
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["generate", "--colour", "blue"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE
    assert main(["correlate", "x.csv"]) == EXIT_USAGE


def test_help_and_version():
    assert main(["--help"]) == EXIT_OK
    assert main(["--version"]) == EXIT_OK


def test_data_error_is_categorised(tmp_path, capsys):
    assert main(["generate", "--subjects", "1", "--out-dir", str(tmp_path)]) == EXIT_DATA_ERROR
    assert "persista: error[insufficient-subjects]:" in capsys.readouterr().err
    assert list(tmp_path.iterdir()) == []


def test_config_error(tmp_path, capsys):
    config = tmp_path / "bad.yaml"
    config.write_text("subset_size: 500\n")
    assert main(["sweep", "--config", str(config), "--out-dir", str(tmp_path / "out")]) == EXIT_DATA_ERROR
    assert "error[config]" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_missing_file_is_io_error(tmp_path, capsys):
    assert main(["icc", str(tmp_path / "absent.csv")]) == EXIT_IO_ERROR
    assert "error[io]" in capsys.readouterr().err
