"""
Command line entry point, installed as the ``persista`` console script.

Each subcommand is a thin wrapper: it resolves its inputs, calls one library operation and
hands the result to :mod:`persista.io`. Exit codes are 0 on success, 1 for data and domain
errors, 2 for usage errors and 3 for I/O failures.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from persista import __version__
from persista.decorrelate import correlate_dataset, exchangeable_correlation, whiten_dataset
from persista.errors import PersistaError
from persista.experiments import (
    evaluate_subset,
    export_score_histograms,
    run_band_sweep,
    run_corr_study,
    run_decorrelation_study,
    run_icc_histogram_experiment,
)
from persista.icc import band_partition, decile_edges, estimate_icc
from persista.io import (
    ReportBundle,
    corr_study_tables,
    decorrelation_tables,
    evaluation_tables,
    icc_histogram_tables,
    icc_tables,
    load_config,
    load_correlation_matrix,
    load_dataset,
    sweep_summary,
    sweep_tables,
    write_bundle,
    write_dataset,
)
from persista.models import BandSpec, CorrStudyConfig, DecorrCompareConfig, RngSeed, SweepConfig
from persista.similarity import SCALINGS, subset_sample
from persista.synth import dataset_file_name, generate_band, generate_feature_set, generate_independent_sessions

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DATA_ERROR = 1
EXIT_USAGE = 2
EXIT_IO_ERROR = 3

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def _float_list(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from None


def _name_list(text: str) -> List[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def _seed(args: argparse.Namespace) -> RngSeed:
    return RngSeed(seed=args.seed if args.seed is not None else 0)


def _echo(args: argparse.Namespace, **extra: Any) -> Dict[str, Any]:
    """Arguments that determine the result; output location and verbosity are left out."""
    echo = {
        key: str(value) if isinstance(value, Path) else value
        for key, value in vars(args).items()
        if key not in ("handler", "out_dir", "format", "log_level", "command")
    }
    echo["seed"] = _seed(args).model_dump(mode="json")
    echo.update(extra)
    return echo


def _dataset_target(args: argparse.Namespace, default_name: str) -> Path:
    return Path(args.out) if args.out else Path(args.out_dir) / default_name


def cmd_generate(args: argparse.Namespace) -> None:
    seed = _seed(args)
    if args.band is not None:
        band = BandSpec.default(args.band)
        dataset = generate_band(band, args.subjects, seed)
        name = f"SynthFeatSet_NSess_2_Band_{band.band_index}_NFeat_{band.n_features}_NSubs_{args.subjects}.csv"
    elif args.independent:
        dataset = generate_independent_sessions(args.subjects, args.features, seed)
        name = f"SynthFeatSet_NSess_2_Independent_NFeat_{args.features}_NSubs_{args.subjects}.csv"
    else:
        dataset = generate_feature_set(args.subjects, args.features, args.icc, seed)
        name = dataset_file_name(args.subjects, args.features, args.icc)
    write_dataset(dataset, _dataset_target(args, name))


def cmd_icc(args: argparse.Namespace) -> ReportBundle:
    estimates = estimate_icc(load_dataset(args.dataset))
    partition = band_partition(estimates, args.edges or decile_edges())
    iccs = [estimate.icc for estimate in estimates]
    summary = {
        "n_features": len(estimates),
        "icc_mean": float(np.mean(iccs)) if iccs else None,
        "icc_min": float(np.min(iccs)) if iccs else None,
        "icc_max": float(np.max(iccs)) if iccs else None,
        "band_counts": {str(band): count for band, count in partition.counts.items()},
        "unassigned": partition.unassigned,
    }
    return ReportBundle.create("icc", _echo(args), icc_tables(estimates, partition), summary)


def cmd_evaluate(args: argparse.Namespace) -> ReportBundle:
    dataset = load_dataset(args.dataset)
    if args.features:
        subsets = [args.features]
    else:
        subset_size = dataset.n_features if args.subset_size is None else args.subset_size
        subsets = subset_sample(dataset.feature_names, subset_size, args.repeats, _seed(args))
    evaluations = [evaluate_subset(dataset, subset, args.scaling) for subset in subsets]
    histograms = [export_score_histograms(evaluation.scores, args.bins) for evaluation in evaluations]
    eers = [evaluation.roc.eer_percent for evaluation in evaluations]
    summary = {
        "n_subjects": dataset.n_subjects,
        "n_evaluations": len(evaluations),
        "eer_percent_median": float(np.median(eers)),
        "genuine_median": float(np.median([e.genuine.median for e in evaluations])),
        "impostor_median": float(np.median([e.impostor.median for e in evaluations])),
    }
    return ReportBundle.create("evaluate", _echo(args), evaluation_tables(evaluations, histograms), summary)


def cmd_decorrelate(args: argparse.Namespace) -> None:
    dataset = load_dataset(args.dataset)
    whitened = whiten_dataset(dataset, rescale=not args.no_rescale)
    write_dataset(whitened, _dataset_target(args, f"{Path(args.dataset).stem}_whitened.csv"))


def cmd_correlate(args: argparse.Namespace) -> None:
    dataset = load_dataset(args.dataset)
    if args.corr_matrix:
        target = load_correlation_matrix(args.corr_matrix)
    else:
        target = exchangeable_correlation(dataset.n_features, args.rho)
    correlated = correlate_dataset(dataset, target)
    write_dataset(correlated, _dataset_target(args, f"{Path(args.dataset).stem}_correlated.csv"))


def cmd_sweep(args: argparse.Namespace) -> ReportBundle:
    config = load_config(args.config, SweepConfig, seed=args.seed)
    if args.n_jobs is not None:
        config = config.model_copy(update={"n_jobs": args.n_jobs})
    report = run_band_sweep(config)
    # n_jobs does not change the result, so it stays out of the run id.
    echo = config.model_dump(mode="json", exclude={"n_jobs"})
    return ReportBundle.create("sweep", echo, sweep_tables(report), sweep_summary(report))


def cmd_corr_study(args: argparse.Namespace) -> ReportBundle:
    config = load_config(args.config, CorrStudyConfig, seed=args.seed)
    report = run_corr_study(config)
    summary = {"spearman_rho": report.spearman_rho, "n_rows": len(report.rows)}
    return ReportBundle.create("corr-study", config.model_dump(mode="json"), corr_study_tables(report), summary)


def cmd_decorr_compare(args: argparse.Namespace) -> ReportBundle:
    config = load_config(args.config, DecorrCompareConfig, seed=args.seed)
    report = run_decorrelation_study(config)
    summary = {
        variant: {
            str(curve.band): {"genuine_iqr": curve.genuine_iqr.median, "impostor_iqr": curve.impostor_iqr.median}
            for curve in report.curve(variant)
        }
        for variant in ("raw", "whitened")
    }
    return ReportBundle.create("decorr-compare", config.model_dump(mode="json"), decorrelation_tables(report), summary)


def cmd_icc_histogram(args: argparse.Namespace) -> ReportBundle:
    report = run_icc_histogram_experiment(args.subjects, args.features, args.icc, args.bins, _seed(args))
    summary = report.model_dump(exclude={"estimates", "bin_edges", "counts", "proportions"})
    return ReportBundle.create("icc-histogram", _echo(args), icc_histogram_tables(report), summary)


def _add_common_options(parser: argparse.ArgumentParser, defaults: bool) -> argparse.ArgumentParser:
    """
    The options every command shares. They are accepted before and after the command name; the
    subcommand copies suppress their defaults so a value given before the command is kept.
    """

    def default(value: Any) -> Any:
        return value if defaults else argparse.SUPPRESS

    parser.add_argument("--seed", type=int, default=default(None), help="master seed (overrides the seed of a config file)")
    parser.add_argument("--out-dir", default=default("."), help="directory for output files (default: current directory)")
    parser.add_argument("--format", choices=("csv", "json"), default=default("csv"), help="report format (default: csv)")
    parser.add_argument(
        "--log-level",
        choices=("DEBUG", "INFO", "WARNING", "ERROR"),
        default=default("INFO"),
        help="logging verbosity on stderr (default: INFO)",
    )
    return parser


def _add_command(
    subparsers, name: str, handler: Callable, help_text: str, common: argparse.ArgumentParser
) -> argparse.ArgumentParser:
    parser = subparsers.add_parser(name, help=help_text, description=help_text, parents=[common])
    parser.set_defaults(handler=handler)
    return parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="persista",
        description="Temporal persistence (ICC) of biometric features and its effect on verification performance.",
    )
    parser.add_argument("--version", action="version", version=f"persista {__version__}")
    _add_common_options(parser, defaults=True)
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    common = _add_common_options(argparse.ArgumentParser(add_help=False), defaults=False)
    scalings = sorted(SCALINGS)

    generate = _add_command(subparsers, "generate", cmd_generate, "generate a synthetic two-session dataset", common)
    generate.add_argument("--subjects", type=int, default=1000)
    generate.add_argument("--features", type=int, default=10)
    target = generate.add_mutually_exclusive_group()
    target.add_argument("--icc", type=float, default=0.7, help="target ICC shared by every feature")
    target.add_argument("--band", type=int, choices=range(10), help="generate the default feature set of one ICC band")
    target.add_argument("--independent", action="store_true", help="draw both sessions independently (ICC 0)")
    generate.add_argument("--out", help="dataset file (default: <out-dir>/<descriptive name>.csv)")

    icc = _add_command(subparsers, "icc", cmd_icc, "estimate per-feature variance components and ICC", common)
    icc.add_argument("dataset")
    icc.add_argument("--edges", type=_float_list, help="comma-separated band edges (default: deciles)")

    evaluate = _add_command(subparsers, "evaluate", cmd_evaluate, "score genuine and impostor pairs, ROC and EER", common)
    evaluate.add_argument("dataset")
    subset = evaluate.add_mutually_exclusive_group()
    subset.add_argument("--features", type=_name_list, help="comma-separated feature names to score")
    subset.add_argument("--subset-size", type=int, help="score random subsets of this size (default: all features)")
    evaluate.add_argument("--repeats", type=int, default=1, help="number of random subsets")
    evaluate.add_argument("--scaling", choices=scalings, default="empirical-max")
    evaluate.add_argument("--bins", type=int, default=50, help="histogram bins on [0, 1]")

    decorrelate = _add_command(subparsers, "decorrelate", cmd_decorrelate, "whiten a dataset", common)
    decorrelate.add_argument("dataset")
    decorrelate.add_argument("--no-rescale", action="store_true", help="keep the orthonormal columns unscaled")
    decorrelate.add_argument("--out", help="dataset file (default: <out-dir>/<name>_whitened.csv)")

    correlate = _add_command(subparsers, "correlate", cmd_correlate, "impose a correlation structure on a dataset", common)
    correlate.add_argument("dataset")
    structure = correlate.add_mutually_exclusive_group(required=True)
    structure.add_argument("--rho", type=float, help="exchangeable target correlation")
    structure.add_argument("--corr-matrix", help="headerless CSV with a K x K target correlation matrix")
    correlate.add_argument("--out", help="dataset file (default: <out-dir>/<name>_correlated.csv)")

    sweep = _add_command(subparsers, "sweep", cmd_sweep, "band sweep over ICC deciles", common)
    sweep.add_argument("--config", default="default", help="YAML config file or 'default'")
    sweep.add_argument("--n-jobs", type=int, help="parallel band workers (overrides the config)")

    corr_study = _add_command(
        subparsers, "corr-study", cmd_corr_study, "feature intercorrelation versus impostor IQR", common
    )
    corr_study.add_argument("--config", default="default", help="YAML config file or 'default'")

    decorr_compare = _add_command(
        subparsers, "decorr-compare", cmd_decorr_compare, "raw versus whitened score distributions", common
    )
    decorr_compare.add_argument("--config", default="default", help="YAML config file or 'default'")

    histogram = _add_command(
        subparsers, "icc-histogram", cmd_icc_histogram, "check ICC recovery on a synthetic feature set", common
    )
    histogram.add_argument("--subjects", type=int, default=10000)
    histogram.add_argument("--features", type=int, default=1000)
    histogram.add_argument("--icc", type=float, default=0.7)
    histogram.add_argument("--bins", type=int, default=20)
    return parser


def _fail(category: str, message: Any, code: int) -> int:
    print(f"persista: error[{category}]: {message}", file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    logging.basicConfig(level=args.log_level, stream=sys.stderr, format=LOG_FORMAT)
    try:
        bundle = args.handler(args)
        if bundle is not None:
            write_bundle(bundle, args.out_dir, args.format)
    except PersistaError as e:
        return _fail(e.category, e, EXIT_DATA_ERROR)
    except ValidationError as e:
        return _fail("domain", e, EXIT_DATA_ERROR)
    except OSError as e:
        return _fail("io", e, EXIT_IO_ERROR)
    return EXIT_OK


def run():
    """Calls :func:`main` passing the CLI arguments extracted from :obj:`sys.argv`."""
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    run()
