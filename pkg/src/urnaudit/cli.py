"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 a statistical check
failed (``limit-check`` whose endpoints do not fit the limit law).
"""
from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from . import records
from .cohort import CohortConfig, GroupSpec, default_threads, run_cohort
from .config import FORMATS, ConfigError, ExperimentConfig, load_config, preset_names
from .limit import beta_cdf, beta_moments, fit_limit_law, limit_distribution
from .urn import UrnParameters
from .validation import (
    SnapshotSpec,
    ValidationReport,
    amplification_report,
    one_shot_power,
    snapshot_validation,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_STATISTICAL = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0 or math.isinf(value):
        raise argparse.ArgumentTypeError(f"must be a positive number, got {text}")
    return value


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be a 64-bit unsigned integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--format", choices=sorted(FORMATS), help="table format")
    common.add_argument("--threads", type=_positive_int,
                        help="worker threads (default: $URNAUDIT_THREADS or 1)")

    urn = argparse.ArgumentParser(add_help=False)
    urn.add_argument("--b0", type=_positive_float, default=1.0, help="initial high-risk mass")
    urn.add_argument("--r0", type=_positive_float, default=1.0, help="initial low-risk mass")
    urn.add_argument("--k", type=_positive_float, default=1.0, help="mass added per decision")
    urn.add_argument("--T", type=int, required=True, dest="horizon",
                     help="assessments per path")
    urn.add_argument("--n", type=_positive_int, required=True, dest="paths", help="number of paths")

    parser = _Parser(prog="urnaudit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"urnaudit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("path", parents=[common, urn], help="simulate independent risk paths")

    limit = sub.add_parser("limit-check", parents=[common, urn],
                           help="KS test of path endpoints against the Beta limit law")
    limit.add_argument("--alpha", type=float, choices=(0.05, 0.01), default=0.01)
    limit.add_argument("--bins", type=_positive_int, default=50, help="histogram bins")

    for name, text in (("cohort", "run a cohort from a config"),
                       ("validate", "one-shot validation study on a cohort"),
                       ("amplify", "snapshot validity versus long-run disparity")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("config", help=f"config file or preset ({', '.join(preset_names())})")

    sub.add_parser("presets", help="list bundled preset configs")
    return parser


def _table(directory: Path, stem: str, fmt: str) -> Path:
    return directory / f"{stem}.{fmt}"


def _prepare(directory) -> Path:
    path = Path(directory)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc}") from None
    return path


def _flag_config(args, record_full_paths: bool) -> CohortConfig:
    if args.horizon < 1:
        raise UsageError(f"--T must be >= 1, got {args.horizon}")
    return CohortConfig(
        # a one-path run still simulates two; paths are independent streams
        population=max(args.paths, 2),
        horizon=args.horizon,
        params=UrnParameters(args.b0, args.r0, args.k),
        groups=(GroupSpec("all"),),
        master_seed=args.seed if args.seed is not None else 0,
        record_full_paths=record_full_paths,
    )


def _flag_echo(args) -> dict:
    keys = ("b0", "r0", "k", "horizon", "paths", "seed", "alpha", "bins")
    return {k: getattr(args, k) for k in keys if hasattr(args, k)}


def cmd_path(args) -> int:
    config = _flag_config(args, record_full_paths=True)
    out = _prepare(args.out or "out/path")
    fmt = args.format or "csv"
    result = run_cohort(config, threads=args.threads)
    trajectories = [result.trajectory(d) for d in range(args.paths)]
    table = records.write_paths(_table(out, "paths", fmt), trajectories)
    records.write_manifest(out, "path", config.master_seed, _flag_echo(args), [table.name])
    print(f"wrote {args.paths} paths x {args.horizon} steps to {table}")
    return EXIT_OK


def cmd_limit_check(args) -> int:
    if args.paths < 100:
        raise UsageError(f"limit-check needs --n >= 100, got {args.paths}")
    config = _flag_config(args, record_full_paths=False)
    out = _prepare(args.out or "out/limit-check")
    fmt = args.format or "csv"
    result = run_cohort(config, threads=args.threads)
    law = limit_distribution(config.params)
    fit = fit_limit_law(result.endpoints, config.params, args.alpha)
    mean, variance = beta_moments(law)
    outside = 1.0 - (beta_cdf(law, 0.8) - beta_cdf(law, 0.2))
    summary = {
        "limit_law": {"alpha": law.alpha, "beta": law.beta, "mean": mean, "variance": variance,
                      "mass_outside_0.2_0.8": outside},
        "endpoints": {
            "count": int(result.endpoints.size),
            "mean": float(np.mean(result.endpoints)),
            "variance": float(np.var(result.endpoints, ddof=1)),
            "fraction_outside_0.2_0.8": float(np.mean((result.endpoints <= 0.2) |
                                                      (result.endpoints >= 0.8))),
        },
        "fit": {**fit.as_dict(), "significance": args.alpha},
    }
    endpoints = records.write_endpoints(_table(out, "endpoints", fmt), result)
    histogram = records.write_histogram(_table(out, "histogram", fmt), result.endpoints,
                                        args.bins, law)
    fit_file = records.write_json(out / "fit.json", summary)
    records.write_manifest(out, "limit-check", config.master_seed, _flag_echo(args),
                           [endpoints.name, histogram.name, fit_file.name])
    verdict = "passed" if fit.passed else "FAILED"
    print(f"KS vs Beta({law.alpha:g}, {law.beta:g}): D = {fit.statistic:.5f}, "
          f"threshold = {fit.threshold:.5f} (alpha {args.alpha}), n = {fit.sample_size}: {verdict}")
    return EXIT_OK if fit.passed else EXIT_STATISTICAL


def _experiment(args) -> ExperimentConfig:
    experiment = load_config(args.config)
    if args.seed is not None:
        experiment = replace(experiment, cohort=replace(experiment.cohort, master_seed=args.seed))
    if args.format is not None:
        experiment = replace(experiment, output=replace(experiment.output, format=args.format))
    return experiment


def _out_dir(args, experiment: ExperimentConfig) -> Path:
    return _prepare(args.out or experiment.output.directory or f"out/{args.command}")


def _endpoint_summary(values: np.ndarray) -> dict:
    return {
        "count": int(values.size),
        "mean": float(np.mean(values)),
        "variance": float(np.var(values, ddof=1)) if values.size > 1 else 0.0,
        "min": float(np.min(values)),
        "max": float(np.max(values)),
        "fraction_outside_0.2_0.8": float(np.mean((values <= 0.2) | (values >= 0.8))),
    }


def cmd_cohort(args) -> int:
    experiment = _experiment(args)
    config = experiment.cohort
    out = _out_dir(args, experiment)
    fmt = experiment.output.format
    result = run_cohort(config, threads=args.threads)

    homogeneous = all(g.bias == 0.0 and g.initial_override is None for g in config.groups)
    law = limit_distribution(config.params) if homogeneous else None
    files = [records.write_endpoints(_table(out, "endpoints", fmt), result).name,
             records.write_histogram(_table(out, "histogram", fmt), result.endpoints, 50, law).name]
    if config.record_full_paths:
        files.append(records.write_trajectories(_table(out, "trajectories", fmt), result).name)
    summary = {
        "all": _endpoint_summary(result.endpoints),
        "groups": {name: _endpoint_summary(result.endpoints[result.members(name)])
                   for name in result.group_names if result.members(name).size},
    }
    if law is not None:
        mean, variance = beta_moments(law)
        summary["limit_law"] = {"alpha": law.alpha, "beta": law.beta, "mean": mean,
                                "variance": variance}
    files.append(records.write_json(out / "summary.json", summary).name)
    records.write_manifest(out, "cohort", config.master_seed, experiment.as_dict(), files)
    s = summary["all"]
    print(f"{config.population} defendants x {config.horizon} assessments -> {out}")
    print(f"endpoints: mean {s['mean']:.4f}, variance {s['variance']:.5f}, "
          f"outside (0.2, 0.8) {s['fraction_outside_0.2_0.8']:.3f}")
    return EXIT_OK


def _require_snapshot(experiment: ExperimentConfig) -> SnapshotSpec:
    spec = experiment.snapshot
    if spec is None:
        raise ConfigError("snapshot", "required section is missing")
    return spec


def _format_report(report: ValidationReport) -> List[str]:
    s = report.spec
    lines = [f"snapshot at t={s.time}, lookahead {s.horizon}, {report.population} defendants"]
    auc_text = "undefined" if report.auc is None else f"{report.auc:.4f}"
    lines.append(f"  AUC {auc_text}   calibration gap {report.calibration_gap:.4f}")
    lines.append(f"  statistical parity gap {report.statistical_parity_gap:.4f}   "
                 f"predictive parity gap {report.predictive_parity_gap:.4f}")
    lines.append("  bin            count    mean score  observed rate")
    for b in report.per_bin:
        if b.count:
            lines.append(f"  [{b.lower:.2f}, {b.upper:.2f})  {b.count:8d}  {b.mean_score:10.4f}"
                         f"  {b.observed_rate:13.4f}")
    for g in report.per_group:
        auc_text = "undefined" if g.auc is None else f"{g.auc:.4f}"
        lines.append(f"  group {g.name}: n={g.count}, above {s.threshold} = "
                     f"{g.fraction_above:.4f}, AUC {auc_text}")
    return lines


def _write_bins(path: Path, report: ValidationReport) -> Path:
    rows = [("all", b.lower, b.upper, b.count, b.mean_score, b.observed_rate, b.se)
            for b in report.per_bin]
    rows += [(g.name, b.lower, b.upper, b.count, b.mean_score, b.observed_rate, b.se)
             for g in report.per_group for b in g.bins]
    rows = [tuple("" if v is None else v for v in row) for row in rows]
    return records.write_table(path, ("group", "bin_lower", "bin_upper", "count", "mean_score",
                                      "observed_rate", "se"), rows)


def cmd_validate(args) -> int:
    experiment = _experiment(args)
    spec = _require_snapshot(experiment)
    config = experiment.cohort
    if not config.record_full_paths:
        raise ConfigError("cohort.record_full_paths", "full paths required for validate")
    try:
        spec.check_horizon(config.horizon)
    except ValueError as exc:
        raise ConfigError("snapshot.horizon", str(exc)) from None
    out = _out_dir(args, experiment)
    result = run_cohort(config, threads=args.threads)
    report = snapshot_validation(result, spec)
    files = [records.write_json(out / "report.json", report.as_dict()).name,
             _write_bins(_table(out, "bins", experiment.output.format), report).name]
    records.write_manifest(out, "validate", config.master_seed, experiment.as_dict(), files)
    print("\n".join(_format_report(report)))
    return EXIT_OK


def cmd_amplify(args) -> int:
    experiment = _experiment(args)
    spec = _require_snapshot(experiment)
    config = experiment.cohort
    if len(config.groups) < 2:
        raise ConfigError("groups", "amplify needs two or more groups")
    if not config.record_full_paths:
        raise ConfigError("cohort.record_full_paths",
                          "full paths required: amplify reads every time step")
    settings = experiment.amplify
    out = _out_dir(args, experiment)
    fmt = experiment.output.format
    result = run_cohort(config, threads=args.threads)

    power = None
    if settings.power_repetitions:
        if len(config.groups) != 2:
            raise ConfigError("amplify.power_repetitions", "one-shot power needs exactly two groups")
        study = replace(config, population=settings.power_population)
        power = one_shot_power(study, spec, settings.power_repetitions, settings.alpha,
                               threads=args.threads)
    bootstrap_seed = (settings.bootstrap_seed if settings.bootstrap_seed is not None
                      else config.master_seed)
    report = amplification_report(result, spec, settings.resamples, settings.confidence,
                                  bootstrap_seed, power)
    files = [
        records.write_disparity(_table(out, "disparity", fmt), report.curve).name,
        records.write_group_series(_table(out, "group_series", fmt), report.curve).name,
        records.write_json(out / "amplification.json", report.as_dict()).name,
    ]
    records.write_manifest(out, "amplify", config.master_seed, experiment.as_dict(), files)

    if report.snapshot is not None:
        print("\n".join(_format_report(report.snapshot)))
    for pair in report.pairs:
        print(f"{pair.group_b} - {pair.group_a}: gap {pair.snapshot_gap:+.4f} at t={spec.time}, "
              f"{pair.final_gap:+.4f} at t={config.horizon}; ratio {pair.ratio:.3f} "
              f"[{pair.ci_lower:.3f}, {pair.ci_upper:.3f}] at {pair.confidence:.0%}")
    if power is not None:
        print(f"one-shot detection rate at t={spec.time} with {settings.power_population} "
              f"defendants: {power:.3f} (alpha {settings.alpha}, "
              f"{settings.power_repetitions} studies)")
    return EXIT_OK


def cmd_presets(args) -> int:
    for name in preset_names():
        print(name)
    return EXIT_OK


COMMANDS = {
    "path": cmd_path,
    "limit-check": cmd_limit_check,
    "cohort": cmd_cohort,
    "validate": cmd_validate,
    "amplify": cmd_amplify,
    "presets": cmd_presets,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "threads", None) is None and args.command != "presets":
            args.threads = default_threads()
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"urnaudit {args.command}: config error: {exc}", file=sys.stderr)
    except (UsageError, ValueError) as exc:
        print(f"urnaudit {args.command}: error: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"urnaudit {args.command}: cannot write output: {exc}", file=sys.stderr)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
