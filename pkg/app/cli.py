"""
Command-Line Interface

    python -m app <command> [options]

Commands: weights, tune, screen, fit, simulate, report, export.
Every command writes its artifacts plus manifest.json into --output-dir.
Exit codes: 0 success, 1 input error, 2 solver failure.
"""

import argparse
import asyncio
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError
from scipy.stats import norm

from .config import get_settings
from .core.exceptions import BalancingError, InputError, ParameterError, handle_cli_exception
from .core.logging import bind_run_context, get_logger, setup_logging
from .jobs.bootstrap import bootstrap_ci
from .jobs.study_runner import run_study
from .models.balance import DualForm
from .models.dataset import CovariateBasis, Dataset
from .models.pipeline import Estimator, PipelineConfig, WeightingMethod
from .models.spline import ResponseConvention
from .models.study import StudyConfig, StudyReport
from .services.broadcast import fit_broadcasted
from .services.data_io import (
    read_dataset_csv,
    read_json,
    write_dataset_csv,
    write_frame,
    write_json,
    write_manifest,
)
from .services.parametric import fit_linear_effect, sandwich_variance
from .services.pipeline import compare_methods, run_weighting, screening_delta
from .services.scenarios import generate_application_like, generate_scenario
from .services.screening import select_subset

logger = get_logger(__name__)

CLI_METHODS = [m.value for m in WeightingMethod if m != WeightingMethod.ORACLE]
LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]


class ArgumentParser(argparse.ArgumentParser):
    """argparse that reports usage problems as InputError instead of exiting."""

    def error(self, message: str):
        raise InputError(f"{message} (see '{self.prog} --help')")


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _method_list(text: str) -> List[str]:
    methods = [v.strip() for v in text.split(",") if v.strip()]
    valid = {m.value for m in WeightingMethod}
    unknown = [m for m in methods if m not in valid]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown methods {unknown}; choose from {sorted(valid)}")
    return methods


# =============================================================================
# Configuration
# =============================================================================

def build_config(args: argparse.Namespace) -> PipelineConfig:
    """
    Sidecar JSON (--config) overridden by explicit flags, validated once.
    """
    document = read_json(args.config) if getattr(args, "config", None) else {}
    pipeline = dict(document.get("pipeline", {}))
    balance = dict(pipeline.get("balance", {}))
    basis = dict(pipeline.get("basis", {}))

    def put(target: dict, key: str, value):
        if value is not None:
            target[key] = value

    put(document, "data", getattr(args, "data", None))
    put(document, "p", getattr(args, "p", None))
    put(document, "q", getattr(args, "q", None))
    put(document, "output_dir", args.output_dir)
    put(document, "seed", args.seed)
    put(document, "estimator", getattr(args, "estimator", None))
    put(document, "bootstrap", getattr(args, "bootstrap", None))
    put(document, "level", getattr(args, "level", None))

    put(basis, "covariate_basis", getattr(args, "basis", None))
    put(pipeline, "method", getattr(args, "method", None))
    put(pipeline, "delta_grid", getattr(args, "delta_grid", None))
    put(pipeline, "break_factor", getattr(args, "break_factor", None))
    put(pipeline, "screening_delta", getattr(args, "screening_delta", None))
    if getattr(args, "screening", False):
        pipeline["screening"] = True
    delta = getattr(args, "delta", None)
    if delta is not None:
        balance["delta"] = delta
        pipeline["tune_delta"] = False
    put(balance, "dual_form", getattr(args, "dual_form", None))

    pipeline["balance"] = balance
    pipeline["basis"] = basis
    document["pipeline"] = pipeline

    broadcast = dict(document.get("broadcast", {}))
    put(broadcast, "rank", getattr(args, "rank", None))
    put(broadcast, "restarts", getattr(args, "restarts", None))
    put(broadcast, "response", getattr(args, "response", None))
    document["broadcast"] = broadcast
    return PipelineConfig.model_validate(document)


def load_dataset(config: PipelineConfig) -> Dataset:
    if not config.data:
        raise InputError("no input data; pass --data <file.csv>")
    return read_dataset_csv(config.data, config.p, config.q)


def _arguments(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "handler"}


def _finish(args: argparse.Namespace, output_dir: Path, files: List[Path], seed: Optional[int]) -> int:
    write_manifest(output_dir, args.command, _arguments(args), seed, files)
    logger.info("command_completed", command=args.command, output_dir=str(output_dir), files=len(files))
    return 0


# =============================================================================
# Commands
# =============================================================================

def cmd_weights(args: argparse.Namespace) -> int:
    config = build_config(args)
    dataset = load_dataset(config)
    output_dir = Path(config.output_dir)
    files: List[Path] = []

    if args.compare:
        rows = compare_methods(dataset, config.pipeline)
        frame = pd.DataFrame([row.model_dump(mode="json") for row in rows])
        files.append(write_frame(frame, output_dir / "comparison.csv"))
        print(frame.to_string(index=False))
        return _finish(args, output_dir, files, config.seed)

    outcome = run_weighting(dataset, config.pipeline)
    result, ms = outcome.result, outcome.moments
    document = result.summary()
    document.update({
        "n": ms.n,
        "k_effective": ms.k_effective,
        "dropped_columns": ms.dropped_columns,
        "weights": result.weights.tolist(),
        "theta": result.theta.tolist(),
    })
    if outcome.screening is not None:
        document["screening"] = outcome.screening.model_dump(mode="json")
    files.append(write_json(document, output_dir / "weights.json"))
    imbalance = pd.DataFrame({"column": ms.column_names, "imbalance": result.imbalance})
    files.append(write_frame(imbalance, output_dir / "imbalance.csv"))
    print(f"weim={result.weim:.6g} delta={result.delta_used:.6g} ess={result.effective_sample_size:.2f}")
    return _finish(args, output_dir, files, config.seed)


def cmd_tune(args: argparse.Namespace) -> int:
    config = build_config(args)
    dataset = load_dataset(config)
    pipeline = config.pipeline.model_copy(update={"method": WeightingMethod.WEBM, "tune_delta": True})
    tuning = run_weighting(dataset, pipeline).tuning
    output_dir = Path(config.output_dir)

    frame = pd.DataFrame([point.model_dump() for point in tuning.path])
    files = [
        write_frame(frame, output_dir / "delta_path.csv"),
        write_json(
            {
                "delta_star": tuning.delta_star,
                "at_upper_edge": tuning.at_upper_edge,
                "grid_extended": tuning.grid_extended,
                "minimum_weim": tuning.minimum_weim,
                "best": tuning.best.summary(),
            },
            output_dir / "tuning.json",
        ),
    ]
    print(f"delta_star={tuning.delta_star:.6g} weim={tuning.best.weim:.6g}")
    return _finish(args, output_dir, files, config.seed)


def cmd_screen(args: argparse.Namespace) -> int:
    config = build_config(args)
    dataset = load_dataset(config)
    delta = screening_delta(dataset, config.pipeline)
    result = select_subset(dataset, config.pipeline.balance.with_delta(delta), config.pipeline.break_factor)
    output_dir = Path(config.output_dir)

    steps = len(result.weim_path)
    frame = pd.DataFrame({
        "step": np.arange(1, steps + 1),
        "covariate": [f"x_{j + 1}" for j in result.ranking[:steps]],
        "bcor": [result.bcor_values[j] for j in result.ranking[:steps]],
        "weim": result.weim_path,
    })
    document = result.model_dump(mode="json")
    document["delta"] = delta
    files = [
        write_json(document, output_dir / "screening.json"),
        write_frame(frame, output_dir / "weim_path.csv"),
    ]
    selected = ", ".join(f"x_{j + 1}" for j in result.selected_indices)
    print(f"selected {result.selected_count} covariates: {selected}")
    return _finish(args, output_dir, files, config.seed)


def _interval_table(rows: List[dict]) -> pd.DataFrame:
    return pd.DataFrame(rows, columns=["name", "estimate", "lower", "upper"])


def cmd_fit(args: argparse.Namespace) -> int:
    config = build_config(args)
    dataset = load_dataset(config)
    if config.estimator == Estimator.BROADCASTED and config.bootstrap:
        raise ParameterError("bootstrap intervals are available for the linear estimator only")
    output_dir = Path(config.output_dir)
    weights = run_weighting(dataset, config.pipeline).result.weights
    files: List[Path] = []

    if config.estimator == Estimator.BROADCASTED:
        opts = config.broadcast.model_copy(update={"seed": config.seed})
        model = fit_broadcasted(dataset, weights, opts=opts)
        files.append(write_json(model.to_document(), output_dir / "model.json"))
        print(f"objective={model.objective_trace[-1]:.6g} cycles={model.cycles}")
        return _finish(args, output_dir, files, config.seed)

    model = fit_linear_effect(dataset, weights)
    document = {
        "estimator": "linear",
        "column_names": model.column_names,
        "coefficients": model.coefficients.tolist(),
    }
    if config.bootstrap:
        summary = asyncio.run(bootstrap_ci(dataset, config.pipeline, config.bootstrap, config.level, config.seed))
        table = _interval_table(summary.table_rows())
        document["bootstrap"] = {"replicates": summary.replicates, "failed": summary.failed, "level": summary.level}
    else:
        variance = sandwich_variance(model, dataset, weights)
        z = norm.ppf(0.5 + config.level / 2.0)
        estimates = model.coefficients
        table = _interval_table([
            {"name": name, "estimate": est, "lower": est - z * se, "upper": est + z * se}
            for name, est, se in zip(model.column_names, estimates, variance.standard_errors)
        ])
        document["standard_errors"] = variance.standard_errors.tolist()
    document["level"] = config.level

    files.append(write_json(document, output_dir / "model.json"))
    files.append(write_frame(table, output_dir / "intervals.csv"))
    print(table.to_string(index=False))
    return _finish(args, output_dir, files, config.seed)


def cmd_simulate(args: argparse.Namespace) -> int:
    output_dir = Path(args.output_dir or get_settings().output_dir)
    document = {
        "scenarios": args.scenario,
        "sample_sizes": args.n,
        "replicates": args.reps,
        "master_seed": args.seed if args.seed is not None else 0,
    }
    if args.methods:
        document["methods"] = args.methods
    if args.estimator:
        document["estimator"] = args.estimator
    if args.delta_grid:
        document["delta_grid"] = args.delta_grid
    config = StudyConfig.model_validate(document)

    report = asyncio.run(run_study(config))
    table = report.render_table()
    files = [write_json(report.model_dump(mode="json"), output_dir / "study.json")]
    path = output_dir / "study.txt"
    path.write_text(table, encoding="utf-8")
    files.append(path)
    print(table, end="")
    return _finish(args, output_dir, files, config.master_seed)


def cmd_report(args: argparse.Namespace) -> int:
    report = StudyReport.model_validate(read_json(args.input))
    table = report.render_table()
    output_dir = Path(args.output_dir or get_settings().output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    path = output_dir / "study.txt"
    path.write_text(table, encoding="utf-8")
    print(table, end="")
    return _finish(args, output_dir, [path], report.config.master_seed)


def cmd_export(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else 0
    if args.scenario == "application":
        dataset, truth = generate_application_like(args.n or 103, seed)
    else:
        try:
            scenario_id = int(args.scenario)
        except ValueError:
            raise InputError(f"--scenario must be 1..6 or 'application', got {args.scenario!r}")
        if scenario_id not in range(1, 7):
            raise InputError(f"--scenario must be 1..6 or 'application', got {scenario_id}")
        dataset, truth = generate_scenario(scenario_id, args.n or 500, seed)

    output_dir = Path(args.output_dir or get_settings().output_dir)
    path = Path(args.out) if args.out else output_dir / f"scenario_{args.scenario}_n{dataset.n}_seed{seed}.csv"
    files = [
        write_dataset_csv(dataset, path),
        write_json(
            {"scenario_id": truth.scenario_id, "p": dataset.p, "q": dataset.q, "true_B": truth.true_B.tolist()},
            output_dir / "truth.json",
        ),
    ]
    print(str(path))
    return _finish(args, output_dir, files, seed)


# =============================================================================
# Parser
# =============================================================================

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--output-dir", dest="output_dir", help="artifact directory (default: OUTPUT_DIR setting)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--log-level", dest="log_level", choices=LOG_LEVELS)


def _add_data(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", help="CSV with columns y, t_1_1 ... t_p_q, x_1 ... x_L")
    parser.add_argument("--p", type=int, help="treatment rows (inferred from the header if omitted)")
    parser.add_argument("--q", type=int, help="treatment columns (inferred from the header if omitted)")
    parser.add_argument("--config", help="sidecar JSON with PipelineConfig fields; flags override it")
    parser.add_argument("--basis", choices=[b.value for b in CovariateBasis if b != CovariateBasis.CUSTOM_COLUMNS])
    parser.add_argument("--screening", action="store_true", help="select covariates by ball-correlation screening")
    parser.add_argument("--screening-delta", dest="screening_delta", type=float)
    parser.add_argument("--break-factor", dest="break_factor", type=float)
    parser.add_argument("--delta-grid", dest="delta_grid", type=_float_list)
    parser.add_argument("--dual-form", dest="dual_form", choices=[f.value for f in DualForm])


def build_parser() -> argparse.ArgumentParser:
    parser = ArgumentParser(prog="webm", description="Covariate balancing for matrix-valued treatments")
    commands = parser.add_subparsers(dest="command", parser_class=ArgumentParser)
    commands.required = True

    weights = commands.add_parser("weights", help="solve balancing weights")
    _add_common(weights)
    _add_data(weights)
    weights.add_argument("--method", choices=CLI_METHODS)
    weights.add_argument("--delta", type=float, help="fixed WEIM threshold (disables tuning)")
    weights.add_argument("--compare", action="store_true", help="compare unweighted, eb, mdabw and webm")
    weights.set_defaults(handler=cmd_weights)

    tune = commands.add_parser("tune", help="select delta on a grid")
    _add_common(tune)
    _add_data(tune)
    tune.set_defaults(handler=cmd_tune)

    screen = commands.add_parser("screen", help="ball-correlation covariate screening")
    _add_common(screen)
    _add_data(screen)
    screen.set_defaults(handler=cmd_screen)

    fit = commands.add_parser("fit", help="estimate the dose-response function")
    _add_common(fit)
    _add_data(fit)
    fit.add_argument("--method", choices=CLI_METHODS)
    fit.add_argument("--delta", type=float)
    fit.add_argument("--estimator", choices=[e.value for e in Estimator])
    fit.add_argument("--bootstrap", type=int, help="bootstrap replicates (0 uses sandwich intervals)")
    fit.add_argument("--level", type=float)
    fit.add_argument("--rank", type=int)
    fit.add_argument("--restarts", type=int)
    fit.add_argument("--response", choices=[r.value for r in ResponseConvention])
    fit.set_defaults(handler=cmd_fit)

    simulate = commands.add_parser("simulate", help="run a replicated simulation study")
    _add_common(simulate)
    simulate.add_argument("--scenario", type=_int_list, required=True)
    simulate.add_argument("--n", type=_int_list, required=True)
    simulate.add_argument("--reps", type=int, default=100)
    simulate.add_argument("--methods", type=_method_list)
    simulate.add_argument("--estimator", choices=[e.value for e in Estimator])
    simulate.add_argument("--delta-grid", dest="delta_grid", type=_float_list)
    simulate.set_defaults(handler=cmd_simulate)

    report = commands.add_parser("report", help="render a saved study report")
    _add_common(report)
    report.add_argument("--input", required=True, help="study.json written by simulate")
    report.set_defaults(handler=cmd_report)

    export = commands.add_parser("export", help="write a generated scenario as CSV")
    _add_common(export)
    export.add_argument("--scenario", required=True, help="1..6 or 'application'")
    export.add_argument("--n", type=int)
    export.add_argument("--out", help="CSV path (default: inside --output-dir)")
    export.set_defaults(handler=cmd_export)

    return parser


def _validation_message(exc: ValidationError) -> str:
    error = exc.errors()[0]
    location = ".".join(str(part) for part in error["loc"]) or "config"
    return f"invalid {location}: {error['msg']}"


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--log-level", dest="log_level")
    known, _ = pre.parse_known_args(argv)
    setup_logging(known.log_level if known.log_level in LOG_LEVELS else None)

    try:
        args = build_parser().parse_args(argv)
        bind_run_context(command=args.command, seed=args.seed)
        return args.handler(args)
    except BalancingError as exc:
        return handle_cli_exception(exc)
    except ValidationError as exc:
        return handle_cli_exception(InputError(_validation_message(exc)))
