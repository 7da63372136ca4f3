"""Command-line front end: configuration, run orchestration, artifact export.

The ``run`` command executes the adaptive loop on a built-in benchmark or a
problem described by a JSON file and writes the result artifacts (CSV
tables, a JSON summary, and a static SVG plot of the front) into the output
directory.  Repetition counts and comma-separated accuracy-target lists turn
one invocation into a sweep with per-run subdirectories plus a combined
sweep table.  ``bench reference`` regenerates a brute-force reference
artifact.

Exit codes: 0 on success (including flagged non-convergence), 2 on
configuration errors, 3 on runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import jsonschema
import numpy as np

from . import adaptive, bench
from .adaptive import AdaptiveConfig, RunResult
from .metrics import Front2D, delta_hv
from .problem import ObjectiveModel, ProblemSpec, problem_from_config

OUTPUT_ENV_VAR = "QMORO_OUTPUT_DIR"

_CONFIG_KEYS = (
    "threshold_schedule", "enrichment_size", "n_samples", "initial_multiplier",
    "population", "generation_step", "generation_cap", "max_cycles",
    "outer_surrogate", "outer_initial", "outer_step", "outer_tolerance",
    "outer_restarts", "alpha_design", "env_truncation", "kriging_restarts",
    "threads", "crn_seed",
)


class ConfigError(Exception):
    """Raised for any invalid configuration; mapped to exit code 2."""


def _schema(name: str) -> dict:
    path = resources.files("qmoro").joinpath("schemas", name)
    return json.loads(path.read_text(encoding="utf-8"))


def _format_float(value: float) -> str:
    """Shortest decimal that round-trips the exact binary value."""
    return repr(float(value))


def _load_run_config(path: str) -> dict:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(payload, _schema("run_config.schema.json"))
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid run config: {exc.message}") from exc
    return payload


def _resolve_problem(reference: str) -> tuple[str, ProblemSpec, ObjectiveModel]:
    """A built-in benchmark name, or a path to a problem JSON file."""
    if reference in bench.BENCHMARKS:
        problem = bench.get_benchmark(reference)
        return problem.name, problem.spec, problem.model
    path = Path(reference)
    if not path.exists():
        raise ConfigError(
            f"unknown problem {reference!r}: not a built-in benchmark "
            f"({', '.join(sorted(bench.BENCHMARKS))}) and no such file"
        )
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
        spec, model = problem_from_config(payload)
    except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid problem config {reference!r}: {exc}") from exc
    return spec.name, spec, model


def _parse_eta_bars(text: str) -> list[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"invalid --eta-bar list {text!r}") from exc
    if not values or any(v <= 0 for v in values):
        raise ConfigError("--eta-bar values must be positive numbers")
    return values


def _build_adaptive_config(settings: dict, eta_bar: float, seed: int) -> AdaptiveConfig:
    kwargs = {key: settings[key] for key in _CONFIG_KEYS if key in settings}
    try:
        return AdaptiveConfig(eta_target=eta_bar, seed=seed, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# --- artifact writers ------------------------------------------------------


def _design_header(spec: ProblemSpec) -> list[str]:
    return [v.name for v in spec.continuous] + [v.name for v in spec.categorical]


def _design_row(spec: ProblemSpec, con: np.ndarray, cat: np.ndarray) -> list[str]:
    labels = spec.level_labels(cat)
    return [_format_float(v) for v in con] + list(labels)


def write_front_csv(path: Path, spec: ProblemSpec, result: RunResult) -> None:
    header = [f"q{k + 1}" for k in range(spec.n_objectives)] + _design_header(spec)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for i in range(result.front_con.shape[0]):
            row = [_format_float(v) for v in result.front_objectives[i]]
            row += _design_row(spec, result.front_con[i], result.front_cat[i])
            writer.writerow(row)


def write_set_csv(path: Path, spec: ProblemSpec, result: RunResult) -> None:
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(_design_header(spec))
        for i in range(result.front_con.shape[0]):
            writer.writerow(
                _design_row(spec, result.front_con[i], result.front_cat[i])
            )


def write_history_csv(path: Path, result: RunResult) -> None:
    if not result.history:
        return
    fieldnames = list(result.history[0].keys())
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in result.history:
            writer.writerow({
                key: _format_float(v) if isinstance(v, float) else v
                for key, v in row.items()
            })


def _reference_front(problem_name: str) -> Front2D | None:
    try:
        return bench.load_reference(problem_name).front
    except (FileNotFoundError, ValueError):
        return None


def _delta_hv_or_none(result: RunResult, reference: Front2D | None) -> float | None:
    if reference is None or result.front_objectives.shape[1] != 2:
        return None
    return delta_hv(Front2D.from_points(result.front_objectives), reference)


def write_summary(
    path: Path,
    problem_name: str,
    config: AdaptiveConfig,
    result: RunResult,
    delta: float | None,
) -> dict:
    summary = {
        "problem": problem_name,
        "seed": config.seed,
        "eta_bar": config.eta_target,
        "converged": result.converged,
        "cycles": result.cycles,
        "evaluations": result.evaluations,
        "front_size": int(result.front_con.shape[0]),
        "delta_hv": delta,
        "config": dataclasses.asdict(config),
    }
    jsonschema.validate(summary, _schema("summary.schema.json"))
    path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return summary


def write_front_plot(
    path: Path, result: RunResult, reference: Front2D | None
) -> None:
    if result.front_objectives.shape[1] != 2:
        return
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    figure, axes = plt.subplots(figsize=(6.0, 4.5))
    if reference is not None:
        axes.plot(
            reference.points[:, 0], reference.points[:, 1],
            color="0.6", marker=".", markersize=3, linewidth=0.8,
            label="reference front",
        )
    axes.scatter(
        result.front_objectives[:, 0], result.front_objectives[:, 1],
        s=18, color="tab:blue", zorder=3, label="returned front",
    )
    axes.set_xlabel("objective 1 quantile")
    axes.set_ylabel("objective 2 quantile")
    axes.legend(loc="best")
    axes.grid(True, alpha=0.3)
    figure.tight_layout()
    figure.savefig(path, format="svg")
    plt.close(figure)


def _write_run_artifacts(
    out_dir: Path,
    problem_name: str,
    spec: ProblemSpec,
    config: AdaptiveConfig,
    result: RunResult,
) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    reference = _reference_front(problem_name)
    delta = _delta_hv_or_none(result, reference)
    write_front_csv(out_dir / "pareto_front.csv", spec, result)
    write_set_csv(out_dir / "pareto_set.csv", spec, result)
    write_history_csv(out_dir / "history.csv", result)
    summary = write_summary(
        out_dir / "summary.json", problem_name, config, result, delta
    )
    write_front_plot(out_dir / "front.svg", result, reference)
    return summary


# --- commands --------------------------------------------------------------


def _output_dir(explicit: str | None) -> Path:
    if explicit:
        return Path(explicit)
    return Path(os.environ.get(OUTPUT_ENV_VAR, "qmoro-output"))


def _run_command(args: argparse.Namespace) -> int:
    settings: dict[str, Any] = {}
    if args.config:
        settings.update(_load_run_config(args.config))
    for key in _CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    problem_ref = args.problem or settings.get("problem")
    if not problem_ref:
        raise ConfigError("no problem given (positional argument or config key)")
    problem_name, spec, model = _resolve_problem(str(problem_ref))

    if args.eta_bar is not None:
        eta_bars = _parse_eta_bars(args.eta_bar)
    else:
        raw = settings.get("eta_bar", 0.03)
        eta_bars = [float(v) for v in raw] if isinstance(raw, list) else [float(raw)]
    seed = args.seed if args.seed is not None else int(settings.get("seed", 0))
    reps = args.reps if args.reps is not None else int(settings.get("reps", 1))
    if reps < 1:
        raise ConfigError("--reps must be >= 1")
    out_dir = _output_dir(args.output or settings.get("output"))

    if args.resume is not None:
        if reps != 1 or len(eta_bars) != 1:
            raise ConfigError("--resume applies to a single run, not a sweep")
        config = _build_adaptive_config(settings, eta_bars[0], seed)
        out_dir.mkdir(parents=True, exist_ok=True)
        try:
            result = adaptive.run(
                spec, model, config,
                checkpoint_path=out_dir / "checkpoint.json",
                resume_from=args.resume,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        summary = _write_run_artifacts(out_dir, problem_name, spec, config, result)
        print(_summary_line(summary))
        return 0

    if reps == 1 and len(eta_bars) == 1:
        config = _build_adaptive_config(settings, eta_bars[0], seed)
        out_dir.mkdir(parents=True, exist_ok=True)
        result = adaptive.run(
            spec, model, config, checkpoint_path=out_dir / "checkpoint.json"
        )
        summary = _write_run_artifacts(out_dir, problem_name, spec, config, result)
        print(_summary_line(summary))
        return 0

    return _sweep(problem_name, spec, model, settings, eta_bars, seed, reps, out_dir)


def _summary_line(summary: dict) -> str:
    delta = summary["delta_hv"]
    delta_text = "n/a" if delta is None else f"{delta:.4f}"
    status = "converged" if summary["converged"] else "NOT converged"
    return (
        f"{summary['problem']}: {status} in {summary['cycles']} cycles, "
        f"{summary['evaluations']} evaluations, front size "
        f"{summary['front_size']}, delta_hv {delta_text}"
    )


def _sweep(
    problem_name: str,
    spec: ProblemSpec,
    model: ObjectiveModel,
    settings: dict,
    eta_bars: list[float],
    seed: int,
    reps: int,
    out_dir: Path,
) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for eta_bar in eta_bars:
        for rep in range(reps):
            config = _build_adaptive_config(settings, eta_bar, seed + rep)
            run_dir = out_dir / f"eta-{eta_bar:g}-rep-{rep}"
            run_dir.mkdir(parents=True, exist_ok=True)
            result = adaptive.run(
                spec, model, config, checkpoint_path=run_dir / "checkpoint.json"
            )
            summary = _write_run_artifacts(
                run_dir, problem_name, spec, config, result
            )
            rows.append({
                "eta_bar": _format_float(eta_bar),
                "rep": rep,
                "seed": config.seed,
                "cycles": result.cycles,
                "evaluations": result.evaluations,
                "converged": result.converged,
                "front_size": summary["front_size"],
                "delta_hv": "" if summary["delta_hv"] is None
                else _format_float(summary["delta_hv"]),
            })
            print(
                f"eta_bar={eta_bar:g} rep={rep}: "
                f"{'converged' if result.converged else 'NOT converged'} "
                f"cycles={result.cycles} evaluations={result.evaluations}"
            )
    sweep_path = out_dir / "sweep.csv"
    with sweep_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(
            handle, fieldnames=list(rows[0].keys()), lineterminator="\n"
        )
        writer.writeheader()
        writer.writerows(rows)
    print(f"sweep table written to {sweep_path}")
    return 0


def _bench_reference_command(args: argparse.Namespace) -> int:
    if args.name not in bench.BENCHMARKS:
        raise ConfigError(
            f"unknown benchmark {args.name!r} "
            f"(choose from {', '.join(sorted(bench.BENCHMARKS))})"
        )
    problem = bench.get_benchmark(args.name)
    artifact = bench.reference_solve(problem, seed=args.seed)
    out_dir = _output_dir(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{args.name}.json"
    artifact.save(path)
    print(
        f"reference for {args.name}: front size "
        f"{artifact.objectives.shape[0]}, {artifact.evaluations} evaluations, "
        f"written to {path}"
    )
    return 0


# --- argument parsing ------------------------------------------------------


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON run-configuration file")
    parser.add_argument(
        "--eta-bar", dest="eta_bar",
        help="accuracy target; a comma-separated list starts a sweep",
    )
    parser.add_argument("--seed", type=int, help="base seed (rep r uses seed+r)")
    parser.add_argument("--reps", type=int, help="repetitions per accuracy target")
    parser.add_argument("--output", help=f"output directory (default ${OUTPUT_ENV_VAR})")
    parser.add_argument("--resume", help="checkpoint file to continue from")
    parser.add_argument("--threads", type=int, help="worker threads for evaluations")
    parser.add_argument("--crn-seed", dest="crn_seed", type=int,
                        help="seed of the frozen Monte Carlo draw (default 0)")
    parser.add_argument("--samples", dest="n_samples", type=int,
                        help="Monte Carlo samples per quantile")
    parser.add_argument("--population", type=int, help="optimizer population size")
    parser.add_argument("--enrichment", dest="enrichment_size", type=int,
                        help="true-model evaluations added per cycle")
    parser.add_argument("--max-cycles", dest="max_cycles", type=int)
    parser.add_argument("--initial-multiplier", dest="initial_multiplier", type=int)
    parser.add_argument("--generation-step", dest="generation_step", type=int)
    parser.add_argument("--generation-cap", dest="generation_cap", type=int)
    parser.add_argument("--kriging-restarts", dest="kriging_restarts", type=int)
    parser.add_argument("--alpha-design", dest="alpha_design", type=float)
    parser.add_argument("--env-truncation", dest="env_truncation", type=float)
    parser.add_argument(
        "--threshold-schedule", dest="threshold_schedule",
        action=argparse.BooleanOptionalAction, default=None,
        help="loosen the accuracy threshold during early cycles",
    )
    parser.add_argument(
        "--outer-surrogate", dest="outer_surrogate",
        action=argparse.BooleanOptionalAction, default=None,
        help="accelerate the optimizer with design-space quantile surrogates",
    )
    parser.add_argument("--outer-initial", dest="outer_initial", type=int)
    parser.add_argument("--outer-step", dest="outer_step", type=int)
    parser.add_argument("--outer-tolerance", dest="outer_tolerance", type=float)
    parser.add_argument("--outer-restarts", dest="outer_restarts", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qmoro",
        description="Quantile-robust multi-objective optimization with "
        "adaptively enriched Kriging surrogates.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run_parser = commands.add_parser(
        "run", help="run the adaptive loop on a benchmark or problem config"
    )
    run_parser.add_argument(
        "problem", nargs="?",
        help="built-in benchmark name or path to a problem JSON file",
    )
    _add_run_options(run_parser)
    run_parser.set_defaults(handler=_run_command)

    bench_parser = commands.add_parser("bench", help="benchmark utilities")
    bench_commands = bench_parser.add_subparsers(dest="bench_command", required=True)

    bench_run = bench_commands.add_parser(
        "run", help="run the adaptive loop on a built-in benchmark"
    )
    bench_run.add_argument("problem", choices=sorted(bench.BENCHMARKS))
    _add_run_options(bench_run)
    bench_run.set_defaults(handler=_run_command)

    bench_ref = bench_commands.add_parser(
        "reference", help="regenerate a brute-force reference artifact"
    )
    bench_ref.add_argument("name", choices=sorted(bench.BENCHMARKS))
    bench_ref.add_argument("--seed", type=int, default=None,
                           help="override the documented reference seed")
    bench_ref.add_argument("--output", help="output directory")
    bench_ref.set_defaults(handler=_bench_reference_command)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - boundary of the process
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
