"""Command line entry point: ``qutrace gen|plan|run|report``."""

from __future__ import annotations

import json
import logging
import os
import sys

import click

from .bench import ConfigError, ExperimentConfig, Report, chunk_subsets, emit_plotdata, emit_table, run_experiment
from .benchmarks import BenchmarkError, gen_benchmark
from .planner import PlanError, budget, plan_subset

EXIT_VALIDATION = 2
EXIT_PARTIAL = 3


def _load_config(path: str, seed: int | None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    cfg = ExperimentConfig.from_json(text, os.path.dirname(os.path.abspath(path)))
    if seed is not None:
        cfg.seed = seed
    return cfg


def _write(out: str | None, name: str, text: str) -> None:
    if out is None:
        click.echo(text, nl=not text.endswith("\n"))
        return
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, name), "w") as fh:
        fh.write(text)


def _fail(msg: str) -> None:
    click.echo(f"error: {msg}", err=True)
    sys.exit(EXIT_VALIDATION)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Qubit-subset state tracing with virtual Pauli checks."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("benchmark")
@click.option("--params", default="{}", help="JSON object of generator parameters.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Directory for circuit.json.")
def gen(benchmark: str, params: str, out: str | None) -> None:
    """Generate a benchmark circuit as JSON."""
    try:
        c = gen_benchmark(benchmark, json.loads(params))
    except (BenchmarkError, json.JSONDecodeError) as exc:
        _fail(str(exc))
    _write(out, "circuit.json", c.to_json(indent=1) + "\n")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Experiment config JSON.")
@click.option("--subset", default=None, help="Comma-separated qubits (default: every configured subset).")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None)
def plan(config_path: str, subset: str | None, seed: int | None, out: str | None) -> None:
    """Print cut points, segments, bases and budget for each subset."""
    try:
        cfg = _load_config(config_path, seed)
        c = cfg.circuit()
        if subset:
            subsets = [tuple(int(q) for q in subset.split(","))]
        else:
            subsets = chunk_subsets(c.measured, cfg.subset_size)
        plans = [plan_subset(c, sub, cfg.layers_to_check) for sub in subsets]
        budget(plans, cfg.shots)
    except (ConfigError, PlanError, ValueError) as exc:
        _fail(str(exc))
    doc = {"plans": [p.to_dict() for p in plans]}
    _write(out, "plan.json", json.dumps(doc, sort_keys=True, indent=1) + "\n")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Experiment config JSON.")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Directory for report.json and CSVs.")
@click.option("--backend", type=click.Choice(["exact", "sampler"]), default=None)
@click.option("--jobs", type=int, default=None, help="Worker processes (QUTRACE_JOBS overrides).")
def run(config_path: str, seed: int | None, out: str | None, backend: str | None, jobs: int | None) -> None:
    """Run an experiment and write the report."""
    try:
        cfg = _load_config(config_path, seed)
    except ConfigError as exc:
        _fail(str(exc))
    if backend:
        cfg.backend = backend
    try:
        report = run_experiment(cfg, jobs)
    except ConfigError as exc:
        _fail(str(exc))
    if out is None:
        click.echo(report.to_json())
    else:
        _write(out, "report.json", report.to_json() + "\n")
        _write(out, "plotdata.csv", emit_plotdata(report))
        _write(out, "table.csv", emit_table(report))
    if report.failures:
        sys.exit(EXIT_PARTIAL)


@main.command()
@click.argument("report_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["table", "plot"]), default="table")
@click.option("--out", type=click.Path(file_okay=False), default=None)
def report(report_path: str, fmt: str, out: str | None) -> None:
    """Re-emit CSV from a saved report.json."""
    try:
        with open(report_path) as fh:
            d = json.load(fh)
        rep = Report(d["name"], d["rows"], d.get("sweep_param"), d.get("failures", []))
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        _fail(f"invalid report: {exc}")
    text = emit_table(rep) if fmt == "table" else emit_plotdata(rep)
    _write(out, f"{fmt}.csv", text)


if __name__ == "__main__":
    main()
