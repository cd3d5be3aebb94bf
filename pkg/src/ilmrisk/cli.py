"""Command-line entry point: ``ilmrisk <subcommand> ...``.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
from importlib import metadata
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io
from . import pipeline as pl
from .config import ConfigError, load_config, parse_scenario
from .ilm import DegenerateParametersError
from .risk import infection_labels

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _write_manifest(out: Path, args, config, subcommand: str, inputs: dict, outputs: list) -> None:
    manifest = {
        "subcommand": subcommand,
        "seed": args.seed,
        "config_sha256": config.digest(),
        "config": config.values,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": sorted(Path(p).name for p in outputs),
        "version": _version(),
    }
    io.write_json(out / "manifest.json", manifest)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sibling(given: Optional[str], anchor: str, name: str) -> Path:
    return Path(given) if given else Path(anchor).parent / name


def _require(*paths) -> None:
    for p in paths:
        if not Path(p).is_file():
            raise FileNotFoundError(f"input file not found: {p}")


def _read_run(args):
    population = _sibling(args.population, args.series, "population.csv")
    states = _sibling(args.states, args.series, "states.csv")
    _require(args.series, args.contacts, population, states)
    run = io.read_run(args.series, args.contacts, population, states)
    return run, {"series": args.series, "contacts": args.contacts, "population": population, "states": states}


def cmd_simulate(args, config) -> None:
    out = _out_dir(args.out)
    output = pl.simulate(config, args.seed)
    paths = io.write_run(out, output)
    _write_manifest(out, args, config, "simulate", {}, list(paths.values()))


def cmd_fit(args, config) -> None:
    run, inputs = _read_run(args)
    out = _out_dir(args.out)
    outcome = pl.fit(run, config, args.seed, threads=args.threads)
    io.write_json(out / "fit.json", outcome.as_dict())
    _write_manifest(out, args, config, "fit", inputs, [out / "fit.json"])


def _risk_params(args, config):
    fit_result = None
    if args.fit:
        _require(args.fit)
        fit_result = io.read_json(args.fit)
    elif config["risk"]["params_source"] != "truth":
        raise UsageError(f"--fit is required when risk.params_source is {config['risk']['params_source']!r}")
    return pl.risk_params(config, args.seed, fit_result)


def cmd_score(args, config) -> None:
    run, inputs = _read_run(args)
    params = _risk_params(args, config)
    if args.fit:
        inputs["fit"] = args.fit
    out = _out_dir(args.out)
    table = pl.score(run, params, config, args.seed)
    io.write_risk(out / "risk.csv", table.ids, table.days, table.r_s, table.window_prob, table.score, table.predicted)
    info = {
        "params": params.as_dict(),
        "threshold": table.threshold,
        "records": config["risk"]["records"],
    }
    io.write_json(out / "score.json", info)
    _write_manifest(out, args, config, "score", inputs, [out / "risk.csv", out / "score.json"])


def cmd_intervene(args, config) -> None:
    names = args.scenarios.split(",") if args.scenarios else config["intervention"]["scenarios"]
    try:
        scenarios = [(name, *parse_scenario(name)) for name in names]
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    if len(set(names)) != len(names):
        raise UsageError("scenario names must be unique")
    needs_risk = any(kind != "none" for _, kind, _ in scenarios)
    params = _risk_params(args, config) if needs_risk else None
    out = _out_dir(args.out)
    outputs, report, threshold = pl.intervene(config, params, args.seed, scenarios)
    written = []
    for name, output in outputs.items():
        path = out / f"series_{name.replace(':', '-')}.csv"
        io.write_series(path, output)
        written.append(path)
    io.write_json(out / "peaks.json", {**report.as_dict(), "threshold": threshold})
    written.append(out / "peaks.json")
    inputs = {"fit": args.fit} if args.fit and needs_risk else {}
    _write_manifest(out, args, config, "intervene", inputs, written)


def _labels_for(risk: dict, labels_path: Path, window: int) -> np.ndarray:
    with open(labels_path, encoding="utf-8") as fh:
        header = fh.readline().strip()
    if header == ",".join(io.STATES_HEADER):
        states = io.read_states(labels_path)
        need = int(risk["day"].max()) + 2 if risk["day"].size else 1
        if len(states) < need:
            # no state changes after the last recorded day
            states = np.concatenate([states, np.repeat(states[-1:], need - len(states), axis=0)])
        grid = infection_labels(states, window)
        return grid[risk["day"], risk["id"]].astype(np.int64)
    table = io.read_labels(labels_path)
    try:
        return np.array([table[(i, t)] for i, t in zip(risk["id"].tolist(), risk["day"].tolist())], dtype=np.int64)
    except KeyError as exc:
        raise io.FormatError(f"{labels_path}: no label for (id, day) {exc.args[0]}") from None


def cmd_evaluate(args, config) -> None:
    _require(args.risk, args.labels)
    risk = io.read_risk(args.risk)
    labels = _labels_for(risk, Path(args.labels), config["risk"]["window"])
    keep = labels >= 0
    if config["risk"]["records"] == "contacted":
        keep &= risk["window_prob"] > 0
    out = _out_dir(args.out)
    report = pl.evaluate_scores(risk["score"][keep], labels[keep], risk["predicted"][keep], config, args.seed)
    io.write_json(out / "eval.json", report.as_dict())
    io.write_roc(out / "roc.csv", report.roc_points)
    _write_manifest(
        out, args, config, "evaluate", {"risk": args.risk, "labels": args.labels}, [out / "eval.json", out / "roc.csv"]
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ilmrisk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, threads=False):
        p.add_argument("--config", help="YAML configuration file (defaults are used when omitted)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--out", required=True, help="output directory")
        if threads:
            p.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")

    def run_inputs(p):
        p.add_argument("--series", required=True)
        p.add_argument("--contacts", required=True)
        p.add_argument("--population", help="defaults to population.csv next to --series")
        p.add_argument("--states", help="defaults to states.csv next to --series")

    p = sub.add_parser("simulate", help="simulate an outbreak and write its CSV files")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the population model to a simulated run")
    run_inputs(p)
    common(p, threads=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("score", help="score every (agent, day) of a run")
    run_inputs(p)
    p.add_argument("--fit", help="fit.json produced by the fit subcommand")
    common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("intervene", help="compare quarantine scenarios on a shared seed")
    p.add_argument("--fit", help="fit.json produced by the fit subcommand")
    p.add_argument("--scenarios", help="comma-separated: none, delayed:<days>, instant")
    common(p)
    p.set_defaults(func=cmd_intervene)

    p = sub.add_parser("evaluate", help="classification metrics of a risk CSV")
    p.add_argument("--risk", required=True)
    p.add_argument("--labels", required=True, help="states CSV of the run, or a CSV with id,day,label")
    common(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        config = load_config(args.config, args.overrides)
        args.func(args, config)
    except UsageError as exc:
        parser.error(str(exc))
    except (ConfigError, io.FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (pl.NumericalFailure, DegenerateParametersError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
