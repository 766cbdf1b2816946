# cli.py
# Command-line front end: simulations and experiments, fits on CSV data, and the
# price-series ingest that turns monthly closes into curve/response tables.

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, replace
from datetime import datetime
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import requests

from .aggregate import aggregate, build_dictionary
from .config import SCHEMA_VERSION, RunConfig, config_hash, load_config
from .errors import ArgumentError, ConfigError, CsvFormatError, FLTransferError, NumericalError
from .fda import Curve, TaskDataset, get_csv_rows, read_tasks, write_tasks
from .flr import evaluation_grid, fit_oflr, resolve_lambda
from .risk import (ExperimentResult, mean_and_se, relative_excess_risk, run_heatmap_experiment, run_mixture_experiment,
                   run_rate_experiment, run_replications)
from .simgen import export_scenario, generate_scenario
from .transfer import fit_tlflr_tuned

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

PRICE_FIELDS = ["ticker", "sector", "date", "close"]
# fixed stream for the train/test split of the target
SPLIT_STREAM = 7


def parse_ts(ts: str):
    try:
        return datetime.fromisoformat(ts.replace("Z", "+00:00"))
    except Exception:
        return None


# --- simulate -----------------------------------------------------------

def _write_text(path: str, text: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(text)
    return path


def run_experiment(config: RunConfig) -> ExperimentResult:
    """The heatmap, mixture or rate grid described by config.experiment, stamped with the config hash."""
    exp = config.experiment
    threads = config.threads
    if exp.kind == "heatmap":
        result = run_heatmap_experiment(exp.h_values, exp.s_sizes, exp.reps, config.scenario, config.kernel,
                                        config.lambda_rule, exp.n_mc, threads)
    elif exp.kind == "mixture":
        result = run_mixture_experiment(exp.s_sizes, exp.methods, exp.reps, config.scenario, config.kernel,
                                        config.lambda_rule, exp.M, exp.temperature, exp.n_mc, threads)
    elif exp.kind == "rate":
        result = run_rate_experiment(exp.n_values, exp.reps, config.scenario, config.kernel, config.lambda_rule,
                                     exp.n_mc, threads)
    else:
        raise ConfigError(f"experiment kind {exp.kind!r} has no result table")
    return replace(result, metadata={**result.metadata, "config_hash": config_hash(config)})


def cmd_simulate(config: RunConfig) -> List[str]:
    """Run the configured experiment and write its outputs under config.output.dir."""
    out = config.output.dir
    if config.experiment.kind == "scenario":
        scenario = generate_scenario(config.scenario)
        paths = export_scenario(scenario, out)
        manifest = {"schema_version": SCHEMA_VERSION, "config_hash": config_hash(config),
                    "config": config.to_dict(), "files": [os.path.basename(p) for p in paths]}
        paths.append(_write_text(os.path.join(out, "scenario.json"),
                                 json.dumps(manifest, indent=2, sort_keys=True) + "\n"))
        return paths

    result = run_experiment(config)
    return [_write_text(os.path.join(out, "result.csv"), result.to_csv()),
            _write_text(os.path.join(out, "result.json"), result.to_json())]


# --- fit ----------------------------------------------------------------

def load_task_files(curves: Sequence[str], responses: Sequence[str]) -> List[TaskDataset]:
    if len(curves) != len(responses) or not curves:
        raise ConfigError("give one --responses file for every --curves file")
    tasks: List[TaskDataset] = []
    for c, r in zip(curves, responses):
        tasks.extend(read_tasks(c, r))
    ids = [t.task_id for t in tasks]
    dup = sorted({i for i in ids if ids.count(i) > 1})
    if dup:
        raise ConfigError(f"task id(s) {dup} appear in more than one input file")
    return tasks


def _select_tasks(tasks: Sequence[TaskDataset], target_id: str,
                  source_ids: Optional[Sequence[str]]) -> Tuple[TaskDataset, List[TaskDataset]]:
    by_id = {t.task_id: t for t in tasks}
    if target_id not in by_id:
        raise ConfigError(f"target task {target_id!r} not found; have {sorted(by_id)}")
    if source_ids is None:
        return by_id[target_id], [t for t in tasks if t.task_id != target_id]
    missing = [s for s in source_ids if s not in by_id]
    if missing:
        raise ConfigError(f"source task(s) {missing} not found")
    return by_id[target_id], [by_id[s] for s in source_ids if s != target_id]


def train_test_split(target: TaskDataset, fraction: float, seed: int,
                     replication: int = 0) -> Tuple[TaskDataset, Optional[TaskDataset]]:
    if fraction == 0:
        return target, None
    n = len(target)
    n_test = int(round(n * fraction))
    if n_test < 1 or n - n_test < 4:
        raise ArgumentError(f"test_fraction={fraction} leaves {n - n_test} training and {n_test} test samples")
    perm = np.random.default_rng([int(seed), SPLIT_STREAM, int(replication)]).permutation(n)
    return target.subset(np.sort(perm[n_test:])), target.subset(np.sort(perm[:n_test]))


@dataclass(frozen=True, eq=False)
class FittedMethod:
    name: str
    estimator: Any
    details: Dict[str, Any]


def fit_method(method: str, target: TaskDataset, sources: Sequence[TaskDataset], config: RunConfig,
               eval_grid: np.ndarray) -> FittedMethod:
    kernel, rule, seed, fc = config.kernel, config.lambda_rule, config.seed, config.fit
    if method == "oflr":
        lam = resolve_lambda(rule, target, kernel, seed)
        return FittedMethod(method, fit_oflr(target, kernel, lam, eval_grid), {"lambdas": [lam]})
    if method in ("tlflr", "naive", "pooled"):
        mode = "pooled_only" if method == "pooled" else "full"
        fit = fit_tlflr_tuned(target, sources, kernel, rule, mode, seed, eval_grid)
        details = {"lambdas": [fit.lambda1] + ([] if fit.lambda2 is None else [fit.lambda2]),
                   "debias_slope": [float(v) for v in fit.debias_beta.on(eval_grid).values]}
        return FittedMethod(method, fit, details)
    if method in ("atlflr_star", "atlflr_ew"):
        dictionary = build_dictionary(target, sources, kernel, fc.M, rule, seed, eval_grid, config.threads)
        res = aggregate(dictionary, "star" if method == "atlflr_star" else "exp_weights", fc.temperature)
        details = {
            "weights": [float(w) for w in res.weights],
            "support": list(res.support),
            "members": [m.label for m in res.members],
            "dictionary_risks": [float(r) for r in res.dictionary_risks],
            "holdout_risk": res.holdout_risk,
            "ranking": [res.source_ids[i] for i in res.candidate_sets.ranking],
            "distances": [float(d) for d in res.candidate_sets.distances],
        }
        return FittedMethod(method, res, details)
    raise ConfigError(f"unknown fit method {method!r}")


def _mse(estimator, data: TaskDataset) -> float:
    return float(np.mean((data.responses - estimator.predict(data.curves)) ** 2))


def cmd_fit(config: RunConfig, curves: Sequence[str], responses: Sequence[str]) -> Dict[str, Any]:
    """Fit config.fit.method on CSV data and return the JSON-ready report."""
    fc = config.fit
    tasks = load_task_files(curves, responses)
    target, sources = _select_tasks(tasks, fc.target_task, fc.sources)
    train, test = train_test_split(target, fc.test_fraction, config.seed)
    grid = evaluation_grid(config.kernel, fc.eval_points)

    fitted = fit_method(fc.method, train, sources, config, grid)
    est = fitted.estimator
    report: Dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": config_hash(config),
        "method": fc.method,
        "target_task": target.task_id,
        "source_ids": [s.task_id for s in sources],
        "n_train": len(train),
        "n_test": 0 if test is None else len(test),
        "intercept": float(est.intercept),
        "eval_grid": [float(t) for t in grid],
        "slope": [float(v) for v in est.beta.on(grid).values],
        "train_mse": _mse(est, train),
    }
    report.update(fitted.details)
    if test is not None:
        report["test_mse"] = _mse(est, test)
        if fc.compare_to_oflr:
            base = fitted if fc.method == "oflr" else fit_method("oflr", train, sources, config, grid)
            base_mse = _mse(base.estimator, test)
            report["oflr_test_mse"] = base_mse
            report["relative_test_error"] = report["test_mse"] / base_mse if base_mse > 0 else None
    logger.info("fit %s on %d target samples with %d source task(s)", fc.method, len(train), len(sources))
    return report


# --- evaluate -----------------------------------------------------------

EVALUATION_COLUMNS = ("target_task", "method", "mean", "se", "reps", "n_train", "n_test")


def relative_test_error(config: RunConfig, train: TaskDataset, test: TaskDataset,
                        sources: Sequence[TaskDataset], grid: np.ndarray) -> float:
    """Test MSE of config.fit.method over the test MSE of OFLR fitted on the same split."""
    method = config.fit.method
    est = fit_method(method, train, sources, config, grid).estimator
    base = est if method == "oflr" else fit_method("oflr", train, sources, config, grid).estimator
    return relative_excess_risk(_mse(est, test), _mse(base, test))


def cmd_evaluate(config: RunConfig, curves: Sequence[str], responses: Sequence[str]) -> ExperimentResult:
    """Replicated random splits with every task taken as the target in turn, the others as sources.

    Each row holds the mean and standard error of the relative test error
    against OFLR over config.fit.replications splits. Tasks too small to
    split are skipped with a warning.
    """
    fc = config.fit
    if fc.test_fraction == 0:
        raise ConfigError("evaluate needs fit.test_fraction > 0")
    tasks = load_task_files(curves, responses)
    grid = evaluation_grid(config.kernel, fc.eval_points)
    serial = replace(config, threads=1)
    rows = []
    for target in tasks:
        sources = [t for t in tasks if t.task_id != target.task_id
                   and (fc.sources is None or t.task_id in fc.sources)]
        try:
            train, test = train_test_split(target, fc.test_fraction, config.seed)
        except ArgumentError as e:
            logger.warning("skipping target %s: %s", target.task_id, e)
            continue

        def one(rep: int, target=target, sources=sources) -> float:
            tr, te = train_test_split(target, fc.test_fraction, config.seed, rep)
            return relative_test_error(serial, tr, te, sources, grid)

        errors = run_replications(one, fc.replications, config.threads)
        mean, se = mean_and_se(errors)
        rows.append({"target_task": target.task_id, "method": fc.method, "mean": mean, "se": se,
                     "reps": fc.replications, "n_train": len(train), "n_test": len(test)})
        logger.info("evaluate %s on %s: relative test error %.4g (se %.2g)", fc.method, target.task_id, mean, se)
    if not rows:
        raise ConfigError("no task is large enough for the train/test split")
    meta = {"seed": config.seed, "config_hash": config_hash(config), "reps": fc.replications,
            "method": fc.method, "test_fraction": fc.test_fraction}
    return ExperimentResult("evaluation", EVALUATION_COLUMNS, tuple(rows), meta)


# --- ingest-prices ----------------------------------------------------------

def mcr_curve(closes: Sequence[float]) -> Curve:
    """Monthly cumulative return (s(t) - s(t0)) / s(t0) on trading days mapped to [0, 1]."""
    s = np.asarray(closes, dtype=float)
    if s.size < 2:
        raise ArgumentError("a month needs at least 2 trading days")
    return Curve(np.linspace(0.0, 1.0, s.size), (s - s[0]) / s[0])


def monthly_return(closes: Sequence[float]) -> float:
    s = np.asarray(closes, dtype=float)
    return float((s[-1] - s[0]) / s[0])


def ingest_prices(rows: Sequence[Dict[str, str]], month_pair: Tuple[str, str]) -> Tuple[List[TaskDataset], List[str]]:
    """One task per sector: X is the first month's MCR curve, Y the second month's return.

    Tickers without 2 trading days in both months are skipped and returned.
    """
    first, second = month_pair
    series: Dict[str, Dict[str, List[Tuple[datetime, float]]]] = {}
    sectors: Dict[str, str] = {}
    for n, r in enumerate(rows, start=2):
        ticker = (r.get("ticker") or "").strip()
        if not ticker:
            raise CsvFormatError("empty ticker", row=n, column="ticker")
        ts = parse_ts((r.get("date") or "").strip())
        if ts is None:
            raise CsvFormatError(f"could not parse date {r.get('date')!r}", row=n, column="date")
        try:
            close = float((r.get("close") or "").strip())
        except ValueError:
            raise CsvFormatError(f"could not parse {r.get('close')!r} as a price", row=n, column="close") from None
        if not close > 0 or not np.isfinite(close):
            raise CsvFormatError(f"price must be positive, got {close}", row=n, column="close")
        sectors.setdefault(ticker, (r.get("sector") or "").strip() or "unknown")
        month = ts.strftime("%Y-%m")
        if month in (first, second):
            series.setdefault(ticker, {}).setdefault(month, []).append((ts, close))

    by_sector: Dict[str, Tuple[List[Curve], List[float]]] = {}
    skipped = []
    for ticker in sectors:
        months = series.get(ticker, {})
        if len(months.get(first, [])) < 2 or len(months.get(second, [])) < 2:
            skipped.append(ticker)
            continue
        m1 = [c for _, c in sorted(months[first])]
        m2 = [c for _, c in sorted(months[second])]
        curve = mcr_curve(m1)
        curves, ys = by_sector.setdefault(sectors[ticker], ([], []))
        curves.append(Curve(curve.grid, curve.values, ticker))
        ys.append(monthly_return(m2))
    if skipped:
        logger.warning("skipped %d ticker(s) without 2 trading days in %s and %s", len(skipped), first, second)
    tasks = [TaskDataset(tuple(c), np.array(y), sector) for sector, (c, y) in sorted(by_sector.items())]
    return tasks, skipped


def cmd_ingest_prices(prices_csv: str, month_pair: Tuple[str, str], out: str) -> Tuple[List[str], List[str]]:
    fields, rows = get_csv_rows(prices_csv)
    missing = [c for c in PRICE_FIELDS if c not in fields]
    if missing:
        raise CsvFormatError(f"{prices_csv}: missing column(s) {missing}", row=1, column=missing[0])
    for m in month_pair:
        if parse_ts(m + "-01") is None:
            raise ConfigError(f"month {m!r} is not in YYYY-MM form")
    tasks, skipped = ingest_prices(rows, month_pair)
    if not tasks:
        raise ConfigError(f"no ticker has 2 trading days in both {month_pair[0]} and {month_pair[1]}")
    return write_tasks(tasks, out), skipped


# --- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fltransfer", description="Transfer learning for functional linear regression")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def run_options(sp):
        sp.add_argument("--config", help="RunConfig JSON file (defaults apply when omitted)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--threads", type=int, default=None)

    run_options(sub.add_parser("simulate", help="generate a scenario or run an experiment grid"))
    fp = sub.add_parser("fit", help="fit a method on curve/response CSVs")
    run_options(fp)
    fp.add_argument("--curves", action="append", required=True, help="curves CSV (path or URL); repeatable")
    fp.add_argument("--responses", action="append", required=True, help="responses CSV (path or URL); repeatable")

    ep = sub.add_parser("evaluate", help="replicated train/test comparison against OFLR, each task as target")
    run_options(ep)
    ep.add_argument("--curves", action="append", required=True, help="curves CSV (path or URL); repeatable")
    ep.add_argument("--responses", action="append", required=True, help="responses CSV (path or URL); repeatable")
    ep.add_argument("--replications", type=int, default=None, help="random splits per target (default 100)")

    ip = sub.add_parser("ingest-prices", help="turn daily closes into sector curve/response CSVs")
    ip.add_argument("prices", help="prices CSV with ticker, sector, date, close")
    ip.add_argument("--months", nargs=2, required=True, metavar=("PREDICTOR", "RESPONSE"), help="YYYY-MM YYYY-MM")
    ip.add_argument("--out", default="out")
    return p


def _run_config(args, command: str) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig(command=command)
    return replace(cfg, command=command).with_overrides(args.seed, args.out, args.threads,
                                                        getattr(args, "replications", None))


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            paths = cmd_simulate(_run_config(args, "simulate"))
            print("Wrote:", ", ".join(paths))
        elif args.command == "fit":
            cfg = _run_config(args, "fit")
            report = cmd_fit(cfg, args.curves, args.responses)
            path = _write_text(os.path.join(cfg.output.dir, "report.json"),
                               json.dumps(report, indent=2, sort_keys=True) + "\n")
            summary = f"test MSE {report['test_mse']:.6g}" if "test_mse" in report else \
                f"train MSE {report['train_mse']:.6g}"
            print(f"Wrote: {path} ({report['method']}, {summary})")
        elif args.command == "evaluate":
            cfg = _run_config(args, "evaluate")
            result = cmd_evaluate(cfg, args.curves, args.responses)
            out = cfg.output.dir
            paths = [_write_text(os.path.join(out, "result.csv"), result.to_csv()),
                     _write_text(os.path.join(out, "result.json"), result.to_json())]
            print("Wrote:", ", ".join(paths), f"({len(result.rows)} target task(s))")
        else:
            paths, skipped = cmd_ingest_prices(args.prices, tuple(args.months), args.out)
            print("Wrote:", ", ".join(paths), f"(skipped tickers: {len(skipped)})")
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FLTransferError, requests.RequestException, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK
