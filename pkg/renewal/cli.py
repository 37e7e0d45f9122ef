"""
Command-line entry point.

    python -m renewal run --config scenarios/blackwell.json --out out/
    python -m renewal --list-scenarios
    python -m renewal exact --model '{"kind":"lattice_table","table":{"1":0.5,"2":0.5}}' --x 200 --delta 1
    python -m renewal check --ledger out/ledger.jsonl

Exit codes: 0 when every pass flag holds, 1 on a failed check or a
computation error, 2 on an invalid configuration.
"""

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path
from typing import Any, List, Optional

from loguru import logger

from renewal import asym, config, dist, exact, harness, weights
from renewal.asym import Condition, Formula
from renewal.errors import ConfigError, RenewalError
from renewal.ledger import RunLedger, activate, canonical_json, configure_logging, verify_ledger_file

log = logger.bind(component="cli")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def _json_print(payload: Any) -> None:
    print(json.dumps(json.loads(canonical_json(payload)), indent=2, sort_keys=True))


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _write_csv(path: Path, report: harness.Report) -> None:
    tmp = path.with_name(path.name + ".tmp")
    report.frame().to_csv(tmp, index=False)
    os.replace(tmp, path)


def _resolve_config(value: str) -> str:
    if os.path.exists(value):
        return value
    return str(config.catalogue_path(value))


# -- run -----------------------------------------------------------------------

def _list_scenarios() -> int:
    for entry in config.list_catalogue():
        print(f"{entry['file']:<24} {entry['name']:<24} {entry['kind']:<14} {entry['description']}")
    return EXIT_OK


def cmd_run(args, settings: config.Settings) -> int:
    if args.list_scenarios:
        return _list_scenarios()
    if not args.config:
        raise ConfigError("run needs --config (a file or a bundled scenario name)", path="config")

    cfg = config.load_config(_resolve_config(args.config))
    settings = config.Settings.from_env().override(
        out=cfg.out, seed=cfg.seed, jobs=cfg.jobs, tolerance=cfg.tolerance,
    ).override(
        out=args.out, seed=args.seed, jobs=args.jobs, tolerance=args.tolerance,
        log_level=args.log_level, max_steps=args.max_steps,
    )
    scenarios = config.build_scenarios(cfg, settings.seed)
    scenarios = [
        dataclasses.replace(
            sc,
            max_steps=settings.max_steps,
            tolerance=settings.tolerance if settings.tolerance is not None else sc.tolerance,
        )
        for sc in scenarios
    ]

    out = Path(settings.out)
    out.mkdir(parents=True, exist_ok=True)
    ledger = RunLedger(str(out / "ledger.jsonl"))
    activate(ledger)
    try:
        ledger.append("run_started", {"config": os.path.basename(args.config), "seed": settings.seed,
                                      "scenarios": [sc.name for sc in scenarios]})
        reports = harness.run_all(scenarios, jobs=settings.jobs, strict=False)
        for report in reports:
            if report.rows:
                _write_csv(out / f"{report.scenario}.csv", report)
        passed = all(r.passed for r in reports)
        summary = {
            "seed": settings.seed,
            "passed": passed,
            "scenarios": [r.as_dict() for r in reports],
        }
        _write_atomic(out / "summary.json", json.dumps(json.loads(canonical_json(summary)), indent=2, sort_keys=True))
        ledger.append("run_finished", {"passed": passed, "failed": [r.scenario for r in reports if not r.passed]})
    finally:
        activate(None)
        ledger.flush()

    for report in reports:
        status = "PASS" if report.passed else "FAIL"
        detail = report.summary.get("detail", "")
        print(f"{status}  {report.scenario}" + (f"  ({detail})" if detail else ""))
    return EXIT_OK if passed else EXIT_FAILED


# -- thin wrappers -------------------------------------------------------------

def cmd_dist_info(args, settings) -> int:
    _json_print(dist.describe(config.parse_model(args.model)))
    return EXIT_OK


def cmd_weights_info(args, settings) -> int:
    seq = config.parse_weights(args.weights)
    window = config.parse_window(args.window) or weights.default_window(seq)
    _json_print(weights.describe(seq, window, args.n))
    return EXIT_OK


def cmd_exact(args, settings) -> int:
    model = config.parse_model(args.model)
    seq = config.parse_weights(args.weights)
    if args.cumulative:
        rows = [exact.H_exact(model, seq, x, max_steps=settings.max_steps).as_row() for x in args.x]
    elif model.is_lattice and args.method != exact.Method.MC.value:
        results = exact.h_exact(model, seq, args.x, args.delta, method=args.method, max_steps=settings.max_steps)
        rows = [r.as_row() for r in results]
    else:
        rows = []
        for x in args.x:
            est = exact.h_mc(model, seq, x, args.delta, paths=args.paths, seed=settings.seed, jobs=settings.jobs)
            rows.append({"x": x, "delta": args.delta, "value": est.estimate, "stderr": est.stderr,
                         "paths": est.paths, "seed": est.seed, "tail_bound": est.tail_bound, "method": "mc"})
    _json_print(rows)
    return EXIT_OK


def cmd_predict(args, settings) -> int:
    model = config.parse_model(args.model)
    seq = config.parse_weights(args.weights)
    window = config.parse_window(args.window)
    mu = dist.moments(model, renewal=True).mean
    formula = Formula(args.formula)
    sc = harness.Scenario(
        name="predict", model=model, weights=seq, window=window, predictor=formula,
        predictor_params={k: v for k, v in (("r", args.r), ("gamma", args.gamma)) if v is not None},
    )
    cramer_ctx = harness.cramer_context(sc) if formula in (Formula.CRAMER_ARITH, Formula.CRAMER_NONLATTICE) else None
    _json_print(harness.predict_for(sc, args.x, args.delta, mu, sc.averaged, cramer_ctx).as_dict())
    return EXIT_OK


def cmd_compare(args, settings) -> int:
    cfg = config.load_config(_resolve_config(args.config))
    scenarios = [sc for sc in config.build_scenarios(cfg, settings.seed)
                 if sc.kind == harness.ScenarioKind.COMPARISON and (not args.scenario or sc.name in args.scenario)]
    if not scenarios:
        raise ConfigError("no comparison scenarios selected", path="scenarios")
    reports = [harness.run_comparison(dataclasses.replace(sc, max_steps=settings.max_steps)) for sc in scenarios]
    _json_print([{"summary": r.summary, "rows": r.rows} for r in reports])
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAILED


def cmd_scan(args, settings) -> int:
    rows = harness.stone_shepp_scan(config.parse_model(args.model), args.n, args.delta)
    _json_print([r.as_row() for r in rows])
    return EXIT_OK


def cmd_check(args, settings) -> int:
    if args.ledger:
        record = verify_ledger_file(args.ledger)
        if record["status"] == "error":
            raise ConfigError(f"cannot verify {args.ledger}: {record['reason']}", path="ledger")
        _json_print(record)
        return EXIT_OK if record["status"] == "verified" else EXIT_FAILED
    if not args.model:
        raise ConfigError("check needs --model (or --ledger)", path="model")
    model = config.parse_model(args.model)
    if args.lemma3:
        record = harness.lemma3_check(model, args.n, args.x, args.delta, seed=settings.seed)
        _json_print(record)
        return EXIT_OK if record["holds"] else EXIT_FAILED
    if not args.condition:
        raise ConfigError("check needs --condition or --lemma3", path="condition")
    seq = config.parse_weights(args.weights)
    avg = weights.AveragedSeq(seq, config.parse_window(args.window))
    report = asym.check_conditions(model, avg, Condition(args.condition), args.x_grid, r=args.r or 2.0)
    _json_print(report.as_dict())
    return EXIT_OK if report.verdict else EXIT_FAILED


COMMANDS = {
    "run": cmd_run,
    "dist-info": cmd_dist_info,
    "weights-info": cmd_weights_info,
    "exact": cmd_exact,
    "predict": cmd_predict,
    "compare": cmd_compare,
    "scan": cmd_scan,
    "check": cmd_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="renewal", description="Weighted renewal sums: exact values and asymptotics")
    parser.add_argument("--seed", type=int, default=None, help="Root seed (default RENEWAL_SEED or 0)")
    parser.add_argument("--jobs", type=int, default=None, help="Parallel scenarios / Monte Carlo blocks")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ...")
    parser.add_argument("--max-steps", type=int, default=None, help="Step cap of the exact sweep")
    parser.add_argument("--list-scenarios", action="store_true", help="Print the bundled catalogue and exit")
    sub = parser.add_subparsers(dest="command")

    run = sub.add_parser("run", help="Run scenario files and write CSV/JSON reports")
    run.add_argument("--config", default=None, help="Scenario JSON file or bundled scenario name")
    run.add_argument("--out", default=None, help="Output directory")
    run.add_argument("--tolerance", type=float, default=None, help="Pass tolerance for every scenario")
    # repeated here so they may follow the subcommand; SUPPRESS keeps a value given before it
    run.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    run.add_argument("--jobs", type=int, default=argparse.SUPPRESS)
    run.add_argument("--log-level", default=argparse.SUPPRESS)
    run.add_argument("--max-steps", type=int, default=argparse.SUPPRESS)
    run.add_argument("--list-scenarios", action="store_true", default=argparse.SUPPRESS)

    model_help = "Model spec as JSON or a path to a JSON file"
    weights_help = "Weight spec as JSON (default constant 1)"
    window_help = "Averaging window spec as JSON"
    constant = '{"kind": "constant", "c": 1}'

    p = sub.add_parser("dist-info", help="Moments, tails and mgf domain of a model")
    p.add_argument("--model", required=True, help=model_help)

    p = sub.add_parser("weights-info", help="Averaged weights and partial sums")
    p.add_argument("--weights", default=constant, help=weights_help)
    p.add_argument("--window", default=None, help=window_help)
    p.add_argument("--n", type=int, default=100)

    p = sub.add_parser("exact", help="h(x, delta) or H(x) with a certified residual")
    p.add_argument("--model", required=True, help=model_help)
    p.add_argument("--weights", default=constant, help=weights_help)
    p.add_argument("--x", type=float, nargs="+", required=True)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--method", choices=[m.value for m in exact.Method], default=exact.Method.AUTO.value)
    p.add_argument("--paths", type=int, default=20_000)
    p.add_argument("--cumulative", action="store_true", help="Evaluate H(x) instead of h(x, delta)")

    p = sub.add_parser("predict", help="One asymptotic prediction")
    p.add_argument("--formula", choices=[f.value for f in Formula], required=True)
    p.add_argument("--model", required=True, help=model_help)
    p.add_argument("--weights", default=constant, help=weights_help)
    p.add_argument("--window", default=None, help=window_help)
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--r", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)

    p = sub.add_parser("compare", help="Run the comparison scenarios of a config")
    p.add_argument("--config", required=True)
    p.add_argument("--scenario", nargs="*", default=None)

    p = sub.add_parser("scan", help="Stone-Shepp local limit errors")
    p.add_argument("--model", required=True, help=model_help)
    p.add_argument("--n", type=int, nargs="+", required=True)
    p.add_argument("--delta", type=float, default=None, help="Window width (default one lattice unit)")

    p = sub.add_parser("check", help="Tail-versus-weight conditions or the window-count inequalities")
    p.add_argument("--model", default=None, help=model_help)
    p.add_argument("--weights", default=constant, help=weights_help)
    p.add_argument("--window", default=None, help=window_help)
    p.add_argument("--condition", choices=[c.value for c in Condition], default=None)
    p.add_argument("--x-grid", type=float, nargs="+", default=[100.0, 1000.0, 10000.0])
    p.add_argument("--r", type=float, default=None)
    p.add_argument("--lemma3", action="store_true")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--x", type=float, default=0.0)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--ledger", default=None, help="Verify the hash chain of a written ledger.jsonl")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None and not args.list_scenarios:
        parser.error("a subcommand is required")
    try:
        settings = config.Settings.from_env().override(
            seed=args.seed, jobs=args.jobs, log_level=args.log_level, max_steps=args.max_steps,
        )
        configure_logging(settings.log_level)
        if args.command is None:
            return _list_scenarios()
        return COMMANDS[args.command](args, settings)
    except ConfigError as e:
        log.error("configuration error: {}", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except RenewalError as e:
        log.error("{}: {}", type(e).__name__, e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
