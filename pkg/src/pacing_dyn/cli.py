"""Command-line entry points.

Exit codes: 0 success / all verdicts pass, 1 a verdict or check failed,
2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

from . import adversary as adv
from . import dynamics as dyn
from .engine import simulate
from .errors import PacingDynError
from .experiments import analyse, jsonable, load_config, resolve_market, run
from .reproduce import SUITES, reproduce
from .traceio import read_trace, write_trace

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _emit(obj, fh=None):
    fh = fh or sys.stdout
    fh.write(json.dumps(jsonable(obj), sort_keys=True) + "\n")


# -- simulate / sweep -------------------------------------------------------


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    spec = dict(cfg.market_spec)
    for key in ("T", "eta", "seed"):
        val = getattr(args, key)
        if val is not None:
            spec[key] = val
    market = resolve_market(spec)
    trace = simulate(market)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / f"{cfg.name}.csv"
    write_trace(trace, out)
    _emit({"trace": str(out), **analyse(trace, cfg.analyses)})
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    records = run(cfg, workers=args.workers)
    for r in records:
        _emit(r.as_dict())
    return EXIT_FAIL if any(r.error for r in records) else EXIT_OK


# -- adversary --------------------------------------------------------------


def _solve_record(problem: adv.AdversaryProblem, method: str, grid: int) -> dict:
    T = problem.horizon
    if method == "enum":
        seq = adv.enumerate_optimal(problem)
        wins = seq.wins
    else:
        wins, _ = adv.dp_optimal(problem, grid, grid, adv.OPTIMISTIC)
        _, seq = adv.dp_optimal(problem, grid, grid, adv.PESSIMISTIC)
    cert = adv.LagrangianCertificate.for_problem(problem.rho_L, problem.rho_O, problem.eta)
    dual = cert.lam * T * float(problem.rho_O) + adv.interval_lagrangian_bound(cert, T, float(problem.initial_bid))
    ok = wins <= dual + 1e-9
    if T <= 16:
        ok = ok and adv.certificate_violations(problem)[0] == 0
    return {
        "instance": problem.as_dict(),
        "method": method,
        "wins": wins,
        "feasible_wins": seq.wins,
        "cap": adv.win_cap_bound(float(problem.rho_L), float(problem.rho_O), T, float(problem.eta)),
        "certificate_bound": dual,
        "feasible_cost": float(seq.cost),
        "certificate_ok": bool(ok),
    }


def _cmd_adv_solve(args) -> int:
    eta = args.eta if args.eta is not None else 1.0 / math.sqrt(args.T)
    method = args.method or ("enum" if args.T <= 20 else "dp")
    p = adv.AdversaryProblem(args.rho_l, args.rho_o, args.T, eta, args.b1)
    rec = _solve_record(p, method, args.grid)
    _emit(rec)
    return EXIT_OK if rec["wins"] <= rec["cap"] and rec["certificate_ok"] else EXIT_FAIL


def _cmd_adv_certify(args) -> int:
    """One record per CSV row (columns rho_l, rho_o and optional eta, b1)."""
    status = EXIT_OK
    try:
        rows = list(csv.DictReader(open(args.sweep_file, newline="")))
    except OSError as exc:
        raise PacingDynError(f"{args.sweep_file}: {exc}") from exc
    for row in rows:
        T = int(row.get("T") or args.T)
        eta = float(row["eta"]) if row.get("eta") else 1.0 / math.sqrt(T)
        b1 = float(row["b1"]) if row.get("b1") else None
        p = adv.AdversaryProblem(float(row["rho_l"]), float(row["rho_o"]), T, eta, b1)
        rec = _solve_record(p, "enum" if T <= 20 else "dp", args.grid)
        _emit(rec)
        if not (rec["certificate_ok"] and rec["wins"] <= rec["cap"]):
            status = EXIT_FAIL
    return status


# -- analyze ----------------------------------------------------------------


def _cmd_analyze(args) -> int:
    trace = read_trace(args.trace)
    kind = args.analysis
    status = EXIT_OK
    if kind == "potential":
        stride = args.stride or 1
        path = trace.bid_path
        rho = trace.config.rho
        for t in range(1, path.shape[0] + 1, stride):
            s = dyn.potential(path[t - 1], rho)
            _emit({"round": t, "f_value": s.f_value, "dist_one": s.dist_one, "dist_avg": s.dist_avg,
                   "b_avg": s.b_avg, "b_max": s.b_max, "b_min": s.b_min})
    elif kind == "milestones":
        ms = dyn.milestones(trace)
        _emit(ms.as_dict())
        status = EXIT_OK if ms.band_holds else EXIT_FAIL
    elif kind == "discrepancy":
        tau = args.window or math.ceil(1.0 / trace.config.eta)
        scan = dyn.window_scan(trace, tau, stride=args.stride or tau)
        for w in scan.rows():
            _emit({**vars(w), "floor_holds": w.floor_holds})
            if not w.floor_holds:
                status = EXIT_FAIL
    elif kind == "roundrobin":
        rep = dyn.detect_round_robin(trace)
        _emit(rep.as_dict())
        status = EXIT_OK if rep.consistent and rep.within_schedule is not False else EXIT_FAIL
    return status


# -- reproduce --------------------------------------------------------------


def _cmd_reproduce(args) -> int:
    names = list(SUITES) if args.suite == ["all"] else args.suite
    unknown = [s for s in names if s not in SUITES]
    if not names or unknown or any(not s for s in names):
        print(f"unknown suite {unknown or names!r}; choose from {sorted(SUITES)} or 'all'", file=sys.stderr)
        return EXIT_USAGE
    verdicts = [reproduce(s) for s in names]
    for v in verdicts:
        _emit(v.as_dict())
    if args.report:
        Path(args.report).write_text(json.dumps(jsonable([v.as_dict() for v in verdicts]), indent=1))
    return EXIT_OK if all(v.passed for v in verdicts) else EXIT_FAIL


# -- parsers ----------------------------------------------------------------


def _add_adversary(sub):
    p = sub.add_parser("adversary", help="solve or certify Optimizer instances")
    asub = p.add_subparsers(dest="action", required=True)
    s = asub.add_parser("solve")
    s.add_argument("--rho-l", type=float, required=True)
    s.add_argument("--rho-o", type=float, required=True)
    s.add_argument("--T", type=int, required=True)
    s.add_argument("--eta", type=float, default=None, help="default 1/sqrt(T)")
    s.add_argument("--b1", type=float, default=None, help="default rho_L")
    s.add_argument("--method", choices=["enum", "dp"], default=None)
    s.add_argument("--grid", type=int, default=512)
    s.set_defaults(func=_cmd_adv_solve)
    c = asub.add_parser("certify")
    c.add_argument("--T", type=int, required=True)
    c.add_argument("--sweep-file", required=True)
    c.add_argument("--grid", type=int, default=512)
    c.set_defaults(func=_cmd_adv_certify)


def _add_analyze(sub):
    p = sub.add_parser("analyze", help="analyse a trace CSV")
    p.add_argument("analysis", choices=["potential", "milestones", "discrepancy", "roundrobin"])
    p.add_argument("--trace", required=True)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.set_defaults(func=_cmd_analyze)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pacing-dyn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="simulate one market and write its trace")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default=None)
    s.add_argument("--T", type=int, default=None)
    s.add_argument("--eta", type=float, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=_cmd_simulate)
    w = sub.add_parser("sweep", help="run every sweep point of a config")
    w.add_argument("--config", required=True)
    w.add_argument("--workers", type=int, default=None)
    w.set_defaults(func=_cmd_sweep)
    _add_adversary(sub)
    _add_analyze(sub)
    r = sub.add_parser("reproduce", help="run reproduction suites")
    r.add_argument("suite", nargs="*", default=[])
    r.add_argument("--report", default=None, help="also write a JSON report here")
    r.set_defaults(func=_cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except (PacingDynError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def adversary_main(argv=None) -> int:
    return main(["adversary", *(sys.argv[1:] if argv is None else argv)])


def analyze_main(argv=None) -> int:
    return main(["analyze", *(sys.argv[1:] if argv is None else argv)])


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
