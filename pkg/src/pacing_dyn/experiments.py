"""Experiment configs, sweeps and run records.

A config is a YAML mapping.  Market keys may sit at the top level or under
``market:``::

    name: demo
    n: 3
    T: 10000
    eta: 0.01            # default 1/sqrt(T)
    rho: [0.2, 0.3, 0.5] # default equal shares
    initial_bids: rho    # or a list, or "random" (uniform on [0, rho], seeded)
    format: first
    tie_break: lowest    # or {kind: random, seed: 3}
    seed: 0
    analyses: [milestones, {discrepancy: {window: 100}}, roundrobin]
    sweep: {eta: [0.01, 0.05], seed: [1, 2, 3]}
    output_dir: runs/demo

Every sweep point is resolved to a plain dict, validated into a
MarketConfig, simulated, written to CSV and analysed.
"""
from __future__ import annotations

import copy
import hashlib
import itertools
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
import yaml

from . import adversary, dynamics
from .engine import MarketConfig, Trace, payment_identity, simulate
from .errors import ConfigError, PacingDynError
from .traceio import SCHEMA_VERSION, config_from_dict, config_to_dict, tie_break_from_dict, write_trace

log = logging.getLogger(__name__)

SWEEP_CAP = 10_000
MARKET_KEYS = {
    "n", "T", "horizon", "eta", "rho", "initial_bids", "format", "tie_break",
    "normalize_budgets", "seed", "agents",
}
SWEEP_AXES = {"eta", "T", "rho", "seed", "initial_bids", "format"}


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    market: MarketConfig
    market_spec: dict[str, Any]
    analyses: tuple[dict[str, Any], ...] = ()
    sweep: dict[str, list] = field(default_factory=dict)
    output_dir: Path = Path("runs")
    sweep_cap: int = SWEEP_CAP

    def points(self) -> list[dict[str, Any]]:
        """Market specs of every sweep point, in cross-product order."""
        if not self.sweep:
            return [self.market_spec]
        axes = sorted(self.sweep)
        out = []
        for values in itertools.product(*(self.sweep[a] for a in axes)):
            spec = copy.deepcopy(self.market_spec)
            for a, v in zip(axes, values):
                spec[a] = v
            out.append(spec)
        return out


@dataclass
class RunRecord:
    config_hash: str
    trace_path: Optional[str]
    metrics: dict[str, Any]
    wall_time: float
    schema_version: int = SCHEMA_VERSION
    error: Optional[str] = None

    def as_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "trace_path": self.trace_path,
            "metrics": self.metrics,
            "wall_time": self.wall_time,
            "schema_version": self.schema_version,
            "error": self.error,
        }


# -- loading --------------------------------------------------------------


def _fail(field_name: str, msg: str):
    raise ConfigError(f"{field_name}: {msg}")


def resolve_market(spec: dict[str, Any]) -> MarketConfig:
    """Apply defaults to a market spec and validate it."""
    spec = dict(spec)
    T = spec.get("T", spec.get("horizon"))
    if T is None:
        _fail("T", "horizon is required")
    if not isinstance(T, int) or isinstance(T, bool) or T < 0:
        _fail("T", f"must be a non-negative integer, got {T!r}")
    eta = spec.get("eta")
    if eta is None:
        if T == 0:
            _fail("eta", "no default learning rate for T = 0")
        eta = 1.0 / math.sqrt(T)
    try:
        eta = float(eta)
    except (TypeError, ValueError):
        _fail("eta", f"not a number: {eta!r}")
    if not (0.0 < eta < 1.0):
        _fail("eta", f"eta must lie in (0,1), got {eta}")
    seed = int(spec.get("seed", 0))
    fmt = str(spec.get("format", "first")).lower()
    if fmt not in ("first", "second"):
        _fail("format", f"must be 'first' or 'second', got {fmt!r}")
    normalize = bool(spec.get("normalize_budgets", True))
    tb = spec.get("tie_break", "lowest")
    tb = dict(tb) if isinstance(tb, dict) else {"kind": tb}
    if tb.get("kind") == "random":
        tb.setdefault("seed", seed)
    try:
        tie_break = tie_break_from_dict(tb)
    except (PacingDynError, KeyError, TypeError, ValueError) as exc:
        _fail("tie_break", str(exc))

    if "agents" in spec:
        try:
            return config_from_dict({
                "agents": spec["agents"], "horizon": T, "eta": eta, "format": fmt,
                "tie_break": tb, "normalize_budgets": normalize,
            })
        except (PacingDynError, KeyError, TypeError) as exc:
            _fail("agents", str(exc))

    rho = spec.get("rho")
    n = spec.get("n")
    if rho is None:
        if n is None:
            _fail("n", "give either n or rho")
        if not isinstance(n, int) or n < 1:
            _fail("n", f"must be a positive integer, got {n!r}")
        rho = [1.0 / n] * n
    rho = [float(r) for r in rho]
    if n is not None and n != len(rho):
        _fail("rho", f"has {len(rho)} entries but n = {n}")
    if any(r <= 0 or r > 1 for r in rho):
        _fail("rho", f"entries must lie in (0, 1], got {rho}")
    total = math.fsum(rho)
    if normalize and abs(total - 1.0) > 1e-12:
        _fail("rho", f"budget shares must sum to 1 (normalize_budgets), got sum {total!r}")

    b1 = spec.get("initial_bids", "rho")
    if b1 == "rho" or b1 is None:
        b1 = list(rho)
    elif b1 == "random":
        rng = np.random.default_rng(seed)
        b1 = [float(r * u) for r, u in zip(rho, rng.uniform(size=len(rho)))]
    else:
        b1 = [float(b) for b in b1]
        if len(b1) != len(rho):
            _fail("initial_bids", f"has {len(b1)} entries, expected {len(rho)}")
    try:
        return MarketConfig.self_play(rho, eta, T, b1, format=fmt, tie_break=tie_break,
                                      normalize_budgets=normalize)
    except PacingDynError as exc:
        _fail("market", str(exc))


def _normalize_analyses(raw) -> tuple[dict[str, Any], ...]:
    out = []
    for item in raw or []:
        if isinstance(item, str):
            out.append({"kind": item})
        elif isinstance(item, dict) and len(item) == 1 and "kind" not in item:
            (kind, params), = item.items()
            out.append({"kind": kind, **(params or {})})
        elif isinstance(item, dict) and "kind" in item:
            out.append(dict(item))
        else:
            _fail("analyses", f"cannot parse entry {item!r}")
    for a in out:
        if a["kind"] not in ANALYSES:
            _fail("analyses", f"unknown analysis {a['kind']!r}; known: {sorted(ANALYSES)}")
    return tuple(out)


def parse_config(data: dict[str, Any], base_dir: Path | None = None) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    market_spec = dict(data.get("market") or {})
    for k in MARKET_KEYS:
        if k in data:
            market_spec.setdefault(k, data[k])
    unknown = set(market_spec) - MARKET_KEYS
    if unknown:
        _fail("market", f"unknown keys {sorted(unknown)}")
    market = resolve_market(market_spec)
    sweep = data.get("sweep") or {}
    if not isinstance(sweep, dict):
        _fail("sweep", "must be a mapping of axis -> list")
    for axis, values in sweep.items():
        if axis not in SWEEP_AXES:
            _fail("sweep", f"unknown axis {axis!r}; known: {sorted(SWEEP_AXES)}")
        if not isinstance(values, list) or not values:
            _fail(f"sweep.{axis}", "must be a non-empty list")
    cap = int(data.get("sweep_cap", SWEEP_CAP))
    size = math.prod(len(v) for v in sweep.values()) if sweep else 1
    if size > cap:
        _fail("sweep", f"{size} points exceed the cap of {cap}")
    out_dir = Path(data.get("output_dir", "runs"))
    if base_dir is not None and not out_dir.is_absolute():
        out_dir = base_dir / out_dir
    return ExperimentConfig(
        name=str(data.get("name", "experiment")),
        market=market,
        market_spec=market_spec,
        analyses=_normalize_analyses(data.get("analyses")),
        sweep=sweep,
        output_dir=out_dir,
        sweep_cap=cap,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc
    return parse_config(data if data is not None else {}, base_dir=path.parent)


def config_hash(market: MarketConfig, analyses=()) -> str:
    """sha256 of the canonical JSON of the resolved point."""
    doc = {"market": config_to_dict(market), "analyses": list(analyses)}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()


# -- analyses -------------------------------------------------------------


def jsonable(obj):
    """Convert numpy scalars/arrays, tuples and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _summary(trace: Trace) -> dict:
    return {
        "n": trace.n,
        "T": trace.horizon,
        "eta": trace.config.eta,
        "wins": [trace.wins(i) for i in range(trace.n)],
        "total_payment": [trace.total_payment(i) for i in range(trace.n)],
        "final_bids": trace.final_bids,
    }


def _a_payment(trace: Trace) -> dict:
    gaps = []
    for a in trace.config.agents:
        if a.is_pacing:
            lhs, rhs = payment_identity(trace, a.id)
            gaps.append(abs(lhs - rhs))
    worst = max(gaps, default=0.0)
    return {"max_gap": worst, "ok": worst <= 1e-6 * max(trace.horizon, 1)}


def _a_subgradient(trace: Trace) -> dict:
    bad = dynamics.verify_subgradient_step(trace)
    return {"violations": len(bad), "first": bad[0] if bad else None}


def _a_descent(trace: Trace) -> dict:
    lhs, rhs = dynamics.descent_series(trace)
    l2, r2, hyp = dynamics.averaging_series(trace)
    return {
        "descent_violations": int(np.count_nonzero(lhs > rhs + dynamics.INEQ_TOL)),
        "avg_violations": int(np.count_nonzero((l2 > r2 + dynamics.INEQ_TOL) & hyp)),
        "avg_rounds_checked": int(np.count_nonzero(hyp)),
    }


def _a_milestones(trace: Trace, D: float | None = None) -> dict:
    return dynamics.milestones(trace, D).as_dict()


def _a_discrepancy(trace: Trace, window: int | None = None, stride: int = 1, start: int = 1) -> dict:
    tau = int(window or math.ceil(1.0 / trace.config.eta))
    scan = dynamics.window_scan(trace, tau, start=start, stride=stride)
    if scan.starts.size == 0:
        return {"window": tau, "windows": 0}
    return {
        "window": tau,
        "windows": int(scan.starts.size),
        "min_discrepancy": scan.discrepancy.min(axis=0),
        "max_discrepancy": scan.discrepancy.max(axis=0),
        "floor_violations": int(np.count_nonzero(scan.wins < scan.floor - dynamics.INEQ_TOL)),
    }


def _a_roundrobin(trace: Trace) -> dict:
    return dynamics.detect_round_robin(trace).as_dict()


def _a_potential(trace: Trace) -> dict:
    s = dynamics.potential(trace.final_bids, trace.config.rho)
    return {"f_value": s.f_value, "dist_one": s.dist_one, "dist_avg": s.dist_avg}


def _a_adversary(trace: Trace, learner: int = 0, method: str = "auto", grid: int = 256) -> dict:
    """Optimizer problem with ``learner`` against the coalition of the rest."""
    cfg = trace.config
    rl = cfg.agents[learner].rho
    ro = float(cfg.rho.sum()) - rl
    prob = adversary.AdversaryProblem(rl, ro, cfg.horizon, cfg.eta, cfg.agents[learner].initial_bid)
    if method == "enum" or (method == "auto" and cfg.horizon <= 20):
        seq = adversary.enumerate_optimal(prob)
        wins = seq.wins
    else:
        wins, seq = adversary.dp_optimal(prob, grid, grid, adversary.OPTIMISTIC)
    cap = adversary.win_cap_bound(rl, ro, cfg.horizon, cfg.eta)
    return {"wins": wins, "cap": cap, "feasible_cost": float(seq.cost), "within_cap": wins <= cap}


ANALYSES: dict[str, Callable[..., dict]] = {
    "payment_identity": _a_payment,
    "subgradient": _a_subgradient,
    "descent": _a_descent,
    "milestones": _a_milestones,
    "discrepancy": _a_discrepancy,
    "roundrobin": _a_roundrobin,
    "potential": _a_potential,
    "adversary": _a_adversary,
}


def analyse(trace: Trace, analyses) -> dict[str, Any]:
    metrics: dict[str, Any] = {"summary": _summary(trace)}
    for req in analyses:
        params = {k: v for k, v in req.items() if k != "kind"}
        try:
            metrics[req["kind"]] = ANALYSES[req["kind"]](trace, **params)
        except PacingDynError as exc:
            metrics[req["kind"]] = {"error": f"{type(exc).__name__}: {exc}"}
    return jsonable(metrics)


# -- running --------------------------------------------------------------


def _worker_count(workers: int | None) -> int:
    if workers is None:
        env = os.environ.get("PACING_DYN_WORKERS")
        try:
            workers = int(env) if env else 1
        except ValueError as exc:
            raise ConfigError(f"PACING_DYN_WORKERS must be an integer, got {env!r}") from exc
    return max(1, int(workers))


def _run_point(spec: dict, analyses, trace_dir: str) -> RunRecord:
    t0 = time.perf_counter()
    h = "unresolved-" + hashlib.sha256(
        json.dumps(jsonable(spec), sort_keys=True, default=str).encode()
    ).hexdigest()
    try:
        market = resolve_market(spec)
        h = config_hash(market, analyses)
        trace = simulate(market)
        path = write_trace(trace, Path(trace_dir) / f"{h[:16]}.csv")
        metrics = analyse(trace, analyses)
        return RunRecord(h, str(path), metrics, time.perf_counter() - t0)
    except (PacingDynError, OSError) as exc:
        return RunRecord(h, None, {}, time.perf_counter() - t0, error=f"{type(exc).__name__}: {exc}")


def run(config: ExperimentConfig, workers: int | None = None) -> list[RunRecord]:
    """Simulate and analyse every sweep point; one record per point.

    Failures are recorded in the point's ``error`` field and the sweep goes
    on.  Records and metrics.jsonl follow sweep order regardless of workers.
    """
    out = Path(config.output_dir)
    trace_dir = out / "traces"
    try:
        trace_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    points = config.points()
    nw = _worker_count(workers)
    args = [(p, config.analyses, str(trace_dir)) for p in points]
    if nw == 1 or len(points) == 1:
        records = [_run_point(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=min(nw, len(points))) as pool:
            records = list(pool.map(_run_point, *zip(*args)))
    with open(out / "metrics.jsonl", "w") as fh:
        for r in records:
            fh.write(json.dumps(jsonable(r.as_dict()), sort_keys=True) + "\n")
    failed = sum(r.error is not None for r in records)
    if failed:
        log.warning("%d of %d sweep points failed", failed, len(records))
    return records
