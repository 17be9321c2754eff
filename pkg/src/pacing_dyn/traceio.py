"""CSV persistence for traces.

One row per (round, agent) with columns
``round,agent,bid,winner_flag,payment,spent_cumulative``.  Floats are written
with 17 significant digits, which is enough for every binary64 value to
survive a write/read cycle unchanged.  The market configuration and the
post-horizon bids live in a JSON sidecar next to the CSV.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .engine import (
    AgentSpec,
    FavorAgent,
    HighestIndex,
    LowestIndex,
    MarketConfig,
    MatchLearner,
    PrimalPacing,
    Scheduled,
    Scripted,
    SeededRandom,
    Trace,
)
from .errors import InvalidInput

HEADER = "round,agent,bid,winner_flag,payment,spent_cumulative"
ROW_FMT = "%d,%d,%.17g,%d,%.17g,%.17g"
SCHEMA_VERSION = 1
CHUNK_ROUNDS = 200_000


# -- config <-> plain data ------------------------------------------------


def _policy_to_dict(p) -> dict:
    if isinstance(p, PrimalPacing):
        return {"kind": "pacing"}
    if isinstance(p, Scripted):
        return {"kind": "scripted", "bids": list(p.bids)}
    if isinstance(p, MatchLearner):
        return {"kind": "match", "learner": p.learner}
    raise InvalidInput(f"unknown policy {p!r}")


def _policy_from_dict(d: dict):
    kind = d.get("kind", "pacing")
    if kind == "pacing":
        return PrimalPacing()
    if kind == "scripted":
        return Scripted(tuple(d["bids"]))
    if kind == "match":
        return MatchLearner(int(d.get("learner", 0)))
    raise InvalidInput(f"unknown policy kind {kind!r}")


def _tie_to_dict(tb) -> dict:
    if isinstance(tb, LowestIndex):
        return {"kind": "lowest"}
    if isinstance(tb, HighestIndex):
        return {"kind": "highest"}
    if isinstance(tb, SeededRandom):
        return {"kind": "random", "seed": tb.seed}
    if isinstance(tb, FavorAgent):
        return {"kind": "favor", "agent": tb.agent}
    if isinstance(tb, Scheduled):
        return {"kind": "scheduled", "winners": list(tb.winners)}
    raise InvalidInput(f"unknown tie-break {tb!r}")


def tie_break_from_dict(d: dict | str):
    if isinstance(d, str):
        d = {"kind": d}
    kind = d.get("kind", "lowest")
    table = {
        "lowest": lambda: LowestIndex(),
        "highest": lambda: HighestIndex(),
        "random": lambda: SeededRandom(int(d.get("seed", 0))),
        "favor": lambda: FavorAgent(int(d["agent"])),
        "scheduled": lambda: Scheduled(tuple(d["winners"])),
    }
    if kind not in table:
        raise InvalidInput(f"unknown tie-break kind {kind!r}")
    return table[kind]()


def config_to_dict(cfg: MarketConfig) -> dict[str, Any]:
    return {
        "agents": [
            {"id": a.id, "rho": a.rho, "initial_bid": a.initial_bid, "policy": _policy_to_dict(a.policy)}
            for a in cfg.agents
        ],
        "horizon": cfg.horizon,
        "eta": cfg.eta,
        "format": cfg.format.value,
        "tie_break": _tie_to_dict(cfg.tie_break),
        "normalize_budgets": cfg.normalize_budgets,
    }


def config_from_dict(d: dict[str, Any]) -> MarketConfig:
    agents = tuple(
        AgentSpec(int(a["id"]), a["rho"], a.get("initial_bid"), _policy_from_dict(a.get("policy", {})))
        for a in d["agents"]
    )
    return MarketConfig(
        agents,
        int(d["horizon"]),
        d["eta"],
        d.get("format", "first"),
        tie_break_from_dict(d.get("tie_break", "lowest")),
        bool(d.get("normalize_budgets", True)),
    )


# -- trace files ----------------------------------------------------------


def sidecar_path(csv_path: str | Path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".meta.json")


def write_trace(trace: Trace, path: str | Path) -> Path:
    """Write ``trace`` as CSV plus sidecar; returns the CSV path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n, T = trace.n, trace.horizon
    pay = trace.payments
    spent = trace.spent
    flags = trace.win_matrix
    with open(path, "w", newline="") as fh:
        fh.write(HEADER + "\n")
        for lo in range(0, T, CHUNK_ROUNDS):
            hi = min(T, lo + CHUNK_ROUNDS)
            k = hi - lo
            rows = np.empty((k * n, 6), dtype=object)
            rows[:, 0] = np.repeat(np.arange(lo + 1, hi + 1), n)
            rows[:, 1] = np.tile(np.arange(n), k)
            rows[:, 2] = trace.bids[lo:hi].ravel()
            rows[:, 3] = flags[lo:hi].ravel().astype(int)
            rows[:, 4] = pay[lo:hi].ravel()
            rows[:, 5] = spent[lo:hi].ravel()
            np.savetxt(fh, rows, fmt=ROW_FMT)
    meta = {
        "schema_version": SCHEMA_VERSION,
        "config": config_to_dict(trace.config),
        "final_bids": [float(b) for b in trace.final_bids],
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=1))
    return path


def read_trace(path: str | Path) -> Trace:
    """Inverse of :func:`write_trace`."""
    path = Path(path)
    meta_path = sidecar_path(path)
    try:
        meta = json.loads(meta_path.read_text())
        cfg = config_from_dict(meta["config"])
        with open(path) as fh:
            header = fh.readline().strip()
            if header != HEADER:
                raise InvalidInput(f"{path}: unexpected header {header!r}")
            n, T = cfg.n, cfg.horizon
            if T == 0:
                return Trace(cfg, np.zeros((0, n)), np.zeros(0, np.int64), np.zeros(0), meta["final_bids"])
            data = np.loadtxt(fh, delimiter=",", ndmin=2, dtype=np.float64)
    except OSError as exc:
        raise InvalidInput(f"cannot read trace {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{meta_path}: malformed sidecar: {exc}") from exc
    except KeyError as exc:
        raise InvalidInput(f"{meta_path}: missing field {exc}") from exc
    if data.shape[0] != n * T:
        raise InvalidInput(f"{path}: expected {n * T} rows, got {data.shape[0]}")
    rounds = data[:, 0].astype(np.int64).reshape(T, n)
    agents = data[:, 1].astype(np.int64).reshape(T, n)
    if not (np.all(rounds == np.arange(1, T + 1)[:, None]) and np.all(agents == np.arange(n)[None, :])):
        raise InvalidInput(f"{path}: rows are not ordered by round then agent")
    flags = data[:, 3].reshape(T, n)
    if not np.all(flags.sum(axis=1) == 1):
        raise InvalidInput(f"{path}: every round needs exactly one winner")
    winners = flags.argmax(axis=1)
    prices = data[:, 4].reshape(T, n)[np.arange(T), winners]
    return Trace(cfg, data[:, 2].reshape(T, n), winners, prices, meta["final_bids"])
