"""Named reproduction suites with machine-readable verdicts.

Each suite returns a :class:`Verdict` holding the measured quantity, the
bound it is compared against and the margin (positive means the bound holds
with room to spare).  Failures are verdicts, never exceptions.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Iterable

import numpy as np

from . import adversary as adv
from . import dynamics as dyn
from .engine import (
    FIRST_PRICE,
    SECOND_PRICE,
    AgentSpec,
    MarketConfig,
    Scripted,
    SeededRandom,
    payment_identity,
    simulate,
)
from .errors import ReductionViolation

RHO_GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))


@dataclass
class Verdict:
    suite: str
    passed: bool
    measured: float
    bound: float
    margin: float
    details: dict[str, Any] = field(default_factory=dict)
    seconds: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


def _verdict(suite, measured, bound, *, upper=True, **details) -> Verdict:
    """``upper``: pass iff measured <= bound, else iff measured >= bound."""
    margin = bound - measured if upper else measured - bound
    return Verdict(suite, bool(margin >= 0), float(measured), float(bound), float(margin), details)


# -- adversary-lab --------------------------------------------------------


def adversary_cap(horizons: Iterable[int] = range(4, 21), rho_o: Iterable[float] = RHO_GRID) -> Verdict:
    """Exact optimum against the win cap, eta = 1/sqrt(T), b1 = rho_L."""
    worst, worst_at, count, bad = -math.inf, None, 0, 0
    for T in horizons:
        eta = 1.0 / math.sqrt(T)
        for ro in rho_o:
            rl = round(1.0 - ro, 12)
            seq = adv.enumerate_optimal(adv.AdversaryProblem(rl, ro, T, eta))
            gap = seq.wins - adv.win_cap_bound(rl, ro, T, eta)
            count += 1
            bad += gap > 0
            if gap > worst:
                worst, worst_at = gap, {"T": T, "rho_O": ro, "wins": seq.wins}
    return _verdict("adversary-cap", worst, 0.0, instances=count, violations=bad, tightest=worst_at)


def lagrangian_cert(horizons: Iterable[int] = range(1, 17), rho_o: Iterable[float] = RHO_GRID,
                    etas: Iterable[float] = (0.1, 0.25, 0.5), tol: float = 1e-9) -> Verdict:
    """Windowed Lagrangian bound over every sequence and suffix window."""
    worst, bad, count = math.inf, 0, 0
    for T in horizons:
        for ro in rho_o:
            for eta in etas:
                v, slack = adv.certificate_violations(adv.AdversaryProblem(round(1.0 - ro, 12), ro, T, eta), tol)
                bad += v
                count += 1
                worst = min(worst, slack)
    return _verdict("lagrangian-cert", worst, -tol, upper=False, instances=count, violations=bad)


def reduction(samples: int = 1000, T: int = 12, seed: int = 0) -> Verdict:
    """Bid matching keeps wins, lowers cost and keeps Learner bids lower."""
    rng = np.random.default_rng(seed)
    bad, cost_gap = 0, math.inf
    for k in range(samples):
        rl = float(rng.choice(RHO_GRID))
        eta = float(rng.choice([0.05, 0.1, 0.25, 0.5]))
        learner = AgentSpec(0, rl, rl * float(rng.uniform()))
        bids = rng.uniform(0, 1.5, size=T) * (rng.uniform(size=T) < 0.7)
        for fmt in (FIRST_PRICE, SECOND_PRICE):
            try:
                orig, new = adv.match_bids_reduction(learner, bids, fmt, eta=eta)
            except ReductionViolation:
                bad += 1
                continue
            cost_gap = min(cost_gap, orig.total_payment(1) - new.total_payment(1))
    return _verdict("reduction", bad, 0, cases=2 * samples, min_cost_saving=cost_gap)


def dp_bracket(horizons: Iterable[int] = range(4, 21), rho_o: Iterable[float] = RHO_GRID,
               coarse: int = 256, fine: int = 1024) -> Verdict:
    """Pessimistic <= exact <= optimistic at the coarse grid; width at the fine grid."""
    broken, width = 0, 0
    for T in horizons:
        eta = 1.0 / math.sqrt(T)
        for ro in rho_o:
            p = adv.AdversaryProblem(round(1.0 - ro, 12), ro, T, eta)
            exact = adv.enumerate_optimal(p).wins
            lo, _ = adv.dp_optimal(p, coarse, coarse, adv.PESSIMISTIC)
            hi, _ = adv.dp_optimal(p, coarse, coarse, adv.OPTIMISTIC)
            broken += not (lo <= exact <= hi)
            lo_f, _ = adv.dp_optimal(p, fine, fine, adv.PESSIMISTIC)
            hi_f, _ = adv.dp_optimal(p, fine, fine, adv.OPTIMISTIC)
            width = max(width, hi_f - lo_f)
    v = _verdict("dp-bracket", width, 2, bracket_violations=broken)
    v.passed = v.passed and broken == 0
    return v


# -- auction-engine -------------------------------------------------------


def budget_identity(configs: int = 200, seed: int = 0) -> Verdict:
    """Payment identity and budget feasibility against scripted opponents."""
    rng = np.random.default_rng(seed)
    worst_gap, worst_over = 0.0, -math.inf
    for _ in range(configs):
        cfg = random_market(rng)
        tr = simulate(cfg)
        T = cfg.horizon
        for a in cfg.agents:
            if not a.is_pacing:
                continue
            lhs, rhs = payment_identity(tr, a.id)
            worst_gap = max(worst_gap, abs(lhs - rhs) / max(T, 1))
            worst_over = max(worst_over, lhs - a.rho * T)
    v = _verdict("budget-identity", worst_gap, 1e-6, max_overspend=worst_over)
    v.passed = v.passed and worst_over <= 1e-9
    return v


def random_market(rng: np.random.Generator) -> MarketConfig:
    """Mixed market: pacing agents plus scripted opponents of varied aggression."""
    n = int(rng.choice([1, 2, 3, 5]))
    T = int(rng.integers(50, 2000))
    eta = float(rng.choice([0.01, 0.05, 0.1, 0.3, 0.7]))
    rho = rng.dirichlet(np.ones(n))
    rho = np.maximum(rho, 1e-3)
    rho /= rho.sum()
    rho[-1] = 1.0 - math.fsum(rho[:-1])
    agents = []
    for i in range(n):
        if i > 0 and rng.uniform() < 0.5:
            style = rng.integers(3)
            if style == 0:
                bids = rng.uniform(0, 2, size=T)
            elif style == 1:
                bids = np.full(T, float(rng.uniform(0.5, 3)))
            else:
                bids = np.abs(np.sin(np.arange(T) * rng.uniform(0.01, 1))) * 2
            agents.append(AgentSpec(i, float(rho[i]), None, Scripted(tuple(bids))))
        else:
            agents.append(AgentSpec(i, float(rho[i]), float(rho[i] * rng.uniform())))
    fmt = FIRST_PRICE if rng.uniform() < 0.5 else SECOND_PRICE
    return MarketConfig(tuple(agents), T, eta, fmt, SeededRandom(int(rng.integers(1 << 30))))


# -- dynamics-analyzer ----------------------------------------------------


def self_play_traces(count: int = 100, T: int = 10_000, seed: int = 0):
    """Seeded first-price self-play traces for n in {2, 3, 5}."""
    rng = np.random.default_rng(seed)
    for k in range(count):
        n = (2, 3, 5)[k % 3]
        rho = rng.dirichlet(np.ones(n) * 2)
        rho = np.maximum(rho, 0.05)
        rho /= rho.sum()
        rho[-1] = 1.0 - math.fsum(rho[:-1])
        eta = float(rng.choice([0.001, 0.005, 0.01, 0.02, 0.05]))
        b1 = rho * rng.uniform(size=n)
        yield simulate(MarketConfig.self_play(rho, eta, T, b1))


def descent(count: int = 100, T: int = 10_000) -> Verdict:
    """Subgradient-step identity plus both per-round contraction inequalities."""
    step_err, d_bad, a_bad, checked = 0.0, 0, 0, 0
    for tr in self_play_traces(count, T):
        err = dyn.subgradient_step_errors(tr)
        step_err = max(step_err, float(err.max()))
        lhs, rhs = dyn.descent_series(tr)
        d_bad += int(np.count_nonzero(lhs > rhs + dyn.INEQ_TOL))
        l2, r2, hyp = dyn.averaging_series(tr)
        a_bad += int(np.count_nonzero((l2 > r2 + dyn.INEQ_TOL) & hyp))
        checked += int(hyp.sum())
    v = _verdict("descent", step_err, dyn.STEP_TOL, descent_violations=d_bad,
                 avg_violations=a_bad, avg_rounds_checked=checked)
    v.passed = v.passed and d_bad == 0 and a_bad == 0
    return v


BAND_ETA = 4e-5
BAND_T = 6_000_000


def band_trace():
    return simulate(MarketConfig.self_play((0.5, 0.5), BAND_ETA, BAND_T))


def milestones(trace=None) -> Verdict:
    """Final bid band after (11/(eta rho_min)) log(1/eta) rounds."""
    tr = trace if trace is not None else band_trace()
    ms = dyn.milestones(tr)
    v = _verdict("milestones", ms.band_worst, 0.0, band_start=ms.band_start,
                 band=[ms.band_low, ms.band_high], milestones=ms.as_dict())
    return v


def warmup_rounds(eta: float, rho_min: float) -> int:
    return math.ceil(6.0 / (rho_min * eta) * math.log(1.0 / eta))


def discrepancy(trace=None) -> Verdict:
    """Post-warm-up window wins against the discrepancy guarantee, plus the floor."""
    tr = trace if trace is not None else band_trace()
    eta = tr.config.eta
    rho = tr.config.rho
    rmin = float(rho.min())
    tau = math.ceil(1.0 / eta)
    start = warmup_rounds(eta, rmin)
    scan = dyn.window_scan(tr, tau, start=start)
    guarantee = rho * tau - 6 * rho * tau * eta / rmin - 18 / rmin
    slack = float((scan.wins - guarantee[None, :]).min())
    floor = dyn.window_scan(tr, tau, start=1)
    floor_bad = int(np.count_nonzero(floor.wins < floor.floor - dyn.INEQ_TOL))
    v = _verdict("discrepancy", slack, 0.0, upper=False, window=tau, warmup=start,
                 windows=int(scan.starts.size), floor_violations=floor_bad)
    v.passed = v.passed and floor_bad == 0
    return v


def round_robin(ns=(2, 3, 5), etas=(0.01, 0.05), seed: int = 0) -> Verdict:
    """Cycle onset within n^2/(2 eta) log(1/eta) + n + 1 and discrepancy <= (n-1)/n."""
    rng = np.random.default_rng(seed)
    worst_onset, worst_disc, rows = -math.inf, -math.inf, []
    for n in ns:
        for eta in etas:
            b1 = np.sort(rng.uniform(0.3, 1.0, size=n))[::-1] / n
            b1[0] = 1.0 / n
            sched = dyn.round_robin_schedule(n, eta)
            T = int(math.ceil(sched)) + 20 * n
            tr = simulate(MarketConfig.self_play([1.0 / n] * n, eta, T, b1))
            rep = dyn.detect_round_robin(tr)
            onset = rep.period_start if rep.period_start is not None else math.inf
            disc = rep.max_discrepancy if rep.max_discrepancy is not None else math.inf
            worst_onset = max(worst_onset, onset - sched)
            worst_disc = max(worst_disc, disc - (n - 1) / n)
            rows.append({"n": n, "eta": eta, "period_start": rep.period_start,
                         "schedule": sched, "max_discrepancy": rep.max_discrepancy})
    v = _verdict("round-robin", worst_onset, 0.0, worst_discrepancy_excess=worst_disc, runs=rows)
    v.passed = v.passed and worst_disc <= 1e-9
    return v


SUITES: dict[str, Callable[[], Verdict]] = {
    "adversary-cap": adversary_cap,
    "lagrangian-cert": lagrangian_cert,
    "discrepancy": discrepancy,
    "round-robin": round_robin,
    "milestones": milestones,
    "budget-identity": budget_identity,
    "reduction": reduction,
    "descent": descent,
    "dp-bracket": dp_bracket,
}


def reproduce(suite: str) -> Verdict:
    if suite not in SUITES:
        raise KeyError(suite)
    t0 = time.perf_counter()
    v = SUITES[suite]()
    v.seconds = time.perf_counter() - t0
    return v
