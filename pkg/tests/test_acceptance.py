"""Acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line with the measured quantity and the
bound it is held to.
"""
import math
import time

import numpy as np
import pytest

from pacing_dyn import adversary as adv
from pacing_dyn import dynamics as dyn
from pacing_dyn.engine import FIRST_PRICE, SECOND_PRICE, AgentSpec, MarketConfig, payment_identity, simulate
from pacing_dyn.errors import ReductionViolation
from pacing_dyn.reproduce import random_market, self_play_traces, warmup_rounds

RHO_O = [round(0.1 * k, 1) for k in range(1, 10)]


def verdict(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def self_play_set():
    return list(self_play_traces(100, 10_000))


def test_c01_budget_identity(capsys):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst_gap, worst_over, agents = 0.0, -math.inf, 0
    for _ in range(200):
        cfg = random_market(rng)
        tr = simulate(cfg)
        T = cfg.horizon
        for a in cfg.agents:
            if a.is_pacing and a.initial_bid <= a.rho:
                lhs, rhs = payment_identity(tr, a.id)
                worst_gap = max(worst_gap, abs(lhs - rhs) - 1e-6 * T)
                worst_over = max(worst_over, lhs - a.rho * T)
                agents += 1
    secs = time.perf_counter() - t0
    ok = worst_gap <= 0 and worst_over <= 1e-9 and secs < 5
    verdict(capsys, 1, "budget identity and feasibility", ok,
            f"{agents} pacing agents, max(|gap| - 1e-6 T) = {worst_gap:.3g}, "
            f"max overspend = {worst_over:.3g} (<= 1e-9), {secs:.2f}s (< 5s)")


def test_c02_adversary_cap(capsys):
    t0 = time.perf_counter()
    worst, bad, count = -math.inf, 0, 0
    for T in range(4, 21):
        eta = 1 / math.sqrt(T)
        for ro in RHO_O:
            rl = round(1 - ro, 12)
            wins = adv.enumerate_optimal(adv.AdversaryProblem(rl, ro, T, eta, rl)).wins
            cap = ro / (rl + ro) * T + 3 * math.sqrt(T)
            bad += wins > cap
            worst = max(worst, wins - cap)
            count += 1
    secs = time.perf_counter() - t0
    verdict(capsys, 2, "adversary win cap", bad == 0 and secs < 120,
            f"{count} instances, {bad} violations, max(wins - cap) = {worst:.3f}, {secs:.1f}s (< 120s)")


def test_c03_lagrangian_certificate(capsys):
    t0 = time.perf_counter()
    bad, worst = 0, math.inf
    for T in range(1, 17):
        for ro in RHO_O:
            for eta in (0.1, 0.25, 0.5):
                v, slack = adv.certificate_violations(adv.AdversaryProblem(round(1 - ro, 12), ro, T, eta), 1e-9)
                bad += v
                worst = min(worst, slack)
    secs = time.perf_counter() - t0
    verdict(capsys, 3, "windowed Lagrangian certificate", bad == 0 and secs < 300,
            f"{bad} violations, min slack = {worst:.4f} (>= -1e-9), {secs:.1f}s (< 300s)")


def test_c04_reduction(capsys):
    rng = np.random.default_rng(4)
    bad, cases = 0, 0
    for _ in range(1000):
        rl = float(rng.choice(RHO_O))
        eta = float(rng.choice([0.05, 0.1, 0.25, 0.5]))
        learner = AgentSpec(0, rl, rl * float(rng.uniform()))
        bids = rng.uniform(0, 1.5, size=12) * (rng.uniform(size=12) < 0.7)
        for fmt in (FIRST_PRICE, SECOND_PRICE):
            cases += 1
            try:
                orig, new = adv.match_bids_reduction(learner, bids, fmt, eta=eta)
            except ReductionViolation:
                bad += 1
                continue
            # re-check the three postconditions independently of the library's own assertion
            if (orig.wins(1) != new.wins(1)
                    or new.total_payment(1) > orig.total_payment(1) + 1e-12
                    or np.any(new.bid_path[:, 0] > orig.bid_path[:, 0] + 1e-12)):
                bad += 1
    verdict(capsys, 4, "bid-matching reduction", bad == 0, f"{cases} cases, {bad} violations")


def test_c05_subgradient_step(capsys, self_play_set):
    bad_traces, worst = 0, 0.0
    for tr in self_play_set:
        bad_traces += bool(dyn.verify_subgradient_step(tr))
        worst = max(worst, float(dyn.subgradient_step_errors(tr).max()))
    verdict(capsys, 5, "update equals subgradient step", bad_traces == 0,
            f"{len(self_play_set)} traces, {bad_traces} with violations, max coord error = {worst:.2e} (<= 1e-9)")


def test_c06_descent_inequalities(capsys, self_play_set):
    d_bad = a_bad = checked = rounds = 0
    for tr in self_play_set:
        lhs, rhs = dyn.descent_series(tr)
        d_bad += int(np.count_nonzero(lhs > rhs + 1e-9))
        l2, r2, hyp = dyn.averaging_series(tr)
        a_bad += int(np.count_nonzero((l2 > r2 + 1e-9) & hyp))
        checked += int(hyp.sum())
        rounds += tr.horizon
    verdict(capsys, 6, "per-round descent inequalities", d_bad == 0 and a_bad == 0,
            f"{rounds} rounds: {d_bad} distance-to-one violations, "
            f"{a_bad} averaging violations over {checked} rounds meeting its hypothesis")


@pytest.fixture(scope="module")
def band_run():
    t0 = time.perf_counter()
    tr = simulate(MarketConfig.self_play((0.5, 0.5), 4e-5, 6_000_000))
    return tr, time.perf_counter() - t0


def test_c07_bid_band(capsys, band_run):
    tr, sim_secs = band_run
    t0 = time.perf_counter()
    eta, rmin = 4e-5, 0.5
    assert eta <= rmin**5 / 667
    start = math.ceil(11 / (eta * rmin) * math.log(1 / eta))
    lo, hi = 1 - 12 * eta / rmin - eta**2, 1 + 6 * eta / rmin + 2 * eta**3
    tail = tr.bid_path[start - 1 :]
    below, above = float(lo - tail.min()), float(tail.max() - hi)
    secs = sim_secs + time.perf_counter() - t0
    ok = below <= 0 and above <= 0 and secs < 30
    verdict(capsys, 7, "bid band after warm-up", ok,
            f"t >= {start}: bids in [{tail.min():.9f}, {tail.max():.9f}] vs band [{lo:.9f}, {hi:.9f}], {secs:.1f}s (< 30s)")


def test_c08_window_discrepancy(capsys, band_run, self_play_set):
    tr, _ = band_run
    eta, rho = 4e-5, tr.config.rho
    rmin = float(rho.min())
    tau = math.ceil(1 / eta)
    start = warmup_rounds(eta, rmin)
    scan = dyn.window_scan(tr, tau, start=start)
    guarantee = rho * tau - 6 * rho * tau * eta / rmin - 18 / rmin
    shortfall = int(np.count_nonzero(scan.wins < guarantee[None, :]))
    slack = float((scan.wins - guarantee[None, :]).min())
    floor_bad, windows = 0, 0
    for t, taus in [(tr, (tau, 1000, 100_000))] + [(s, (1, 10, 100, 1000)) for s in self_play_set]:
        for w in taus + (math.ceil(1 / t.config.eta),):
            sc = dyn.window_scan(t, w)
            floor_bad += int(np.count_nonzero(sc.wins < sc.floor - 1e-9))
            windows += sc.wins.size
    ok = shortfall == 0 and floor_bad == 0
    verdict(capsys, 8, "window discrepancy after warm-up", ok,
            f"{scan.starts.size} windows of length {tau} from round {start}: {shortfall} below guarantee "
            f"(min slack {slack:.1f}); realized-range floor: {floor_bad} violations in {windows} agent-windows")


def test_c09_round_robin(capsys):
    rng = np.random.default_rng(9)
    t0 = time.perf_counter()
    late, disc_excess, runs = -math.inf, -math.inf, 0
    for n in (2, 3, 5):
        for eta in (0.01, 0.05):
            for _ in range(5):
                b1 = np.sort(rng.choice(np.linspace(0.05, 1, 96), size=n, replace=False))[::-1] / n
                sched = n * n / (2 * eta) * math.log(1 / eta) + n + 1
                tr = simulate(MarketConfig.self_play([1 / n] * n, eta, math.ceil(sched) + 50 * n, b1))
                rep = dyn.detect_round_robin(tr)
                start = rep.period_start if rep.period_start is not None else math.inf
                late = max(late, start - sched)
                disc = rep.max_discrepancy if rep.max_discrepancy is not None else math.inf
                disc_excess = max(disc_excess, disc - (n - 1) / n)
                runs += 1
    secs = time.perf_counter() - t0
    ok = late <= 0 and disc_excess <= 1e-9 and secs < 5
    verdict(capsys, 9, "round-robin onset and discrepancy", ok,
            f"{runs} runs, max(t* - schedule) = {late:.1f}, max(discrepancy - (n-1)/n) = {disc_excess:.2e}, "
            f"{secs:.2f}s (< 5s)")


def test_c10_dp_bracket(capsys):
    broken, width, count = 0, 0, 0
    for T in range(4, 21):
        eta = 1 / math.sqrt(T)
        for ro in RHO_O:
            p = adv.AdversaryProblem(round(1 - ro, 12), ro, T, eta)
            exact = adv.enumerate_optimal(p).wins
            lo, _ = adv.dp_optimal(p, 256, 256, adv.PESSIMISTIC)
            hi, _ = adv.dp_optimal(p, 256, 256, adv.OPTIMISTIC)
            broken += not (lo <= exact <= hi)
            lo_f, _ = adv.dp_optimal(p, 1024, 1024, adv.PESSIMISTIC)
            hi_f, _ = adv.dp_optimal(p, 1024, 1024, adv.OPTIMISTIC)
            width = max(width, hi_f - lo_f)
            count += 1
    verdict(capsys, 10, "grid DP bracket", broken == 0 and width <= 2,
            f"{count} instances, {broken} brackets broken at 256, max width at 1024 = {width} (<= 2)")
