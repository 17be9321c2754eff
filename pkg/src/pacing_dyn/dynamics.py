"""Analytics for first-price self-play traces.

When every agent runs primal pacing in a first-price auction, one round of
play is one subgradient step of size eta on

    f(b) = 0.5 * max_i b_i**2 - rho @ b + 0.5

whose unique minimizer is the all-ones vector.  The helpers here evaluate f
along a trace, check the per-round contraction inequalities, locate the
convergence milestones, and measure how evenly wins are spread over time.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .engine import FIRST_PRICE, Trace
from .errors import InvalidInput, ScheduleExceedsHorizon

STEP_TOL = 1e-9
INEQ_TOL = 1e-9
STRICT_TOL = 1e-12
BUDGET_SUM_TOL = 1e-12


# -- potential --------------------------------------------------------------


@dataclass(frozen=True)
class PotentialState:
    b: np.ndarray
    rho: np.ndarray
    f_value: float
    subgrad: np.ndarray
    maximizer: int
    dist_one: float
    dist_avg: float
    b_avg: float
    b_max: float
    b_min: float


def _check_shares(rho: np.ndarray):
    if np.any(rho <= 0):
        raise InvalidInput("budget shares must be positive")
    if abs(math.fsum(rho) - 1.0) > BUDGET_SUM_TOL:
        raise InvalidInput(f"budget shares must sum to 1, got {math.fsum(rho)!r}")


def potential(b, rho, winner: Optional[int] = None) -> PotentialState:
    """Evaluate f and the extreme subgradient ``b_max * e_i - rho`` at ``b``.

    ``i`` is ``winner`` when given (it must attain the maximum), otherwise the
    lowest maximizing index.
    """
    b = np.asarray(b, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if b.ndim != 1 or b.shape != rho.shape or b.size == 0:
        raise InvalidInput(f"dimension mismatch: b{b.shape} vs rho{rho.shape}")
    if np.any(b < 0):
        raise InvalidInput("bids must be non-negative")
    _check_shares(rho)
    b_max = float(b.max())
    i = int(np.argmax(b)) if winner is None else int(winner)
    if winner is not None and b[i] < b_max - STEP_TOL:
        raise InvalidInput(f"agent {i} does not hold the maximum bid")
    g = -rho.copy()
    g[i] += b_max
    avg = float(b.mean())
    return PotentialState(
        b=b,
        rho=rho,
        f_value=0.5 * b_max**2 - float(rho @ b) + 0.5,
        subgrad=g,
        maximizer=i,
        dist_one=float(np.linalg.norm(b - 1.0)),
        dist_avg=float(np.linalg.norm(b - avg)),
        b_avg=avg,
        b_max=b_max,
        b_min=float(b.min()),
    )


def potential_values(b, rho) -> np.ndarray:
    """f evaluated row-wise on a (k, n) array of bid vectors."""
    b = np.atleast_2d(np.asarray(b, dtype=float))
    return 0.5 * b.max(axis=1) ** 2 - b @ np.asarray(rho, dtype=float) + 0.5


# -- trace-level checks -----------------------------------------------------


def _require_self_play(trace: Trace):
    if not trace.config.is_self_play:
        raise InvalidInput("analysis requires every agent to run primal pacing")
    if trace.config.format is not FIRST_PRICE:
        raise InvalidInput("analysis requires a first-price trace")


def _rho_min(trace: Trace) -> float:
    return float(trace.config.rho.min())


class InequalityCheck(NamedTuple):
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + INEQ_TOL


class HypothesisNotMet:
    """Marker returned when an inequality's precondition fails at a round."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "HYPOTHESIS_NOT_MET"

    def __bool__(self):
        return False


HYPOTHESIS_NOT_MET = HypothesisNotMet()


def subgradient_step_errors(trace: Trace) -> np.ndarray:
    """Per-round max |b(t+1) - (b(t) - eta * g(t))| with g the winner's extreme subgradient."""
    _require_self_play(trace)
    if trace.horizon == 0:
        return np.zeros(0)
    eta, rho = trace.config.eta, trace.config.rho
    B = trace.bids
    T = trace.horizon
    b_max = B.max(axis=1)
    expected = B + eta * rho[None, :]
    expected[np.arange(T), trace.winners] -= eta * b_max
    nxt = trace.bid_path[1:]
    return np.abs(nxt - expected).max(axis=1)


def verify_subgradient_step(trace: Trace) -> list[int]:
    """Rounds (1-based) where the update is not a subgradient step on f."""
    err = subgradient_step_errors(trace)
    return [int(t) + 1 for t in np.flatnonzero(err > STEP_TOL)]


def _dist_one_sq(path: np.ndarray) -> np.ndarray:
    return np.square(path - 1.0).sum(axis=1)


def _dist_avg(path: np.ndarray) -> np.ndarray:
    return np.linalg.norm(path - path.mean(axis=1, keepdims=True), axis=1)


def descent_series(trace: Trace) -> tuple[np.ndarray, np.ndarray]:
    """lhs/rhs arrays of the distance-to-one contraction for rounds 1..T."""
    _require_self_play(trace)
    eta, rmin = trace.config.eta, _rho_min(trace)
    d = _dist_one_sq(trace.bid_path)
    lhs = d[1:]
    rhs = (1.0 - eta * rmin + 2.0 * eta**2) * d[:-1] + 3.0 * eta**2
    return lhs, rhs


def check_descent_inequality(trace: Trace, t: int) -> InequalityCheck:
    """``|b(t+1) - 1|^2 <= (1 - eta*rho_min + 2 eta^2) |b(t) - 1|^2 + 3 eta^2``."""
    _require_self_play(trace)
    if not 1 <= t <= trace.horizon:
        raise InvalidInput(f"round {t} outside 1..{trace.horizon}")
    eta, rmin = trace.config.eta, _rho_min(trace)
    path = trace.bid_path[t - 1 : t + 1]
    d = _dist_one_sq(path)
    return InequalityCheck(float(d[1]), float((1.0 - eta * rmin + 2.0 * eta**2) * d[0] + 3.0 * eta**2))


def averaging_series(trace: Trace, D: Optional[float] = None):
    """lhs, rhs and hypothesis mask of the distance-to-average contraction.

    With ``D=None`` each round uses the smallest admissible parameter,
    ``D = |b(t) - 1| / sqrt(eta)``.
    """
    _require_self_play(trace)
    eta, rmin, n = trace.config.eta, _rho_min(trace), trace.n
    path = trace.bid_path
    d1 = np.sqrt(_dist_one_sq(path[:-1]))
    da = _dist_avg(path)
    ceiling = math.sqrt(1.0 / (2 * n))
    if D is None:
        D_sq = d1**2 / eta
        hyp = d1 <= ceiling
    else:
        D_sq = np.full_like(d1, float(D) ** 2)
        hyp = (d1 <= D * math.sqrt(eta)) & (D * math.sqrt(eta) <= ceiling)
    lhs = da[1:] ** 2
    rhs = da[:-1] ** 2 - 2.0 * rmin * eta * da[:-1] + 4.0 * eta**2 * (D_sq + 1.0)
    return lhs, rhs, hyp


def check_avg_inequality(trace: Trace, t: int, D: float):
    """Distance-to-average contraction at round t, or HYPOTHESIS_NOT_MET."""
    _require_self_play(trace)
    if not 1 <= t <= trace.horizon:
        raise InvalidInput(f"round {t} outside 1..{trace.horizon}")
    eta, rmin, n = trace.config.eta, _rho_min(trace), trace.n
    path = trace.bid_path[t - 1 : t + 1]
    d1 = math.sqrt(float(_dist_one_sq(path[:1])[0]))
    if not (d1 <= D * math.sqrt(eta) <= math.sqrt(1.0 / (2 * n))):
        return HYPOTHESIS_NOT_MET
    da = _dist_avg(path)
    rhs = da[0] ** 2 - 2.0 * rmin * eta * da[0] + 4.0 * eta**2 * (D**2 + 1.0)
    return InequalityCheck(float(da[1] ** 2), float(rhs))


# -- convergence milestones -------------------------------------------------


@dataclass(frozen=True)
class ConvergenceMilestones:
    t_sqrt_eta: Optional[int]
    t_avg: Optional[int]
    t_one: Optional[int]
    D: float
    A: float
    schedule_sqrt_eta: float
    schedule_avg: float
    schedule_one: float
    t_avg_refined: Optional[int]
    t_one_refined: Optional[int]
    D_refined: float
    A_refined: float
    schedule_avg_refined: float
    schedule_one_refined: float
    band_start: int
    band_low: float
    band_high: float
    band_holds: bool
    band_worst: float
    eta_hypothesis: bool
    initial_hypothesis: bool

    @property
    def within_schedule(self) -> dict:
        def ok(t, s):
            return t is not None and t <= s

        return {
            "sqrt_eta": ok(self.t_sqrt_eta, self.schedule_sqrt_eta),
            "avg": ok(self.t_avg, self.schedule_avg),
            "one": ok(self.t_one, self.schedule_one),
            "avg_refined": ok(self.t_avg_refined, self.schedule_avg_refined),
            "one_refined": ok(self.t_one_refined, self.schedule_one_refined),
        }

    def as_dict(self) -> dict:
        out = asdict(self)
        out["within_schedule"] = self.within_schedule
        return out


def bid_band(eta: float, rho_min: float) -> tuple[float, float]:
    """Final band ``[1 - 12 eta/rho_min - eta^2, 1 + 6 eta/rho_min + 2 eta^3]``."""
    return 1.0 - 12.0 * eta / rho_min - eta**2, 1.0 + 6.0 * eta / rho_min + 2.0 * eta**3


def band_start_round(eta: float, rho_min: float) -> int:
    return math.ceil(11.0 / (eta * rho_min) * math.log(1.0 / eta))


def _first_from(mask: np.ndarray, start: Optional[int]) -> Optional[int]:
    """First 1-based round >= start where mask holds."""
    if start is None:
        return None
    hits = np.flatnonzero(mask[start - 1 :])
    return int(hits[0]) + start if hits.size else None


def milestones(trace: Trace, D: Optional[float] = None) -> ConvergenceMilestones:
    """First rounds at which the three convergence phases are reached.

    Each milestone is searched from the previous one onward.  A second pass
    repeats the last two phases with the sharper parameter D^2 = 667 eta / rho_min^2.
    """
    _require_self_play(trace)
    cfg = trace.config
    eta, n, T = cfg.eta, cfg.n, cfg.horizon
    rho = cfg.rho
    _check_shares(rho)
    rmin = float(rho.min())
    b1 = trace.bid_path[0]
    if np.any(b1 > rho + STEP_TOL):
        raise InvalidInput("milestones need initial bids at most rho")
    start_band = band_start_round(eta, rmin)
    if T < start_band:
        raise ScheduleExceedsHorizon(f"horizon {T} is shorter than the band schedule {start_band}")
    if D is None:
        D = math.sqrt(15.0 / (4.0 * rmin) + eta)
    A = 3.0 * (D**2 + 1.0) / rmin
    D2 = math.sqrt(667.0 * eta) / rmin
    A2 = 3.0 * (D2**2 + 1.0) / rmin
    log_inv = math.log(1.0 / eta)

    B = trace.bids
    d1sq = _dist_one_sq(B)
    da = _dist_avg(B)
    lo_b, hi_b = B.min(axis=1), B.max(axis=1)

    t1 = _first_from(d1sq <= 15.0 * eta / (4.0 * rmin) + eta**3 * d1sq[0], 1)
    t2 = _first_from(da <= A * eta, t1)
    t3 = _first_from((lo_b >= 1 - 2 * A * eta - eta**2) & (hi_b <= 1 + A * eta + 2 * eta**3), t2)
    t4 = _first_from(da <= A2 * eta, t3)
    t5 = _first_from((lo_b >= 1 - 2 * A2 * eta - eta**2) & (hi_b <= 1 + A2 * eta + 2 * eta**3), t4)

    s1 = 1 + 15.0 / (4.0 * eta * rmin) * log_inv
    s2 = s1 + 1 + 1.0 / (2 * eta)
    s3 = s2 + 3.0 * n / eta * log_inv
    s4 = s3 + 1 + 2.0 / eta
    s5 = s4 + 3.0 * n / eta * log_inv

    band_lo, band_hi = bid_band(eta, rmin)
    tail = B[start_band - 1 :]
    worst = max(float(band_lo - tail.min()), float(tail.max() - band_hi))
    return ConvergenceMilestones(
        t_sqrt_eta=t1, t_avg=t2, t_one=t3, D=D, A=A,
        schedule_sqrt_eta=s1, schedule_avg=s2, schedule_one=s3,
        t_avg_refined=t4, t_one_refined=t5, D_refined=D2, A_refined=A2,
        schedule_avg_refined=s4, schedule_one_refined=s5,
        band_start=start_band, band_low=band_lo, band_high=band_hi,
        band_holds=worst <= 0.0, band_worst=worst,
        eta_hypothesis=eta <= rmin**5 / 667.0,
        initial_hypothesis=bool(np.max(np.abs(b1 - 1.0)) <= 1.0 / math.sqrt(n * eta)),
    )


# -- window discrepancy -----------------------------------------------------


@dataclass(frozen=True)
class WindowStats:
    agent: int
    start: int
    length: int
    wins: int
    discrepancy: float
    guaranteed_floor: float
    m: float
    M: float

    @property
    def floor_holds(self) -> bool:
        return self.wins >= self.guaranteed_floor - INEQ_TOL


def wins_floor(m: float, M: float, rho: float, tau: int, eta: float) -> float:
    """Minimum wins over tau rounds for a pacing agent whose bids stay in [m, M]."""
    if m > M:
        raise InvalidInput(f"m={m} exceeds M={M}")
    if M <= 0 or m < 0:
        raise InvalidInput("bid range must satisfy 0 <= m <= M and M > 0")
    return rho * tau / M - (M - m) / (eta * M)


def window_discrepancy(trace: Trace, agent: int, t1: int, tau: int) -> WindowStats:
    """Wins of ``agent`` in rounds t1..t1+tau-1 against the realized-range floor.

    The bid range [m, M] covers rounds t1..t1+tau, i.e. it includes the bid
    right after the window.
    """
    if not 0 <= agent < trace.n:
        raise InvalidInput(f"agent {agent} out of range")
    if not trace.config.agents[agent].is_pacing:
        raise InvalidInput(f"agent {agent} does not run primal pacing")
    if tau < 0 or t1 < 1 or t1 + tau - 1 > trace.horizon:
        raise InvalidInput(f"window [{t1}, {t1 + tau}) outside rounds 1..{trace.horizon}")
    bids = trace.bid_path[t1 - 1 : t1 + tau, agent]
    m, M = float(bids.min()), float(bids.max())
    wins = int(np.count_nonzero(trace.winners[t1 - 1 : t1 - 1 + tau] == agent))
    rho = trace.config.agents[agent].rho
    return WindowStats(agent, t1, tau, wins, wins - rho * tau,
                       wins_floor(m, M, rho, tau, trace.config.eta), m, M)


@dataclass(frozen=True)
class WindowScan:
    """All windows of one length: row k is the window starting at ``starts[k]``."""

    length: int
    starts: np.ndarray
    wins: np.ndarray
    m: np.ndarray
    M: np.ndarray
    floor: np.ndarray
    discrepancy: np.ndarray

    def rows(self):
        for k, s in enumerate(self.starts):
            for i in range(self.wins.shape[1]):
                yield WindowStats(i, int(s), self.length, int(self.wins[k, i]),
                                  float(self.discrepancy[k, i]), float(self.floor[k, i]),
                                  float(self.m[k, i]), float(self.M[k, i]))


def _sliding(filt, a: np.ndarray, w: int) -> np.ndarray:
    """Filter over forward windows a[i : i+w] for every full window."""
    full = filt(a, size=w, axis=0, mode="nearest")
    return full[w // 2 : w // 2 + a.shape[0] - w + 1]


def window_scan(trace: Trace, tau: int, start: int = 1, stride: int = 1) -> WindowScan:
    """Vectorized window_discrepancy for every window of length tau from ``start``."""
    if tau < 1:
        raise InvalidInput("window length must be positive")
    T = trace.horizon
    if start < 1 or start + tau - 1 > T:
        return WindowScan(tau, np.zeros(0, dtype=np.int64), *(np.zeros((0, trace.n)),) * 5)
    path = trace.bid_path
    lo = _sliding(minimum_filter1d, path, tau + 1)
    hi = _sliding(maximum_filter1d, path, tau + 1)
    counts = np.zeros((T + 1, trace.n), dtype=np.int64)
    np.cumsum(trace.win_matrix, axis=0, out=counts[1:])
    starts = np.arange(start, T - tau + 2, stride)
    wins = counts[starts + tau - 1] - counts[starts - 1]
    m, M = lo[starts - 1], hi[starts - 1]
    rho = trace.config.rho[None, :]
    eta = trace.config.eta
    with np.errstate(divide="ignore", invalid="ignore"):
        floor = rho * tau / M - (M - m) / (eta * M)
    return WindowScan(tau, starts, wins, m, M, floor, wins - rho * tau)


# -- round robin ------------------------------------------------------------


class RoundRobinCondition(NamedTuple):
    holds: bool
    permutation: tuple[int, ...]
    strict_count: int


def round_robin_condition(bids, eta: float) -> RoundRobinCondition:
    """Strictly ordered bids with ``b_min > (1 - eta) * b_max``.

    ``strict_count`` counts strict links in the cyclic chain
    b_pi(1) >= ... >= b_pi(n) >= (1 - eta) b_pi(1).
    """
    b = np.asarray(bids, dtype=float)
    order = np.argsort(-b, kind="stable")
    s = b[order]
    gaps = np.append(s[:-1] - s[1:], s[-1] - (1.0 - eta) * s[0])
    strict = gaps > STRICT_TOL
    return RoundRobinCondition(bool(strict.all()), tuple(int(i) for i in order), int(strict.sum()))


def round_robin_mask(trace: Trace) -> np.ndarray:
    """Round-robin condition evaluated at every round 1..T."""
    B = np.sort(trace.bids, axis=1)[:, ::-1]
    eta = trace.config.eta
    ok = np.all(B[:, :-1] - B[:, 1:] > STRICT_TOL, axis=1)
    return ok & (B[:, -1] - (1.0 - eta) * B[:, 0] > STRICT_TOL)


def round_robin_start(winners, n: int) -> Optional[int]:
    """Earliest 1-based round from which winners cycle through all n agents."""
    w = np.asarray(winners, dtype=np.int64)
    T = w.size
    if T < n:
        return None
    bad = np.flatnonzero(w[n:] != w[:-n]) if T > n else np.zeros(0, dtype=np.int64)
    first = int(bad[-1]) + 1 if bad.size else 0
    if first > T - n:
        return None
    if np.unique(w[first : first + n]).size != n:
        return None
    return first + 1


def max_window_discrepancy(winners, rho, start: int = 1) -> float:
    """Largest |wins - rho_i * tau| over every window inside rounds start..T."""
    w = np.asarray(winners, dtype=np.int64)[start - 1 :]
    rho = np.asarray(rho, dtype=float)
    k = np.arange(w.size + 1)
    worst = 0.0
    for i, r in enumerate(rho):
        h = np.concatenate([[0], np.cumsum(w == i)]) - r * k
        worst = max(worst, float(h.max() - h.min()))
    return worst


def round_robin_schedule(n: int, eta: float) -> float:
    return n * n / (2.0 * eta) * math.log(1.0 / eta) + n + 1


@dataclass(frozen=True)
class RoundRobinReport:
    holds_from: Optional[int]
    period_start: Optional[int]
    permutation: tuple[int, ...]
    max_discrepancy: Optional[float]
    schedule_bound: float
    hypothesis_ok: bool
    absorbed: bool

    @property
    def consistent(self) -> bool:
        """Once the bid condition holds, the cycle has already started."""
        if self.holds_from is None:
            return True
        return self.period_start is not None and self.period_start <= self.holds_from

    @property
    def within_schedule(self) -> Optional[bool]:
        if not self.hypothesis_ok:
            return None
        return self.period_start is not None and self.period_start <= self.schedule_bound

    def as_dict(self) -> dict:
        out = asdict(self)
        out["consistent"] = self.consistent
        out["within_schedule"] = self.within_schedule
        return out


def _require_equal_budgets(trace: Trace):
    rho = trace.config.rho
    if np.any(np.abs(rho - 1.0 / trace.n) > BUDGET_SUM_TOL):
        raise InvalidInput("round-robin analysis needs equal budgets 1/n")


def detect_round_robin(trace: Trace) -> RoundRobinReport:
    _require_self_play(trace)
    _require_equal_budgets(trace)
    n, eta = trace.n, trace.config.eta
    mask = round_robin_mask(trace)
    hits = np.flatnonzero(mask)
    holds_from = int(hits[0]) + 1 if hits.size else None
    absorbed = holds_from is None or bool(mask[holds_from - 1 :].all())
    period_start = round_robin_start(trace.winners, n)
    if period_start is not None:
        perm = tuple(int(w) for w in trace.winners[period_start - 1 : period_start - 1 + n])
        disc = max_window_discrepancy(trace.winners, trace.config.rho, period_start)
    else:
        perm, disc = (), None
    return RoundRobinReport(
        holds_from=holds_from,
        period_start=period_start,
        permutation=perm,
        max_discrepancy=disc,
        schedule_bound=round_robin_schedule(n, eta),
        hypothesis_ok=bool(trace.bid_path[0].max() <= 1.0 / n + STRICT_TOL),
        absorbed=absorbed,
    )


def sum_bound_check(trace: Trace) -> bool:
    """True iff the bids never sum above n (equal budgets, first price)."""
    _require_equal_budgets(trace)
    return bool(np.all(trace.bid_path.sum(axis=1) <= trace.n + STEP_TOL))
