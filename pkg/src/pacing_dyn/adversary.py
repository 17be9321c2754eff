"""One pacing Learner against a budgeted, win-maximizing Optimizer.

After bid matching, the Optimizer's strategy is a binary win sequence ``x``.
The Learner's bid then evolves as ``b' = b + eta * (rho_L - b * (1 - x))``
and the Optimizer pays ``b`` for every round it takes.  This module solves
that problem exactly (small T) or on a grid, and evaluates the Lagrangian
certificate that caps the Optimizer's wins.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational

import numpy as np

from .engine import (
    FIRST_PRICE,
    AgentSpec,
    LowestIndex,
    MarketConfig,
    MatchLearner,
    Scheduled,
    Scripted,
    Trace,
    simulate,
)
from .errors import GridOverflow, InstanceTooLarge, InvalidInput, ReductionViolation

MAX_ENUM_T = 24


def as_fraction(x) -> Fraction:
    """Exact rational for ``x``; floats are read by their shortest decimal repr."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, Rational)):
        return Fraction(x)
    if isinstance(x, float):
        if not math.isfinite(x):
            raise InvalidInput(f"non-finite value {x}")
        return Fraction(repr(x))
    return Fraction(x)


@dataclass(frozen=True)
class AdversaryProblem:
    rho_L: float | Fraction
    rho_O: float | Fraction
    horizon: int
    eta: float | Fraction
    initial_bid: float | Fraction | None = None

    def __post_init__(self):
        if self.initial_bid is None:
            object.__setattr__(self, "initial_bid", self.rho_L)
        if not (self.rho_L > 0 and self.rho_O > 0):
            raise InvalidInput("budget shares must be positive")
        if not (0 < self.eta < 1):
            raise InvalidInput(f"eta must lie in (0,1), got {self.eta}")
        if int(self.horizon) != self.horizon or self.horizon < 0:
            raise InvalidInput(f"horizon must be a non-negative integer, got {self.horizon}")
        if self.initial_bid < 0:
            raise InvalidInput("initial bid must be non-negative")
        object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def budget(self) -> Fraction:
        return as_fraction(self.rho_O) * self.horizon

    @property
    def meets_cap_conditions(self) -> bool:
        return self.initial_bid <= self.rho_L

    def exact(self) -> tuple[Fraction, Fraction, Fraction, Fraction]:
        return (
            as_fraction(self.rho_L),
            as_fraction(self.rho_O),
            as_fraction(self.eta),
            as_fraction(self.initial_bid),
        )

    def as_dict(self) -> dict:
        return {
            "rho_L": float(self.rho_L),
            "rho_O": float(self.rho_O),
            "T": self.horizon,
            "eta": float(self.eta),
            "b1": float(self.initial_bid),
        }


@dataclass(frozen=True)
class WinSequence:
    x: tuple[int, ...]
    wins: int
    cost: Fraction
    bid_path: tuple[Fraction, ...]
    feasible: bool


def win_sequence(problem: AdversaryProblem, x) -> WinSequence:
    """Evaluate the Learner's bid path and the Optimizer's cost for ``x`` exactly."""
    x = tuple(int(v) for v in x)
    if len(x) != problem.horizon or any(v not in (0, 1) for v in x):
        raise InvalidInput(f"x must be a binary vector of length {problem.horizon}")
    rl, _, eta, b = problem.exact()
    path = [b]
    cost = Fraction(0)
    for xt in x:
        if xt:
            cost += b
        b = b + eta * (rl - b * (1 - xt))
        path.append(b)
    return WinSequence(x, sum(x), cost, tuple(path), cost <= problem.budget)


# -- exact solver -----------------------------------------------------------


class _Scaled:
    """Integer image of the problem.

    With eta = a/q and D the common denominator of rho_L and b1, the Learner's
    bid in round t is ``B_t / (D * q**(t-1))`` for an integer ``B_t``; costs
    are accumulated in units of ``1 / (D * q**(T-1))``.
    """

    def __init__(self, problem: AdversaryProblem):
        rl, ro, eta, b1 = problem.exact()
        T = problem.horizon
        a, q = eta.numerator, eta.denominator
        D = math.lcm(rl.denominator, b1.denominator)
        R = int(rl * D)
        self.T = T
        self.lose_mul = q - a
        self.win_mul = q
        self.drift = [a * R * q ** (t - 1) for t in range(1, T + 1)]
        self.weight = [q ** (T - t) for t in range(1, T + 1)]
        self.B1 = int(b1 * D)
        scale = D * q ** max(T - 1, 0)
        self.budget = math.floor(ro * T * scale)
        self.rho_units = R * q ** max(T - 1, 0)

    def upper_bound(self, t, B, spent, wins):
        """Wins so far plus an optimistic count of affordable future wins."""
        remaining = self.T - t + 1
        floor_bid = min(B * self.weight[t - 1], self.rho_units)
        if floor_bid <= 0:
            return wins + remaining
        return wins + min(remaining, (self.budget - spent) // floor_bid)


def _best_value(sp: _Scaled) -> int:
    best = 0

    def dfs(t, B, spent, wins):
        nonlocal best
        if wins > best:
            best = wins
        if t > sp.T or sp.upper_bound(t, B, spent, wins) <= best:
            return
        cost = spent + B * sp.weight[t - 1]
        if cost <= sp.budget:
            dfs(t + 1, B * sp.win_mul + sp.drift[t - 1], cost, wins + 1)
        dfs(t + 1, B * sp.lose_mul + sp.drift[t - 1], spent, wins)

    dfs(1, sp.B1, 0, 0)
    return best


def _lex_first(sp: _Scaled, target: int) -> list[int]:
    x: list[int] = []

    def dfs(t, B, spent, wins):
        if wins == target:
            x.extend([0] * (sp.T - t + 1))
            return True
        if t > sp.T or sp.upper_bound(t, B, spent, wins) < target:
            return False
        x.append(0)
        if dfs(t + 1, B * sp.lose_mul + sp.drift[t - 1], spent, wins):
            return True
        x.pop()
        cost = spent + B * sp.weight[t - 1]
        if cost <= sp.budget:
            x.append(1)
            if dfs(t + 1, B * sp.win_mul + sp.drift[t - 1], cost, wins + 1):
                return True
            x.pop()
        return False

    if not dfs(1, sp.B1, 0, 0):
        raise AssertionError("optimal value not reproducible")
    return x


def enumerate_optimal(problem: AdversaryProblem) -> WinSequence:
    """Exact maximum number of Optimizer wins over all 2**T win sequences.

    Branch-and-bound over the binary tree in exact integer arithmetic; among
    optimal sequences the lexicographically smallest is returned.
    """
    if problem.horizon > MAX_ENUM_T:
        raise InstanceTooLarge(f"T={problem.horizon} exceeds enumeration limit {MAX_ENUM_T}")
    if problem.horizon == 0:
        return win_sequence(problem, ())
    sp = _Scaled(problem)
    best = _best_value(sp)
    return win_sequence(problem, _lex_first(sp, best))


# -- grid dynamic program ---------------------------------------------------

OPTIMISTIC = "optimistic"
PESSIMISTIC = "pessimistic"
_EPS = 1e-9


def dp_optimal(problem: AdversaryProblem, bid_grid: int, budget_grid: int, rounding: str = PESSIMISTIC):
    """Grid dynamic program over (round, Learner bid, Optimizer spend).

    ``bid_grid`` and ``budget_grid`` count cells on [0, max(2, b1 + 1)] and
    [0, rho_O * T].  Optimistic rounding moves every bid down and every spend
    down, so its value bounds the exact optimum from above; pessimistic
    rounding moves both up, so its sequence is feasible.  Returns
    ``(wins_bound, sequence)`` with the sequence re-evaluated exactly.
    """
    rounding = rounding.lower()
    if rounding not in (OPTIMISTIC, PESSIMISTIC):
        raise InvalidInput(f"rounding must be optimistic or pessimistic, got {rounding!r}")
    if bid_grid < 2 or budget_grid < 2:
        raise InvalidInput("grids must have at least 2 cells")
    T = problem.horizon
    if T == 0:
        return 0, win_sequence(problem, ())
    opt = rounding == OPTIMISTIC
    rho_l, eta, b1 = float(problem.rho_L), float(problem.eta), float(problem.initial_bid)
    budget = float(problem.rho_O) * T
    b_cap = max(2.0, b1 + 1.0)
    nb, nc = int(bid_grid), int(budget_grid)
    db, dc = b_cap / nb, budget / nc

    def snap(y, step):
        return np.floor(y / step - _EPS) if opt else np.ceil(y / step + _EPS)

    bval = np.arange(nb + 1) * db
    lose_idx = snap((1.0 - eta) * bval + eta * rho_l, db).astype(np.int64)
    win_idx = snap(bval + eta * rho_l, db).astype(np.int64)
    lose_over = (lose_idx > nb) | (lose_idx < 0)
    win_over = (win_idx > nb) | (win_idx < 0)
    lose_idx = np.clip(lose_idx, 0, nb)
    win_idx = np.clip(win_idx, 0, nb)

    spend = np.arange(nc + 1) * dc
    after = spend[None, :] + bval[:, None]
    slack = _EPS * max(1.0, budget)
    afford = after <= budget + slack if opt else after <= budget - slack
    spend_idx = np.clip(snap(after, dc), 0, nc).astype(np.int64)
    cols = nc + 1
    lose_flat = (lose_idx[:, None] * cols + np.arange(cols)[None, :]).ravel().astype(np.intp)
    win_flat = (win_idx[:, None] * cols + spend_idx).ravel().astype(np.intp)
    afford_flat = afford.ravel()

    i0 = int(snap(np.array(b1), db))
    top = _check_reachable(T, i0, cols, lose_flat, win_flat, afford_flat,
                           np.repeat(lose_over, cols), np.repeat(win_over, cols))
    # rows above the highest reachable bid never matter; unreachable targets are clipped
    size = (top + 1) * cols
    lose_flat = np.minimum(lose_flat[:size], size - 1)
    win_flat = np.minimum(win_flat[:size], size - 1)
    afford_flat = afford_flat[:size]

    value = np.zeros(afford_flat.size, dtype=np.int32)
    take_win = []
    for _ in range(T):
        v_lose = value[lose_flat]
        v_win = np.where(afford_flat, value[win_flat] + 1, -1)
        choice = v_win > v_lose
        take_win.append(np.packbits(choice))
        value = np.maximum(v_lose, v_win)
    take_win.reverse()
    wins_bound = int(value[i0 * cols])

    x = []
    state = i0 * cols
    for t in range(T):
        bit = (int(take_win[t][state >> 3]) >> (7 - (state & 7))) & 1
        x.append(int(bit))
        state = int(win_flat[state] if bit else lose_flat[state])
    seq = win_sequence(problem, x)
    if not opt and not seq.feasible:
        raise AssertionError("pessimistic grid returned an infeasible sequence")
    return wins_bound, seq


def _check_reachable(T, i0, cols, lose_flat, win_flat, afford_flat, lose_over, win_over):
    """Raise GridOverflow if a reachable move leaves the bid grid; return the top reachable row."""
    reach = np.zeros(afford_flat.size, dtype=bool)
    reach[i0 * cols] = True
    top = i0
    for t in range(1, T + 1):
        winning = reach & afford_flat
        if (reach & lose_over).any() or (winning & win_over).any():
            raise GridOverflow(f"a reachable Learner bid leaves the grid range in round {t}")
        nxt = np.zeros_like(reach)
        nxt[lose_flat[reach]] = True
        nxt[win_flat[winning]] = True
        reach = nxt
        top = max(top, int(np.flatnonzero(reach)[-1]) // cols)
    return top


# -- Lagrangian certificate -------------------------------------------------


@dataclass(frozen=True)
class LagrangianCertificate:
    """Multiplier and the windowed bound ``linear_coeff * tau + g(b)``."""

    rho_L: float
    rho_O: float
    eta: float
    lam: float
    linear_coeff: float
    g_quadratic: float
    g_linear: float
    g_constant: float

    @classmethod
    def for_problem(cls, rho_L, rho_O, eta) -> LagrangianCertificate:
        rl, ro, eta = float(rho_L), float(rho_O), float(eta)
        s2 = (rl + ro) ** 2
        return cls(
            rho_L=rl,
            rho_O=ro,
            eta=eta,
            lam=rl / s2,
            linear_coeff=(ro**2 + (ro**2 + rl**2) * eta) / s2,
            g_quadratic=0.5 / (eta * s2),
            g_linear=-(2 * ro + rl) / (eta * s2),
            g_constant=2.0 / eta,
        )

    def g(self, b):
        return (self.g_quadratic * b + self.g_linear) * b + self.g_constant

    @property
    def g_argmin(self) -> float:
        return 2 * self.rho_O + self.rho_L


def interval_lagrangian_bound(cert: LagrangianCertificate, tau: int, b: float) -> float:
    if tau < 0 or b < 0:
        raise InvalidInput("tau and b must be non-negative")
    return cert.linear_coeff * tau + cert.g(b)


def induction_step_slack(cert: LagrangianCertificate, b):
    """``linear_coeff`` minus the larger one-step increment of the bound.

    Non-negative slack at every b is exactly what the induction over the
    window length needs.
    """
    eta, rl, lam = cert.eta, cert.rho_L, cert.lam
    b = np.asarray(b, dtype=float)
    gb = cert.g(b)
    take = 1.0 - lam * b + cert.g(b + eta * rl) - gb
    leave = cert.g(b + eta * (rl - b)) - gb
    return cert.linear_coeff - np.maximum(take, leave)


def lagrangian_value(problem: AdversaryProblem, seq: WinSequence, lam) -> float:
    lam = as_fraction(lam)
    _, ro, _, _ = problem.exact()
    total = lam * problem.horizon * ro
    for xt, b in zip(seq.x, seq.bid_path):
        if xt:
            total += 1 - lam * b
    return float(total)


def win_cap_bound(rho_L, rho_O, T, eta) -> float:
    """Cap on Optimizer wins; the 3*sqrt(T) form applies when eta = 1/sqrt(T)."""
    share = rho_O / (rho_L + rho_O)
    cap = (share + eta) * T + 2.0 / eta
    if T > 0 and abs(eta - 1.0 / math.sqrt(T)) <= 1e-12:
        cap = min(cap, share * T + 3.0 * math.sqrt(T))
    return cap


def sequence_table(problem: AdversaryProblem, dtype=np.float64):
    """All 2**T win sequences with float bid paths.

    Returns ``(x, bids)`` where ``x`` has shape (2**T, T) and ``bids`` has
    shape (2**T, T+1); row k encodes k in binary, first round most significant.
    """
    T = problem.horizon
    if T > MAX_ENUM_T:
        raise InstanceTooLarge(f"T={T} exceeds enumeration limit {MAX_ENUM_T}")
    k = np.arange(2**T, dtype=np.int64)
    x = ((k[:, None] >> np.arange(T - 1, -1, -1)[None, :]) & 1).astype(dtype)
    rl, eta = float(problem.rho_L), float(problem.eta)
    bids = np.empty((2**T, T + 1), dtype=dtype)
    bids[:, 0] = float(problem.initial_bid)
    for t in range(T):
        b = bids[:, t]
        bids[:, t + 1] = b + eta * (rl - b * (1.0 - x[:, t]))
    return x, bids


def certificate_violations(problem: AdversaryProblem, tol: float = 1e-9):
    """Check the windowed bound on every suffix window of every sequence.

    Returns ``(violations, worst_slack)`` where slack is bound minus sum.
    """
    cert = LagrangianCertificate.for_problem(problem.rho_L, problem.rho_O, problem.eta)
    T = problem.horizon
    x, bids = sequence_table(problem)
    terms = x * (1.0 - cert.lam * bids[:, :T])
    suffix = np.zeros((x.shape[0], T + 1))
    suffix[:, :T] = np.cumsum(terms[:, ::-1], axis=1)[:, ::-1]
    tau = T - np.arange(T + 1)
    bound = cert.linear_coeff * tau[None, :] + cert.g(bids)
    slack = bound - suffix
    return int(np.count_nonzero(slack < -tol)), float(slack.min())


def lambda_sweep(problem: AdversaryProblem, lambdas) -> list[tuple[float, float]]:
    """Dual value ``max_x L(x, lam)`` for each multiplier, by enumeration."""
    x, bids = sequence_table(problem)
    wins = x.sum(axis=1)
    cost = (x * bids[:, :-1]).sum(axis=1)
    budget = float(problem.rho_O) * problem.horizon
    return [(float(lam), float(lam * budget + np.max(wins - lam * cost))) for lam in lambdas]


# -- bid-matching reduction -------------------------------------------------


def match_bids_reduction(learner: AgentSpec, optimizer_bids, format=FIRST_PRICE, *, eta,
                         optimizer_rho=None, tie_break=None) -> tuple[Trace, Trace]:
    """Replay an Optimizer bid vector, then the same win pattern at the Learner's bid.

    The Learner is agent 0 and the Optimizer agent 1.  Raises
    ReductionViolation if the matched replay changes the win count, raises
    the Optimizer's total payment, or raises any Learner bid.
    """
    if not learner.is_pacing:
        raise InvalidInput("the learner must run primal pacing")
    bids = tuple(float(b) for b in optimizer_bids)
    T = len(bids)
    rho_o = 1.0 - learner.rho if optimizer_rho is None else float(optimizer_rho)
    lrn = AgentSpec(0, learner.rho, learner.initial_bid)
    original_cfg = MarketConfig(
        (lrn, AgentSpec(1, rho_o, 0.0, Scripted(bids))),
        T, eta, format, tie_break or LowestIndex(), normalize_budgets=False,
    )
    original = simulate(original_cfg)
    matched_cfg = MarketConfig(
        (lrn, AgentSpec(1, rho_o, 0.0, MatchLearner(0))),
        T, eta, format, Scheduled(tuple(int(w) for w in original.winners)), normalize_budgets=False,
    )
    transformed = simulate(matched_cfg)
    violations = reduction_violations(original, transformed)
    if violations:
        raise ReductionViolation(violations)
    return original, transformed


def reduction_violations(original: Trace, transformed: Trace, tol: float = 1e-12) -> list[str]:
    out = []
    if original.wins(1) != transformed.wins(1):
        out.append(f"optimizer wins {original.wins(1)} -> {transformed.wins(1)}")
    if not np.array_equal(original.winners, transformed.winners):
        out.append("win pattern changed")
    if transformed.total_payment(1) > original.total_payment(1) + tol:
        out.append(
            f"optimizer cost rose {original.total_payment(1)!r} -> {transformed.total_payment(1)!r}"
        )
    rises = np.nonzero(transformed.bid_path[:, 0] > original.bid_path[:, 0] + tol)[0]
    if rises.size:
        out.append(f"learner bid rose in round {int(rises[0]) + 1}")
    return out
