"""Repeated single-item auctions with budgeted bidders.

Every agent submits one bid per round; the highest bid wins and pays either its
own bid (first price) or the highest competing bid (second price).  Agents
running the primal pacing rule move their bid by ``eta * (rho - payment)``
after every round.
"""
from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Union

import numpy as np

from .errors import InvalidInput

TIE_TOL = 1e-9
BUDGET_SUM_TOL = 1e-12


class AuctionFormat(str, Enum):
    FIRST_PRICE = "first"
    SECOND_PRICE = "second"


FIRST_PRICE = AuctionFormat.FIRST_PRICE
SECOND_PRICE = AuctionFormat.SECOND_PRICE


# -- bidding policies -------------------------------------------------------


@dataclass(frozen=True)
class PrimalPacing:
    pass


@dataclass(frozen=True)
class Scripted:
    """Fixed bid schedule, one entry per round; capped at the remaining budget."""

    bids: tuple[float, ...]

    def __post_init__(self):
        bids = tuple(float(b) for b in self.bids)
        if any(not math.isfinite(b) or b < 0 for b in bids):
            raise InvalidInput("scripted bids must be finite and non-negative")
        object.__setattr__(self, "bids", bids)


@dataclass(frozen=True)
class MatchLearner:
    """Bid exactly what agent ``learner`` bids this round."""

    learner: int = 0


Policy = Union[PrimalPacing, Scripted, MatchLearner]


# -- tie-break rules --------------------------------------------------------


@dataclass(frozen=True)
class LowestIndex:
    pass


@dataclass(frozen=True)
class HighestIndex:
    pass


@dataclass(frozen=True)
class SeededRandom:
    seed: int = 0


@dataclass(frozen=True)
class FavorAgent:
    agent: int


@dataclass(frozen=True)
class Scheduled:
    """Per-round preferred winner among the tied bidders (round t uses entry t-1).

    Falls back to the lowest index when the preferred agent is not tied for the
    top bid.  Used to replay a prescribed win sequence under exact bid ties.
    """

    winners: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "winners", tuple(int(w) for w in self.winners))


TieBreak = Union[LowestIndex, HighestIndex, SeededRandom, FavorAgent, Scheduled]


# -- configuration ----------------------------------------------------------


@dataclass(frozen=True)
class AgentSpec:
    id: int
    rho: float
    initial_bid: float | None = None
    policy: Policy = field(default_factory=PrimalPacing)

    def __post_init__(self):
        rho = float(self.rho)
        if not (0.0 < rho <= 1.0):
            raise InvalidInput(f"agent {self.id}: rho must lie in (0, 1], got {rho}")
        b1 = rho if self.initial_bid is None else float(self.initial_bid)
        if not math.isfinite(b1) or b1 < 0:
            raise InvalidInput(f"agent {self.id}: initial_bid must be non-negative, got {b1}")
        if isinstance(self.policy, PrimalPacing) and b1 > rho:
            raise InvalidInput(
                f"agent {self.id}: pacing agents need initial_bid <= rho ({b1} > {rho})"
            )
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "initial_bid", b1)

    @property
    def is_pacing(self) -> bool:
        return isinstance(self.policy, PrimalPacing)


@dataclass(frozen=True)
class MarketConfig:
    agents: tuple[AgentSpec, ...]
    horizon: int
    eta: float
    format: AuctionFormat = FIRST_PRICE
    tie_break: TieBreak = field(default_factory=LowestIndex)
    normalize_budgets: bool = True

    def __post_init__(self):
        agents = tuple(self.agents)
        if not agents:
            raise InvalidInput("a market needs at least one agent")
        for i, a in enumerate(agents):
            if a.id != i:
                raise InvalidInput(f"agent ids must be 0..n-1 in order, got {a.id} at {i}")
        if int(self.horizon) != self.horizon or self.horizon < 0:
            raise InvalidInput(f"horizon must be a non-negative integer, got {self.horizon}")
        eta = float(self.eta)
        if not (0.0 < eta < 1.0):
            raise InvalidInput(f"eta must lie in (0,1), got {eta}")
        if self.normalize_budgets:
            total = math.fsum(a.rho for a in agents)
            if abs(total - 1.0) > BUDGET_SUM_TOL:
                raise InvalidInput(f"budget shares must sum to 1, got {total!r}")
        n = len(agents)
        for a in agents:
            if isinstance(a.policy, MatchLearner):
                j = a.policy.learner
                if not (0 <= j < n) or j == a.id:
                    raise InvalidInput(f"agent {a.id}: invalid learner index {j}")
                if isinstance(agents[j].policy, MatchLearner):
                    raise InvalidInput("a MatchLearner cannot follow another MatchLearner")
        if isinstance(self.tie_break, FavorAgent) and not (0 <= self.tie_break.agent < n):
            raise InvalidInput(f"FavorAgent index {self.tie_break.agent} out of range")
        object.__setattr__(self, "agents", agents)
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "format", AuctionFormat(self.format))

    @classmethod
    def self_play(cls, rho, eta, horizon, initial_bids=None, **kwargs) -> MarketConfig:
        """All agents run primal pacing; initial bids default to ``rho``."""
        rho = [float(r) for r in rho]
        if initial_bids is None:
            initial_bids = rho
        agents = tuple(AgentSpec(i, r, b) for i, (r, b) in enumerate(zip(rho, initial_bids)))
        return cls(agents, horizon, eta, **kwargs)

    @property
    def n(self) -> int:
        return len(self.agents)

    @property
    def rho(self) -> np.ndarray:
        return np.array([a.rho for a in self.agents])

    @property
    def initial_bids(self) -> np.ndarray:
        return np.array([a.initial_bid for a in self.agents])

    @property
    def is_self_play(self) -> bool:
        return all(a.is_pacing for a in self.agents)


# -- per-round records ------------------------------------------------------


@dataclass(frozen=True)
class AgentState:
    bid: float
    spent: float
    wins: int


class RoundRecord(NamedTuple):
    round: int
    bids: tuple[float, ...]
    winner: int
    price: float
    payments: tuple[float, ...]


class _RoundView(Sequence):
    """Lazy list of RoundRecord over the trace arrays."""

    def __init__(self, trace: Trace):
        self._trace = trace

    def __len__(self):
        return self._trace.horizon

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return [self[i] for i in range(*idx.indices(len(self)))]
        if idx < 0:
            idx += len(self)
        if not 0 <= idx < len(self):
            raise IndexError(idx)
        tr = self._trace
        w = int(tr.winners[idx])
        price = float(tr.prices[idx])
        payments = [0.0] * tr.n
        payments[w] = price
        return RoundRecord(idx + 1, tuple(float(b) for b in tr.bids[idx]), w, price, tuple(payments))


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Trace:
    """Immutable outcome of one simulation.

    ``bids[t-1]`` holds the bid vector of round t and ``final_bids`` the bids
    that would be submitted in round T+1.  Non-pacing agents report their last
    submitted bid there (their initial bid when T = 0).
    """

    config: MarketConfig
    bids: np.ndarray
    winners: np.ndarray
    prices: np.ndarray
    final_bids: np.ndarray

    def __post_init__(self):
        n, T = self.config.n, self.config.horizon
        bids = _frozen(self.bids, np.float64).reshape(T, n)
        winners = _frozen(self.winners, np.int64).reshape(T)
        prices = _frozen(self.prices, np.float64).reshape(T)
        final = _frozen(self.final_bids, np.float64).reshape(n)
        if T and (winners.min() < 0 or winners.max() >= n):
            raise InvalidInput("winner index out of range")
        object.__setattr__(self, "bids", bids)
        object.__setattr__(self, "winners", winners)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "final_bids", final)

    @classmethod
    def from_rounds(cls, config: MarketConfig, rounds: Sequence[RoundRecord], final_bids) -> Trace:
        if len(rounds) != config.horizon:
            raise InvalidInput(f"expected {config.horizon} rounds, got {len(rounds)}")
        for i, r in enumerate(rounds, start=1):
            if r.round != i:
                raise InvalidInput(f"round numbers must be consecutive from 1, got {r.round} at {i}")
        bids = np.array([r.bids for r in rounds], dtype=np.float64).reshape(len(rounds), config.n)
        return cls(
            config,
            bids,
            np.array([r.winner for r in rounds], dtype=np.int64),
            np.array([r.price for r in rounds], dtype=np.float64),
            final_bids,
        )

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def horizon(self) -> int:
        return self.config.horizon

    @property
    def rounds(self) -> Sequence[RoundRecord]:
        return _RoundView(self)

    @property
    def bid_path(self) -> np.ndarray:
        """Bids of rounds 1..T+1 as a (T+1, n) array."""
        return np.vstack([self.bids, self.final_bids[None, :]])

    @property
    def win_matrix(self) -> np.ndarray:
        x = np.zeros((self.horizon, self.n), dtype=bool)
        x[np.arange(self.horizon), self.winners] = True
        return x

    @property
    def payments(self) -> np.ndarray:
        p = np.zeros((self.horizon, self.n))
        p[np.arange(self.horizon), self.winners] = self.prices
        return p

    @property
    def spent(self) -> np.ndarray:
        """Cumulative spend after each round, shape (T, n)."""
        return np.cumsum(self.payments, axis=0)

    def wins(self, agent: int) -> int:
        return int(np.count_nonzero(self.winners == agent))

    def total_payment(self, agent: int) -> float:
        return math.fsum(self.prices[self.winners == agent])

    def state(self, agent: int, t: int) -> AgentState:
        """State of ``agent`` at the start of round t (1 <= t <= T+1)."""
        if not 1 <= t <= self.horizon + 1:
            raise InvalidInput(f"round {t} outside 1..{self.horizon + 1}")
        mask = self.winners[: t - 1] == agent
        return AgentState(
            bid=float(self.bid_path[t - 1, agent]),
            spent=float(np.cumsum(self.prices[: t - 1][mask])[-1]) if mask.any() else 0.0,
            wins=int(np.count_nonzero(mask)),
        )


# -- mechanics --------------------------------------------------------------


def _pick_winner(bids: Sequence[float], tie_break: TieBreak, t: int, rng) -> int:
    threshold = max(bids) - TIE_TOL
    if isinstance(tie_break, LowestIndex):
        return next(i for i, b in enumerate(bids) if b >= threshold)
    if isinstance(tie_break, HighestIndex):
        return next(i for i in reversed(range(len(bids))) if bids[i] >= threshold)
    if isinstance(tie_break, (FavorAgent, Scheduled)):
        pref = tie_break.agent if isinstance(tie_break, FavorAgent) else tie_break.winners[t - 1]
        if 0 <= pref < len(bids) and bids[pref] >= threshold:
            return pref
        return next(i for i, b in enumerate(bids) if b >= threshold)
    if isinstance(tie_break, SeededRandom):
        tied = [i for i, b in enumerate(bids) if b >= threshold]
        if len(tied) == 1:
            return tied[0]
        if rng is None:
            rng = np.random.default_rng(tie_break.seed)
        return tied[int(rng.integers(len(tied)))]
    raise InvalidInput(f"unknown tie-break rule {tie_break!r}")


def _price(bids: Sequence[float], winner: int, fmt: AuctionFormat) -> float:
    if fmt is FIRST_PRICE:
        return bids[winner]
    others = [b for i, b in enumerate(bids) if i != winner]
    # a tie-break may pick a bid up to TIE_TOL below a rival's; never charge above own bid
    return min(max(others), bids[winner]) if others else 0.0


def resolve_round(bids, format=FIRST_PRICE, tie_break: TieBreak | None = None, *, round_index=1, rng=None):
    """Winner, price and payment vector for one sealed-bid round."""
    bids = [float(b) for b in bids]
    if not bids:
        raise InvalidInput("empty bid vector")
    if any(not math.isfinite(b) or b < 0 for b in bids):
        raise InvalidInput("bids must be finite and non-negative")
    tie_break = LowestIndex() if tie_break is None else tie_break
    fmt = AuctionFormat(format)
    winner = _pick_winner(bids, tie_break, round_index, rng)
    price = _price(bids, winner, fmt)
    payments = [0.0] * len(bids)
    payments[winner] = price
    return winner, price, tuple(payments)


def pacing_update(bid: float, rho: float, payment: float, eta: float) -> float:
    if bid < 0:
        raise InvalidInput(f"bid must be non-negative, got {bid}")
    if not (0.0 < eta < 1.0):
        raise InvalidInput(f"eta must lie in (0,1), got {eta}")
    if payment < 0 or payment > bid:
        raise InvalidInput(f"payment {payment} outside [0, bid={bid}]")
    return bid + eta * (rho - payment)


def simulate(config: MarketConfig) -> Trace:
    T = config.horizon
    for a in config.agents:
        if isinstance(a.policy, Scripted) and len(a.policy.bids) < T:
            raise InvalidInput(
                f"agent {a.id}: scripted schedule has {len(a.policy.bids)} bids, horizon is {T}"
            )
    if isinstance(config.tie_break, Scheduled) and len(config.tie_break.winners) < T:
        raise InvalidInput("scheduled tie-break shorter than the horizon")
    if config.is_self_play and isinstance(config.tie_break, (LowestIndex, HighestIndex, FavorAgent)):
        from ._kernels import simulate_self_play

        out = simulate_self_play(config)
        if out is not None:
            return out
    return _simulate_loop(config)


def _simulate_loop(config: MarketConfig) -> Trace:
    n, T, eta = config.n, config.horizon, config.eta
    fmt, tb = config.format, config.tie_break
    agents = config.agents
    rho = [a.rho for a in agents]
    budget = [a.rho * T for a in agents]
    pacing = [i for i, a in enumerate(agents) if a.is_pacing]
    scripted = [i for i, a in enumerate(agents) if isinstance(a.policy, Scripted)]
    matchers = [i for i, a in enumerate(agents) if isinstance(a.policy, MatchLearner)]
    rng = np.random.default_rng(tb.seed) if isinstance(tb, SeededRandom) else None

    cur = [a.initial_bid for a in agents]
    spent = [0.0] * n
    out_bids = np.empty((T, n))
    out_winners = np.empty(T, dtype=np.int64)
    out_prices = np.empty(T)

    for t in range(T):
        bids = list(cur)
        for i in scripted:
            bids[i] = min(agents[i].policy.bids[t], max(budget[i] - spent[i], 0.0))
        for i in matchers:
            bids[i] = min(bids[agents[i].policy.learner], max(budget[i] - spent[i], 0.0))
        w = _pick_winner(bids, tb, t + 1, rng)
        price = _price(bids, w, fmt)
        for i in pacing:
            cur[i] = bids[i] + eta * (rho[i] - (price if i == w else 0.0))
        for i in scripted + matchers:
            cur[i] = bids[i]
        spent[w] += price
        out_bids[t] = bids
        out_winners[t] = w
        out_prices[t] = price
    return Trace(config, out_bids, out_winners, out_prices, np.array(cur))


def payment_identity(trace: Trace, agent: int) -> tuple[float, float]:
    """Realized total payment versus ``rho*T + (b1 - b_{T+1}) / eta``."""
    spec = trace.config.agents[agent]
    if not spec.is_pacing:
        raise InvalidInput(f"agent {agent} does not run primal pacing")
    T, eta = trace.horizon, trace.config.eta
    lhs = trace.total_payment(agent)
    rhs = spec.rho * T + (spec.initial_bid - float(trace.final_bids[agent])) / eta
    return lhs, rhs
