"""Compiled self-play loop.

Must reproduce ``engine._simulate_loop`` bit for bit: same comparison
threshold, same update expression, no fast-math.
"""
from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None

_TIE_LOWEST, _TIE_HIGHEST, _TIE_FAVOR = 0, 1, 2


def _self_play_loop(b0, rho, eta, T, second_price, tie_mode, favor, tie_tol):
    n = b0.shape[0]
    bids = np.empty((T, n))
    winners = np.empty(T, dtype=np.int64)
    prices = np.empty(T)
    b = b0.copy()
    for t in range(T):
        m = b[0]
        for i in range(1, n):
            if b[i] > m:
                m = b[i]
        thr = m - tie_tol
        w = -1
        if tie_mode == _TIE_HIGHEST:
            for i in range(n - 1, -1, -1):
                if b[i] >= thr:
                    w = i
                    break
        else:
            if tie_mode == _TIE_FAVOR and b[favor] >= thr:
                w = favor
            else:
                for i in range(n):
                    if b[i] >= thr:
                        w = i
                        break
        if second_price:
            if n == 1:
                price = 0.0
            else:
                price = -1.0
                for i in range(n):
                    if i != w and b[i] > price:
                        price = b[i]
                if price > b[w]:
                    price = b[w]
        else:
            price = b[w]
        for i in range(n):
            bids[t, i] = b[i]
        winners[t] = w
        prices[t] = price
        for i in range(n):
            if i == w:
                b[i] = b[i] + eta * (rho[i] - price)
            else:
                b[i] = b[i] + eta * (rho[i] - 0.0)
    return bids, winners, prices, b


_compiled = njit(cache=True)(_self_play_loop) if njit is not None else None


def simulate_self_play(config):
    """Run an all-pacing market through the compiled loop; None if unsupported."""
    from .engine import TIE_TOL, FavorAgent, HighestIndex, SECOND_PRICE, Trace

    if _compiled is None:
        return None
    tb = config.tie_break
    if isinstance(tb, HighestIndex):
        mode, favor = _TIE_HIGHEST, 0
    elif isinstance(tb, FavorAgent):
        mode, favor = _TIE_FAVOR, tb.agent
    else:
        mode, favor = _TIE_LOWEST, 0
    bids, winners, prices, final = _compiled(
        config.initial_bids.astype(np.float64),
        config.rho.astype(np.float64),
        float(config.eta),
        int(config.horizon),
        config.format is SECOND_PRICE,
        mode,
        favor,
        TIE_TOL,
    )
    return Trace(config, bids, winners, prices, final)
