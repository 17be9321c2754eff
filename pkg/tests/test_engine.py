import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pacing_dyn.engine import (
    FIRST_PRICE,
    SECOND_PRICE,
    AgentSpec,
    FavorAgent,
    HighestIndex,
    LowestIndex,
    MarketConfig,
    MatchLearner,
    Scheduled,
    Scripted,
    SeededRandom,
    _simulate_loop,
    pacing_update,
    payment_identity,
    resolve_round,
    simulate,
)
from pacing_dyn.errors import InvalidInput


class TestResolveRound:
    def test_first_price(self):
        assert resolve_round((0.5, 0.4), FIRST_PRICE, LowestIndex()) == (0, 0.5, (0.5, 0.0))

    def test_second_price(self):
        assert resolve_round((0.5, 0.4), SECOND_PRICE, LowestIndex()) == (0, 0.4, (0.4, 0.0))

    def test_tie_highest_index(self):
        w, price, _ = resolve_round((0.5, 0.5), FIRST_PRICE, HighestIndex())
        assert (w, price) == (1, 0.5)

    def test_tie_within_tolerance(self):
        w, _, _ = resolve_round((0.5, 0.5 + 5e-10, 0.3), FIRST_PRICE, LowestIndex())
        assert w == 0
        w, _, _ = resolve_round((0.5, 0.5 + 5e-9), FIRST_PRICE, LowestIndex())
        assert w == 1

    def test_favor_agent(self):
        assert resolve_round((0.5, 0.5, 0.5), FIRST_PRICE, FavorAgent(2))[0] == 2
        # favoured agent not at the top: falls back to lowest index
        assert resolve_round((0.5, 0.5, 0.1), FIRST_PRICE, FavorAgent(2))[0] == 0

    def test_seeded_random_only_picks_tied(self):
        rng = np.random.default_rng(1)
        picks = {resolve_round((0.5, 0.1, 0.5), FIRST_PRICE, SeededRandom(1), rng=rng)[0] for _ in range(50)}
        assert picks == {0, 2}

    def test_single_bidder_second_price_is_free(self):
        assert resolve_round((0.7,), SECOND_PRICE) == (0, 0.0, (0.0,))

    def test_second_price_tie_pays_own_bid(self):
        assert resolve_round((0.5, 0.5), SECOND_PRICE, LowestIndex())[1] == 0.5

    def test_empty_bids(self):
        with pytest.raises(InvalidInput):
            resolve_round((), FIRST_PRICE)

    def test_negative_bid(self):
        with pytest.raises(InvalidInput):
            resolve_round((0.2, -0.1), FIRST_PRICE)


class TestPacingUpdate:
    @pytest.mark.parametrize(
        "args, expected",
        [((1.0, 0.5, 1.0, 0.1), 0.95), ((0.5, 0.5, 0.5, 0.1), 0.5), ((0.3, 0.5, 0.0, 0.1), 0.35)],
    )
    def test_examples(self, args, expected):
        assert pacing_update(*args) == pytest.approx(expected, abs=1e-15)

    def test_overpayment_rejected(self):
        with pytest.raises(InvalidInput):
            pacing_update(0.3, 0.5, 0.4, 0.1)

    @given(
        bid=st.floats(0, 5),
        rho=st.floats(1e-3, 1),
        frac=st.floats(0, 1),
        eta=st.floats(1e-4, 0.999),
    )
    def test_monotone_floor(self, bid, rho, frac, eta):
        nxt = pacing_update(bid, rho, frac * bid, eta)
        assert nxt >= min(bid, rho) - 1e-12
        assert nxt >= 0


class TestConfig:
    def test_eta_range(self):
        with pytest.raises(InvalidInput, match="eta"):
            MarketConfig.self_play((0.5, 0.5), 1.5, 10)

    def test_budget_sum(self):
        with pytest.raises(InvalidInput, match="sum"):
            MarketConfig.self_play((0.5, 0.4), 0.1, 10)
        MarketConfig.self_play((0.5, 0.4), 0.1, 10, normalize_budgets=False)

    def test_pacing_initial_bid_above_rho(self):
        with pytest.raises(InvalidInput):
            AgentSpec(0, 0.5, 0.6)
        AgentSpec(0, 0.5, 0.6, Scripted((0.6,)))

    def test_rho_positive(self):
        with pytest.raises(InvalidInput):
            AgentSpec(0, 0.0)

    def test_match_learner_index(self):
        with pytest.raises(InvalidInput):
            MarketConfig((AgentSpec(0, 0.5), AgentSpec(1, 0.5, 0.0, MatchLearner(5))), 3, 0.1)


class TestSimulate:
    def test_two_round_hand_trace(self):
        cfg = MarketConfig.self_play((0.5, 0.5), 0.1, 2, initial_bids=(0.5, 0.4))
        tr = simulate(cfg)
        assert list(tr.winners) == [0, 0]
        assert list(tr.prices) == [0.5, 0.5]
        np.testing.assert_allclose(tr.bids[1], (0.5, 0.45), atol=1e-15)
        np.testing.assert_allclose(tr.final_bids, (0.5, 0.5), atol=1e-15)
        lhs, rhs = payment_identity(tr, 0)
        assert lhs == pytest.approx(1.0) and rhs == pytest.approx(1.0)

    def test_round_records(self):
        tr = simulate(MarketConfig.self_play((0.5, 0.5), 0.1, 2, initial_bids=(0.5, 0.4)))
        rounds = tr.rounds
        assert [r.round for r in rounds] == [1, 2]
        assert rounds[0].payments == (0.5, 0.0)
        assert rounds[0].bids == (0.5, 0.4)

    def test_empty_horizon(self):
        tr = simulate(MarketConfig.self_play((0.3, 0.7), 0.1, 0))
        assert len(tr.rounds) == 0
        np.testing.assert_array_equal(tr.final_bids, (0.3, 0.7))
        assert payment_identity(tr, 0) == (0.0, 0.0)

    @pytest.mark.parametrize("eta", [0.1, 0.5, 0.9])
    def test_single_agent_fixed_point(self, eta):
        tr = simulate(MarketConfig.self_play((1.0,), eta, 10))
        assert np.all(tr.winners == 0) and np.all(tr.prices == 1.0)
        assert np.all(tr.bid_path == 1.0)
        lhs, rhs = payment_identity(tr, 0)
        assert lhs == 10 and rhs == 10

    def test_scripted_too_short(self):
        agents = (AgentSpec(0, 0.5), AgentSpec(1, 0.5, 0.0, Scripted((0.1, 0.2))))
        with pytest.raises(InvalidInput):
            simulate(MarketConfig(agents, 3, 0.1))

    def test_scripted_capped_at_budget(self):
        agents = (AgentSpec(0, 0.5, 0.1), AgentSpec(1, 0.5, 0.0, Scripted((1.5, 1.5, 1.5, 1.5))))
        tr = simulate(MarketConfig(agents, 4, 0.1))
        # budget 2: first bid capped at 2 wins at 1.5, the rest is capped at 0.5
        assert tr.total_payment(1) <= 2.0 + 1e-12
        assert tr.bids[1, 1] == pytest.approx(0.5)

    def test_match_learner_copies_bid(self):
        agents = (AgentSpec(0, 0.5, 0.3), AgentSpec(1, 0.5, 0.0, MatchLearner(0)))
        tr = simulate(MarketConfig(agents, 20, 0.1, tie_break=LowestIndex()))
        np.testing.assert_array_equal(tr.bids[:, 0], tr.bids[:, 1])

    def test_match_learner_capped_at_budget(self):
        agents = (AgentSpec(0, 0.5, 0.3), AgentSpec(1, 0.5, 0.0, MatchLearner(0)))
        tr = simulate(MarketConfig(agents, 20, 0.1, tie_break=HighestIndex()))
        assert tr.total_payment(1) <= 10.0 + 1e-12
        spent = np.concatenate([[0.0], np.cumsum(tr.payments[:, 1])[:-1]])
        np.testing.assert_allclose(tr.bids[:, 1], np.minimum(tr.bids[:, 0], 10.0 - spent), atol=1e-12)

    def test_scheduled_tie_break_replays_pattern(self):
        pattern = (1, 0, 0, 1, 1)
        agents = (AgentSpec(0, 0.5, 0.3), AgentSpec(1, 0.5, 0.0, MatchLearner(0)))
        tr = simulate(MarketConfig(agents, 5, 0.1, tie_break=Scheduled(pattern)))
        assert tuple(tr.winners) == pattern

    def test_trace_is_immutable(self):
        tr = simulate(MarketConfig.self_play((0.5, 0.5), 0.1, 5))
        with pytest.raises(ValueError):
            tr.bids[0, 0] = 3.0

    def test_state_accounting(self):
        tr = simulate(MarketConfig.self_play((0.3, 0.7), 0.05, 200))
        s = tr.state(1, 201)
        assert s.wins == tr.wins(1)
        assert s.spent == pytest.approx(tr.total_payment(1))
        assert s.bid == tr.final_bids[1]

    @pytest.mark.parametrize("fmt", [FIRST_PRICE, SECOND_PRICE])
    @pytest.mark.parametrize("tb", [LowestIndex(), HighestIndex(), FavorAgent(1)])
    def test_compiled_path_matches_reference(self, fmt, tb):
        cfg = MarketConfig.self_play((0.2, 0.3, 0.5), 0.02, 5000, initial_bids=(0.2, 0.1, 0.05),
                                     format=fmt, tie_break=tb)
        fast, ref = simulate(cfg), _simulate_loop(cfg)
        np.testing.assert_array_equal(fast.bids, ref.bids)
        np.testing.assert_array_equal(fast.winners, ref.winners)
        np.testing.assert_array_equal(fast.prices, ref.prices)
        np.testing.assert_array_equal(fast.final_bids, ref.final_bids)

    def test_deterministic(self):
        agents = (AgentSpec(0, 0.5, 0.2), AgentSpec(1, 0.5, 0.0, Scripted(tuple(np.linspace(0, 1, 300)))))
        cfg = MarketConfig(agents, 300, 0.1, SECOND_PRICE, SeededRandom(7))
        a, b = simulate(cfg), simulate(cfg)
        np.testing.assert_array_equal(a.bids, b.bids)
        np.testing.assert_array_equal(a.winners, b.winners)


@st.composite
def markets(draw):
    n = draw(st.sampled_from([1, 2, 3, 5]))
    T = draw(st.integers(0, 300))
    eta = draw(st.floats(0.001, 0.95))
    raw = draw(st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n))
    rho = [r / sum(raw) for r in raw]
    agents = []
    for i in range(n):
        frac = draw(st.floats(0, 1))
        if i and draw(st.booleans()):
            bids = draw(st.lists(st.floats(0, 3), min_size=T, max_size=T))
            agents.append(AgentSpec(i, rho[i], None, Scripted(tuple(bids))))
        else:
            agents.append(AgentSpec(i, rho[i], rho[i] * frac))
    fmt = draw(st.sampled_from([FIRST_PRICE, SECOND_PRICE]))
    tb = draw(st.sampled_from([LowestIndex(), HighestIndex(), SeededRandom(3)]))
    return MarketConfig(tuple(agents), T, eta, fmt, tb, normalize_budgets=False)


@settings(max_examples=150, deadline=None)
@given(markets())
def test_pacing_invariants(cfg):
    tr = simulate(cfg)
    T = cfg.horizon
    for a in cfg.agents:
        if not a.is_pacing:
            continue
        path = tr.bid_path[:, a.id]
        assert np.all(path >= 0)
        assert np.all(path[1:] >= np.minimum(path[:-1], a.rho) - 1e-12)
        lhs, rhs = payment_identity(tr, a.id)
        assert abs(lhs - rhs) <= 1e-6 * max(T, 1)
        assert lhs <= a.rho * T + 1e-9
    # every round: one payer, price at most the winner's bid
    assert np.all(tr.prices <= tr.bids[np.arange(T), tr.winners] + 1e-15)
    assert np.all(np.count_nonzero(tr.payments > 0, axis=1) <= 1)
