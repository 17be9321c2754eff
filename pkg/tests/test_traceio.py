import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pacing_dyn.engine import (
    SECOND_PRICE,
    AgentSpec,
    FavorAgent,
    MarketConfig,
    MatchLearner,
    Scripted,
    SeededRandom,
    simulate,
)
from pacing_dyn.errors import InvalidInput
from pacing_dyn.traceio import HEADER, config_from_dict, config_to_dict, read_trace, sidecar_path, write_trace


def assert_same(a, b):
    assert a.config == b.config
    for name in ("bids", "winners", "prices", "final_bids"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    np.testing.assert_array_equal(a.payments, b.payments)


def test_header_and_rows(tmp_path):
    tr = simulate(MarketConfig.self_play((0.5, 0.5), 0.1, 2, initial_bids=(0.5, 0.4)))
    path = write_trace(tr, tmp_path / "t.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == HEADER
    assert lines[1:] == [
        "1,0,0.5,1,0.5,0.5",
        "1,1,0.40000000000000002,0,0,0",
        "2,0,0.5,1,0.5,1",
        "2,1,0.45000000000000001,0,0,0",
    ]
    meta = json.loads(sidecar_path(path).read_text())
    assert meta["final_bids"] == [0.5, 0.5]


def test_round_trip_mixed_market(tmp_path):
    agents = (
        AgentSpec(0, 0.3, 0.1),
        AgentSpec(1, 0.3, 0.0, Scripted(tuple(np.linspace(0, 1, 500) ** 2))),
        AgentSpec(2, 0.4, 0.0, MatchLearner(0)),
    )
    tr = simulate(MarketConfig(agents, 500, 1 / 7, SECOND_PRICE, SeededRandom(5)))
    assert_same(tr, read_trace(write_trace(tr, tmp_path / "m.csv")))


def test_round_trip_empty(tmp_path):
    tr = simulate(MarketConfig.self_play((0.5, 0.5), 0.1, 0))
    assert_same(tr, read_trace(write_trace(tr, tmp_path / "e.csv")))


@settings(max_examples=25, deadline=None)
@given(eta=st.floats(1e-4, 0.99), T=st.integers(1, 200), seed=st.integers(0, 1000))
def test_round_trip_bit_exact(tmp_path_factory, eta, T, seed):
    rng = np.random.default_rng(seed)
    rho = rng.dirichlet(np.ones(3))
    rho[-1] = 1 - sum(rho[:-1])
    tr = simulate(MarketConfig.self_play(rho, eta, T, initial_bids=rho * rng.uniform(size=3)))
    path = tmp_path_factory.mktemp("rt") / "t.csv"
    assert_same(tr, read_trace(write_trace(tr, path)))


def test_config_dict_round_trip():
    cfg = MarketConfig(
        (AgentSpec(0, 0.5), AgentSpec(1, 0.5, 0.2, Scripted((0.1, 0.2)))), 2, 0.3,
        tie_break=FavorAgent(1),
    )
    assert config_from_dict(json.loads(json.dumps(config_to_dict(cfg)))) == cfg


def test_missing_sidecar(tmp_path):
    tr = simulate(MarketConfig.self_play((0.5, 0.5), 0.1, 3))
    path = write_trace(tr, tmp_path / "t.csv")
    sidecar_path(path).unlink()
    with pytest.raises(InvalidInput):
        read_trace(path)


def test_bad_header(tmp_path):
    tr = simulate(MarketConfig.self_play((0.5, 0.5), 0.1, 3))
    path = write_trace(tr, tmp_path / "t.csv")
    text = path.read_text().replace("round,", "rnd,", 1)
    path.write_text(text)
    with pytest.raises(InvalidInput, match="header"):
        read_trace(path)


def test_large_trace_chunks(tmp_path):
    tr = simulate(MarketConfig.self_play((0.5, 0.5), 0.001, 450_001))
    assert_same(tr, read_trace(write_trace(tr, tmp_path / "big.csv")))
