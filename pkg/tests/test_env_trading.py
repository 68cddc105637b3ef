import numpy as np
import pytest

from helpers import make_dataset, random_ohlc

from marketforge.envs import EnvConfig, TradingEnv
from marketforge.errors import EpisodeFinished, NonFiniteAction, ShapeMismatch


def flat_dataset(t_len=10, n=1, price=10.0):
    return make_dataset(np.full((t_len, n), price))


# ----------------------------------------------------------------------- reset


def test_reset_initial_value():
    env = TradingEnv(flat_dataset(), EnvConfig(initial_capital=5000.0))
    state = env.reset(seed=1)
    assert state.value == 5000.0
    assert state.balance == 5000.0
    assert np.all(state.shares == 0)
    assert state.t == 0


def test_reset_deterministic_and_stateless():
    env = TradingEnv(flat_dataset(), EnvConfig(initial_capital=1000.0, hmax=5))
    s1 = env.reset(seed=3)
    # burn a full episode with arbitrary actions
    rng = np.random.default_rng(0)
    done = False
    while not done:
        done = env.step(rng.uniform(-1, 1, size=1)).done
    s2 = env.reset(seed=3)
    assert s1.balance == s2.balance
    assert np.array_equal(s1.shares, s2.shares)
    assert np.array_equal(s1.prices, s2.prices)


# ------------------------------------------------------------------------ step


def test_hold_on_flat_prices_zero_reward():
    env = TradingEnv(flat_dataset(), EnvConfig(initial_capital=1000.0))
    env.reset(seed=0)
    res = env.step(np.zeros(1))
    assert res.reward == 0.0
    assert res.info["cost"] == 0.0
    assert res.info["v_next"] == res.info["v"]


def test_paper_cost_example_buy_10_at_10():
    # 0.1% per trade: buying 10 shares at price 10 debits exactly 100.10
    env = TradingEnv(
        flat_dataset(price=10.0),
        EnvConfig(initial_capital=1000.0, hmax=10, cost_rate=0.001),
    )
    state = env.reset(seed=0)
    res = env.step(np.array([1.0]))
    assert res.state.balance == 1000.0 - 10 * 10 * (1 + 0.001)
    spent = state.balance - res.state.balance
    assert abs(spent - 100.10) < 1e-12
    assert res.state.shares[0] == 10


def test_sell_clipped_to_holdings_without_shorting():
    env = TradingEnv(flat_dataset(price=10.0, t_len=6), EnvConfig(initial_capital=1000.0, hmax=8))
    env.reset(seed=0)
    env.step(np.array([5 / 8]))  # buy 5
    res = env.step(np.array([-1.0]))  # request sell 8
    assert res.info["executed"][0] == -5
    assert res.state.shares[0] == 0


def test_short_allowed_goes_negative():
    env = TradingEnv(
        flat_dataset(price=10.0, t_len=6),
        EnvConfig(initial_capital=1000.0, hmax=8, allow_short=True),
    )
    env.reset(seed=0)
    res = env.step(np.array([-0.5]))
    assert res.state.shares[0] == -4


def test_buy_clipped_to_cash_without_margin():
    env = TradingEnv(
        flat_dataset(price=10.0, t_len=6),
        EnvConfig(initial_capital=50.0, hmax=100, cost_rate=0.001),
    )
    env.reset(seed=0)
    res = env.step(np.array([1.0]))  # wants 100 shares, can afford 4
    assert res.state.shares[0] == 4
    assert res.state.balance >= 0.0


def test_margin_allowed_goes_negative_balance():
    env = TradingEnv(
        flat_dataset(price=10.0, t_len=6),
        EnvConfig(initial_capital=50.0, hmax=100, cost_rate=0.0, allow_margin=True),
    )
    env.reset(seed=0)
    res = env.step(np.array([1.0]))
    assert res.state.shares[0] == 100
    assert res.state.balance < 0


def test_risk_override_liquidates_everything():
    ds = make_dataset(np.full((8, 2), 10.0))
    turb = np.zeros((8, 2))
    turb[3, :] = 99.0  # crash signal at bar 3
    ds = ds.with_columns(["turbulence"], [turb])
    env = TradingEnv(
        ds,
        EnvConfig(
            initial_capital=1000.0, hmax=5, risk_indicator="turbulence", risk_threshold=50.0
        ),
    )
    env.reset(seed=0)
    env.step(np.array([3 / 5, 2 / 5]))  # hold (3, 2)
    env.step(np.zeros(2))
    env.step(np.zeros(2))
    res = env.step(np.array([1.0, 1.0]))  # at bar 3: buys requested, override sells all
    assert res.info["risk_triggered"]
    assert list(res.info["executed"]) == [-3, -2]
    assert np.all(res.state.shares == 0)


def test_sells_execute_before_buys():
    # with zero spare cash the buy is affordable only because the sell fills first
    ds = make_dataset(np.column_stack([np.full(5, 10.0), np.full(5, 10.0)]))
    env = TradingEnv(ds, EnvConfig(initial_capital=100.0, hmax=10, cost_rate=0.0))
    env.reset(seed=0)
    env.step(np.array([1.0, 0.0]))  # all cash into 10 shares of asset 0
    state = env.step(np.array([-1.0, 1.0])).state
    assert state.shares[0] == 0
    assert state.shares[1] == 10
    assert state.balance == 0.0


def test_episode_finished_and_nonfinite_guards():
    env = TradingEnv(flat_dataset(t_len=3), EnvConfig(initial_capital=100.0))
    env.reset(seed=0)
    env.step(np.zeros(1))
    res = env.step(np.zeros(1))
    assert res.done
    with pytest.raises(EpisodeFinished):
        env.step(np.zeros(1))
    env.reset(seed=0)
    with pytest.raises(NonFiniteAction):
        env.step(np.array([np.nan]))
    with pytest.raises(ShapeMismatch):
        env.step(np.zeros(2))


# ------------------------------------------------------------------ invariants


def test_accounting_identity_random_actions():
    ds = random_ohlc(t_len=300, n=3, seed=7)
    env = TradingEnv(ds, EnvConfig(initial_capital=1_000_000.0, hmax=50))
    env.reset(seed=11)
    rng = np.random.default_rng(2)
    done = False
    while not done:
        res = env.step(rng.uniform(-1, 1, size=3))
        v, v_next = res.info["v"], res.info["v_next"]
        h_post = res.state.shares
        t = res.state.t
        dp = ds.closes[t] - ds.closes[t - 1]
        lhs = v_next - v
        rhs = float(h_post @ dp) - res.info["cost"]
        assert abs(lhs - rhs) <= 1e-8 * max(abs(v), 1.0)
        done = res.done


def test_non_negativity_under_arbitrary_actions():
    ds = random_ohlc(t_len=200, n=2, seed=3)
    env = TradingEnv(ds, EnvConfig(initial_capital=10_000.0, hmax=30))
    env.reset(seed=5)
    rng = np.random.default_rng(8)
    done = False
    while not done:
        res = env.step(rng.uniform(-1, 1, size=2))
        assert res.state.balance >= 0.0
        assert np.all(res.state.shares >= 0)
        done = res.done


def test_no_money_creation_on_flat_prices():
    env = TradingEnv(flat_dataset(t_len=20, price=25.0), EnvConfig(initial_capital=10_000.0, hmax=10))
    env.reset(seed=0)
    v_prev = 10_000.0
    actions = [0.7, -0.3, 1.0, -1.0, 0.5]
    for a in actions:
        res = env.step(np.array([a]))
        if np.any(res.info["executed"] != 0):
            assert res.info["v_next"] < v_prev
        v_prev = res.info["v_next"]


def test_full_trajectory_deterministic():
    ds = random_ohlc(t_len=100, n=2, seed=1)
    actions = np.random.default_rng(4).uniform(-1, 1, size=(99, 2))

    def run():
        env = TradingEnv(ds, EnvConfig(initial_capital=50_000.0, hmax=20))
        env.reset(seed=9)
        trace = []
        for a in actions:
            res = env.step(a)
            trace.append((res.state.balance, tuple(res.state.shares), res.reward))
            if res.done:
                break
        return trace

    assert run() == run()


def test_observation_vector_shape():
    ds = random_ohlc(t_len=50, n=2, seed=0)
    env = TradingEnv(ds, EnvConfig(initial_capital=1000.0))
    state = env.reset(seed=0)
    assert state.as_vector().shape == (env.observation_dim,)
