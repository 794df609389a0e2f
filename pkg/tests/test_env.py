from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ledger_wealth, product_wealth, random_simplex, share_ledger_wealth
from rdnn import env, synthetic
from rdnn.env import EnvConfig, PortfolioState
from rdnn.errors import (
    EmptyReturns,
    InvalidWeights,
    LengthMismatch,
    LogOfNonPositive,
    NonPositiveGrossReturn,
    NonPositivePrice,
    UnknownAsset,
)

FRICTIONLESS = EnvConfig(commission_rate=0.0)


def random_scenario(rng, m, T):
    closes = 100 * np.exp(np.cumsum(rng.normal(0, 0.02, size=(T + 1, m)), axis=0))
    weights = np.array([random_simplex(rng, m + 1) for _ in range(T)])
    return weights, closes


class TestEffectiveWeights:
    def test_unchanged_prices(self):
        prev = np.array([0.2, 0.3, 0.5])
        np.testing.assert_allclose(env.effective_weights(prev, np.ones(3)), prev)

    def test_single_stock(self):
        np.testing.assert_allclose(env.effective_weights([0.0, 1.0], [1.0, 1.37]), [0.0, 1.0])

    def test_hand_value(self):
        out = env.effective_weights([0.5, 0.5], [1.0, 1.1])
        np.testing.assert_allclose(out, [0.5 / 1.05, 0.55 / 1.05])

    def test_non_positive_gross(self):
        with pytest.raises(NonPositiveGrossReturn):
            env.effective_weights([0.5, 0.5], [1.0, 0.0])


class TestStep:
    @pytest.mark.parametrize("delta", [0.0, 0.0001, 0.05])
    def test_all_bond_is_free(self, delta):
        cfg = EnvConfig(commission_rate=delta)
        state = PortfolioState.initial(cfg, 2)
        new, r, cost = env.step(state, [1.0, 0.0, 0.0], [1.0, 1.3, 0.7], cfg)
        assert cost == 0.0 and r == 0.0 and new.wealth == cfg.initial_wealth

    def test_two_steps_frictionless(self):
        res = env.run_episode(FRICTIONLESS, [[0, 1], [0, 1]], [[100.0], [110.0], [99.0]])
        assert res.final_wealth == pytest.approx(100_000 * 1.1 * 0.9, rel=1e-14)

    def test_no_turnover_no_cost(self):
        cfg = EnvConfig(commission_rate=0.0001)
        state = PortfolioState(3, 1000.0, np.array([0.5, 0.5]), np.array([0.5, 0.5]))
        _, r, cost = env.step(state, [0.5, 0.5], [1.0, 1.0], cfg)
        assert cost == 0.0 and r == 0.0

    def test_cost_factor(self):
        cfg = EnvConfig(commission_rate=0.01)
        state = PortfolioState.initial(cfg, 1)
        _, r, cost = env.step(state, [0.0, 1.0], [1.0, 1.0], cfg)
        assert cost == pytest.approx(0.01)
        assert r == pytest.approx(-0.01)

    @pytest.mark.parametrize("bad", [[0.6, 0.6], [1.2, -0.2], [np.nan, 1.0]])
    def test_invalid_target(self, bad):
        with pytest.raises(InvalidWeights):
            env.step(PortfolioState.initial(EnvConfig(), 1), bad, [1.0, 1.0], EnvConfig())


class TestRunEpisode:
    def test_empty(self):
        res = env.run_episode(EnvConfig(), np.zeros((0, 3)), np.full((1, 2), 10.0))
        assert res.final_wealth == 100_000 and res.returns.size == 0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            env.run_episode(EnvConfig(), [[1, 0]], [[1.0], [1.0], [1.0]])

    def test_accepts_history(self):
        hist = synthetic.drift_market(days=5)
        w = np.tile([0.2, 0.4, 0.4], (4, 1))
        a = env.run_episode(EnvConfig(), w, hist)
        b = env.run_episode(EnvConfig(), w, hist.close)
        np.testing.assert_array_equal(a.wealth, b.wealth)

    @pytest.mark.parametrize("seed", range(10))
    def test_frictionless_product(self, seed):
        rng = np.random.default_rng(seed)
        weights, closes = random_scenario(rng, 3, 12)
        res = env.run_episode(FRICTIONLESS, weights, closes)
        g = env.gross_returns(closes)
        assert res.final_wealth == pytest.approx(100_000 * np.prod((weights * g).sum(axis=1)), rel=1e-12)
        assert res.final_wealth == pytest.approx(product_wealth(res.returns), rel=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_ledger_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        weights, closes = random_scenario(rng, 3, 5)
        cfg = EnvConfig(commission_rate=0.0001)
        res = env.run_episode(cfg, weights, closes)
        np.testing.assert_allclose(res.wealth, ledger_wealth(weights, closes, 0.0001), rtol=1e-12)

    def test_risk_free_rate(self):
        cfg = EnvConfig(risk_free_rate=0.001)
        res = env.run_episode(cfg, np.tile([1.0, 0.0], (10, 1)), np.full((11, 1), 5.0))
        assert res.final_wealth == pytest.approx(100_000 * 1.001**10)
        np.testing.assert_allclose(res.wealth, ledger_wealth(np.tile([1.0, 0.0], (10, 1)),
                                                             np.full((11, 1), 5.0), 0.0001, rf=0.001))

    def test_series(self):
        weights = np.array([[0.0, 1.0], [0.5, 0.5]])
        res = env.run_episode(EnvConfig(commission_rate=0.001), weights, [[10.0], [10.0], [10.0]])
        np.testing.assert_allclose(res.leverage, [1.0, 0.5])
        np.testing.assert_allclose(res.turnover, [1.0, 0.5])
        assert res.commission[0] == pytest.approx(100.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.02), st.floats(0.0, 0.02))
    def test_wealth_decreases_in_commission(self, seed, d1, d2):
        lo, hi = sorted((d1, d2))
        rng = np.random.default_rng(seed)
        weights, closes = random_scenario(rng, 2, 8)
        a = env.run_episode(EnvConfig(commission_rate=lo), weights, closes).final_wealth
        b = env.run_episode(EnvConfig(commission_rate=hi), weights, closes).final_wealth
        assert b <= a * (1 + 1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(1.0, 1e7))
    def test_homogeneous_in_initial_wealth(self, seed, w0):
        rng = np.random.default_rng(seed)
        weights, closes = random_scenario(rng, 2, 6)
        a = env.run_episode(EnvConfig(initial_wealth=w0), weights, closes)
        b = env.run_episode(EnvConfig(initial_wealth=1.0), weights, closes)
        np.testing.assert_allclose(a.returns, b.returns, rtol=1e-12, atol=1e-15)
        assert a.final_wealth == pytest.approx(w0 * b.final_wealth, rel=1e-12)


class TestShareEpisode:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_share_ledger(self, seed):
        rng = np.random.default_rng(seed)
        closes = 100 * np.exp(np.cumsum(rng.normal(0, 0.02, size=(9, 3)), axis=0))
        targets = rng.uniform(0, 600, size=(8, 3))
        cfg = EnvConfig(commission_rate=0.001)
        res = env.run_share_episode(cfg, targets, closes)
        np.testing.assert_allclose(res.wealth, share_ledger_wealth(targets, closes, 0.001), rtol=1e-12)
        assert np.all(res.leverage <= env.share_budget_cap(0.001) + 1e-12)

    def test_negative_targets_rejected(self):
        with pytest.raises(InvalidWeights):
            env.run_share_episode(EnvConfig(), [[-1.0]], [[1.0], [1.0]])

    def test_holdings(self):
        res = env.run_share_episode(EnvConfig(), [[10.0], [20.0]], [[5.0], [5.0], [5.0]])
        np.testing.assert_array_equal(res.holdings, [[10.0], [20.0]])


class TestSharesDelta:
    def test_no_trade(self):
        assert env.shares_delta(1e5, 0.3, 0.3, 50.0) == 0.0

    def test_hand_value(self):
        assert env.shares_delta(100_000, 0.5, 0.0, 100.0) == pytest.approx(500.0)

    def test_zero_price(self):
        with pytest.raises(NonPositivePrice):
            env.shares_delta(1e5, 0.5, 0.0, 0.0)


class TestUtility:
    def test_log_of_zero_returns(self):
        assert env.utility([0.0, 0.0, 0.0], "log") == 0.0

    def test_sharpe_hand_value(self):
        assert env.utility([0.01, 0.03], "sharpe") == pytest.approx(0.02 / np.std([0.01, 0.03], ddof=1))
        assert env.utility([0.01, 0.03], "sharpe") == pytest.approx(1.41421356, rel=1e-6)

    def test_sharpe_single_return(self):
        assert env.utility([0.002], "sharpe") == pytest.approx(0.002 / 1e-12)

    def test_empty(self):
        with pytest.raises(EmptyReturns):
            env.utility([], "log")

    def test_log_domain(self):
        with pytest.raises(LogOfNonPositive):
            env.utility([0.1, -1.0], "log")

    @pytest.mark.parametrize("kind", ["log", "sharpe"])
    def test_gradient_matches_differences(self, kind):
        r = np.random.default_rng(3).normal(0.001, 0.01, size=7)
        g = env.utility_grad(r, kind)
        eps = 1e-7
        fd = [(env.utility(r + eps * e, kind) - env.utility(r - eps * e, kind)) / (2 * eps)
              for e in np.eye(7)]
        np.testing.assert_allclose(g, fd, rtol=1e-6)


class TestBuyAndHold:
    def test_flat(self):
        hist = synthetic.make_history(np.full(5, 50.0), ["X"])
        np.testing.assert_allclose(env.buy_and_hold(FRICTIONLESS, hist, "X"), 100_000)

    def test_doubling(self):
        hist = synthetic.make_history(np.array([10.0, 15.0, 20.0]), ["X"])
        assert env.buy_and_hold(FRICTIONLESS, hist, "X")[-1] == pytest.approx(200_000)

    def test_with_commission(self):
        hist = synthetic.make_history(np.array([10.0, 15.0]), ["X"])
        assert env.buy_and_hold(EnvConfig(), hist, "X")[-1] == pytest.approx(149_985.0)

    def test_unknown(self):
        hist = synthetic.make_history(np.array([10.0, 15.0]), ["X"])
        with pytest.raises(UnknownAsset):
            env.buy_and_hold(EnvConfig(), hist, "Y")


class TestLeverage:
    @pytest.mark.parametrize("w,expected", [([1, 0, 0], 0.0), ([0, 0.5, 0.5], 1.0), ([0.3, 0.7], 0.7)])
    def test_values(self, w, expected):
        assert env.gross_leverage(w) == pytest.approx(expected)
