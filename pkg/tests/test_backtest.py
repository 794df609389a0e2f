from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from oracles import ledger_wealth
from rdnn import synthetic
from rdnn.backtest import BacktestReport, backtest, max_drawdown, write_overlay, write_series
from rdnn.data import IndicatorConfig, build_features
from rdnn.env import EnvConfig
from rdnn.errors import CalendarMismatch
from rdnn.policy import PolicyConfig, forward_sequence, init_params
from rdnn.selection import MaskParameters

CFG = IndicatorConfig(ema_periods=(5,), rsi_period=None, macd_periods=None, normalization_window=10)


@pytest.fixture(scope="module")
def market():
    hist = synthetic.random_pool(3, 120, seed=7)
    return hist, build_features(hist, CFG)


def pinned(feature_dim, m, bias):
    """A policy whose softmax output ignores its inputs."""
    p = init_params(PolicyConfig(head="softmax", hidden_sizes=(4, 4, 4)), feature_dim, m)
    arrays = dict(p.arrays)
    arrays["out.a"] = np.zeros_like(arrays["out.a"])
    arrays["out.b"] = np.asarray(bias, dtype=float)
    return p.with_arrays(arrays)


class TestBacktest:
    def test_all_bond_is_flat(self, market):
        hist, feats = market
        p = pinned(feats.dim, 3, [0.0, -1e4, -1e4, -1e4])
        r = backtest(p, feats, hist, EnvConfig(), baseline="S000")
        np.testing.assert_array_equal(r.equity, 100_000.0)
        np.testing.assert_array_equal(r.leverage, 0.0)
        np.testing.assert_array_equal(r.turnover, 0.0)

    def test_full_weight_matches_buy_and_hold(self, market):
        hist, feats = market
        p = pinned(feats.dim, 3, [-1e4, -1e4, 0.0, -1e4])
        r = backtest(p, feats, hist, EnvConfig(commission_rate=0.0), baseline="S001")
        np.testing.assert_allclose(r.equity, r.baseline, rtol=1e-12)
        np.testing.assert_allclose(r.leverage, 1.0)

    def test_ledger_oracle(self, market):
        hist, feats = market
        p = init_params(PolicyConfig(hidden_sizes=(8, 8, 4), seed=3), feats.dim, 3)
        start, end = feats.calendar[10], feats.calendar[60]
        r = backtest(p, feats, hist, EnvConfig(commission_rate=0.001), "S002", start, end)
        part = feats.between(start, end)
        actions, _ = forward_sequence(part.values[:-1], p)
        closes = hist.between(start, end).close
        oracle = ledger_wealth(actions, closes, 0.001)
        np.testing.assert_allclose(r.equity, oracle, rtol=1e-12)
        assert r.summary["final_wealth"] == r.equity[-1]
        assert r.summary["outperformance"] == pytest.approx(r.equity[-1] - r.baseline[-1])
        assert len(r.dates) == len(r.equity) == len(r.leverage) == len(r.turnover) == 51
        assert r.turnover[-1] == 0.0 and r.commission[-1] == 0.0

    def test_share_mode(self, market):
        hist, feats = market
        p = init_params(PolicyConfig(mode="share", hidden_sizes=(8, 8, 4)), feats.dim, 3)
        r = backtest(p, feats, hist, EnvConfig())
        assert np.all(r.equity > 0)
        assert np.all(r.leverage[:-1] <= (1 - 1e-4) / (1 + 1e-4) + 1e-12)
        assert "outperformance" not in r.summary

    def test_with_selection(self, market):
        hist, feats = market
        p = init_params(PolicyConfig(hidden_sizes=(8, 8, 4)), feats.dim, 3)
        r = backtest(p, feats, hist, mask_params=MaskParameters.init(len(feats.channels), 4),
                     basket_size=2, selection_mode="turnover")
        trace = pd.DataFrame(r.baskets)
        assert trace.groupby("date")["selected"].sum().eq(2).all()
        assert len(trace) == 3 * (len(feats.calendar) - 1)

    def test_no_look_ahead(self, market):
        hist, _ = market
        end = hist.calendar[100]
        p = init_params(PolicyConfig(hidden_sizes=(8, 8, 4), seed=1), 3 * len(CFG.channel_names()), 3)
        full = backtest(p, build_features(hist, CFG), hist, baseline="S000", start=hist.calendar[60], end=end)
        cut_hist = hist.slice_days(0, 101)
        cut = backtest(p, build_features(cut_hist, CFG), cut_hist, baseline="S000",
                       start=hist.calendar[60], end=end)
        assert full.to_dict() == cut.to_dict()

    def test_calendar_mismatch(self, market):
        hist, feats = market
        p = init_params(PolicyConfig(hidden_sizes=(4, 4, 4)), feats.dim, 3)
        with pytest.raises(CalendarMismatch):
            backtest(p, feats, hist.slice_days(0, 100))
        with pytest.raises(CalendarMismatch):
            backtest(p, feats, hist, start=feats.calendar[-1])


class TestReports:
    @pytest.fixture
    def report(self, market):
        hist, feats = market
        p = init_params(PolicyConfig(hidden_sizes=(4, 4, 4)), feats.dim, 3)
        return backtest(p, feats, hist, baseline="S000")

    def test_json_roundtrip(self, report, tmp_path):
        report.write_json(tmp_path / "r.json")
        back = BacktestReport.read_json(tmp_path / "r.json")
        assert back.to_dict() == report.to_dict()
        assert (tmp_path / "r.json").read_text().count('"schema_version": 1') == 1

    def test_no_baseline_serializes_null(self, market, tmp_path):
        hist, feats = market
        p = init_params(PolicyConfig(hidden_sizes=(4, 4, 4)), feats.dim, 3)
        r = backtest(p, feats, hist)
        r.write_json(tmp_path / "r.json")
        assert "NaN" not in (tmp_path / "r.json").read_text()
        assert BacktestReport.read_json(tmp_path / "r.json").summary == r.summary

    def test_series_files(self, report, tmp_path):
        paths = write_series(report, tmp_path)
        assert sorted(p.name for p in paths) == ["baseline.csv", "equity.csv", "leverage.csv", "turnover.csv"]
        eq = pd.read_csv(tmp_path / "equity.csv", float_precision="round_trip")
        assert list(eq.columns) == ["date", "value"]
        np.testing.assert_array_equal(eq["value"], report.equity)

    def test_overlay(self, report, tmp_path):
        write_overlay([report, report], tmp_path, ["calm", "bold"])
        frame = pd.read_csv(tmp_path / "leverage.csv")
        assert list(frame.columns) == ["date", "leverage_calm", "leverage_bold"]

    def test_overlay_mismatch(self, report, market, tmp_path):
        hist, feats = market
        p = init_params(PolicyConfig(hidden_sizes=(4, 4, 4)), feats.dim, 3)
        other = backtest(p, feats, hist, start=feats.calendar[5])
        with pytest.raises(CalendarMismatch):
            write_overlay([report, other], tmp_path)

    def test_max_drawdown(self):
        assert max_drawdown([1.0, 2.0, 1.0, 3.0]) == pytest.approx(0.5)
        assert max_drawdown([1.0, 1.1, 1.2]) == 0.0
