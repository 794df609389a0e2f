"""Frozen-policy backtests, buy-and-hold comparison and plot-ready series."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from . import env as envmod
from ._io import atomic_write
from .data import FeatureMatrix, PriceHistory
from .env import EnvConfig
from .errors import CalendarMismatch
from .policy import WEIGHT_MODE, PolicyParameters, forward_sequence
from .selection import MaskParameters, joint_forward

SCHEMA_VERSION = 1
SERIES = ("equity", "baseline", "leverage", "turnover", "commission")


def max_drawdown(equity) -> float:
    eq = np.asarray(equity, dtype=float)
    if eq.size == 0:
        return 0.0
    peak = np.maximum.accumulate(eq)
    return float(np.max(1.0 - eq / peak))


@dataclass
class BacktestReport:
    """Per-date series over the test calendar.

    ``equity[t]`` is the wealth at close t before that close's rebalance;
    ``leverage``, ``turnover`` and ``commission`` describe the rebalance at
    close t (the last close has no rebalance, so its leverage is the
    drifted holding and its turnover and commission are zero).
    """

    dates: list[str]
    equity: np.ndarray
    baseline: np.ndarray
    leverage: np.ndarray
    turnover: np.ndarray
    commission: np.ndarray
    baseline_ticker: str | None = None
    baskets: list[dict] = field(default_factory=list)

    @property
    def summary(self) -> dict:
        eq = self.equity
        returns = eq[1:] / eq[:-1] - 1.0
        out = {
            "final_wealth": float(eq[-1]),
            "total_return": float(eq[-1] / eq[0] - 1.0),
            "sharpe": envmod.utility(returns, "sharpe") if returns.size else 0.0,
            "max_drawdown": max_drawdown(eq),
            "total_commission": float(self.commission.sum()),
        }
        if self.baseline_ticker is not None:
            out["baseline_final_wealth"] = float(self.baseline[-1])
            out["outperformance"] = float(eq[-1] - self.baseline[-1])
        return out

    def to_dict(self) -> dict:
        doc = {"schema_version": SCHEMA_VERSION, "dates": list(self.dates),
               "baseline_ticker": self.baseline_ticker}
        for name in SERIES:
            doc[name] = np.asarray(getattr(self, name), dtype=float).tolist()
        if self.baseline_ticker is None:
            doc["baseline"] = None
        doc["summary"] = self.summary
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "BacktestReport":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report version {doc.get('schema_version')}")
        series = {s: np.asarray(doc[s], dtype=float) for s in SERIES if doc[s] is not None}
        series.setdefault("baseline", np.full(len(doc["dates"]), np.nan))
        return cls(doc["dates"], baseline_ticker=doc.get("baseline_ticker"), **series)

    def write_json(self, path) -> None:
        atomic_write(path, json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def read_json(cls, path) -> "BacktestReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"date": self.dates})
        for name in SERIES:
            frame[name] = getattr(self, name)
        return frame


def _restrict(features: FeatureMatrix, history: PriceHistory, start, end):
    feats = features.between(start, end)
    if len(feats.calendar) < 2:
        raise CalendarMismatch("test range needs at least two feature days")
    hist = history.between(feats.calendar[0], feats.calendar[-1])
    if not np.array_equal(feats.calendar, hist.calendar) or feats.assets != hist.assets:
        raise CalendarMismatch("features and prices disagree on the test calendar or assets")
    return feats, hist


def backtest(params: PolicyParameters, features: FeatureMatrix, history: PriceHistory,
             env_cfg: EnvConfig | None = None, baseline: str | None = None, start=None, end=None,
             mask_params: MaskParameters | None = None, basket_size: int = 20,
             selection_mode: str = "free", turnover_cap: float = 0.5) -> BacktestReport:
    """Roll the frozen policy over ``[start, end]`` from an all-cash book.

    Decisions are taken at every close but the last; ``mask_params``
    switches on basket selection over the pool.
    """
    env_cfg = env_cfg or EnvConfig()
    feats, hist = _restrict(features, history, start, end)
    X = feats.values[:-1]
    baskets: list[dict] = []
    if mask_params is not None:
        sel = joint_forward(feats.per_asset()[:-1], mask_params, params, basket_size,
                            selection_mode, turnover_cap)
        actions = sel.weights
        for t, (b, s) in enumerate(zip(sel.baskets, sel.scores)):
            for i, ticker in enumerate(feats.assets):
                baskets.append({"date": str(feats.calendar[t]), "ticker": ticker,
                                "selected": int(b.mask[i]), "score": float(s[i])})
    else:
        actions, _ = forward_sequence(X, params)

    if params.config.mode == WEIGHT_MODE:
        res = envmod.run_episode(env_cfg, actions, hist.close)
        g_last = envmod.gross_returns(hist.close[-2:], env_cfg.risk_free_rate)[0]
        drifted = envmod.effective_weights(actions[-1], g_last)
        final_leverage = 1.0 - drifted[0]
    else:
        res = envmod.run_share_episode(env_cfg, actions, hist.close)
        final_leverage = float(res.holdings[-1] @ hist.close[-1]) / res.wealth[-1]

    base = (envmod.buy_and_hold(env_cfg, hist, baseline) if baseline is not None
            else np.full(hist.num_days, np.nan))
    return BacktestReport(
        dates=[str(d) for d in hist.calendar],
        equity=res.wealth,
        baseline=base,
        leverage=np.append(res.leverage, final_leverage),
        turnover=np.append(res.turnover, 0.0),
        commission=np.append(res.commission, 0.0),
        baseline_ticker=baseline,
        baskets=baskets,
    )


def write_series(report: BacktestReport, directory) -> list[Path]:
    """One ``date,value`` CSV per plotted series: equity, baseline, leverage, turnover."""
    directory = Path(directory)
    paths = []
    for name in ("equity", "baseline", "leverage", "turnover"):
        frame = pd.DataFrame({"date": report.dates, "value": getattr(report, name)})
        path = directory / f"{name}.csv"
        atomic_write(path, frame.to_csv(index=False, float_format="%.17g"))
        paths.append(path)
    return paths


def write_overlay(reports: Sequence[BacktestReport], directory, labels: Sequence[str] | None = None) -> list[Path]:
    """Overlay several runs on a shared calendar, one CSV per series with suffixed columns."""
    if not reports:
        raise ValueError("no reports to overlay")
    dates = reports[0].dates
    for r in reports[1:]:
        if list(r.dates) != list(dates):
            raise CalendarMismatch("reports do not share a calendar")
    labels = list(labels) if labels else [str(i + 1) for i in range(len(reports))]
    directory = Path(directory)
    paths = []
    for name in ("equity", "baseline", "leverage", "turnover"):
        frame = pd.DataFrame({"date": dates})
        for label, r in zip(labels, reports):
            frame[f"{name}_{label}"] = getattr(r, name)
        path = directory / f"{name}.csv"
        atomic_write(path, frame.to_csv(index=False, float_format="%.17g"))
        paths.append(path)
    return paths
