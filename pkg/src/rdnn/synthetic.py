"""Synthetic daily markets for tests and demos."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .data import PriceHistory


def _ohlcv_from_close(close: np.ndarray, rng: np.random.Generator | None, calendar) -> PriceHistory:
    n, m = close.shape
    prev = np.vstack([close[:1], close[:-1]])
    if rng is None:
        wiggle = np.full((n, m), 0.002)
        volume = np.full((n, m), 1e6)
    else:
        wiggle = np.abs(rng.normal(0.0, 0.004, size=(n, m)))
        volume = rng.lognormal(np.log(1e6), 0.3, size=(n, m)).round()
    open_ = prev
    high = np.maximum(open_, close) * (1 + wiggle)
    low = np.minimum(open_, close) * (1 - wiggle)
    return calendar, open_, high, low, close, volume


def business_calendar(days: int, start: str = "2007-01-01") -> np.ndarray:
    """``days`` consecutive weekdays from ``start``."""
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    return np.busday_offset(first, np.arange(days))


def price_paths(log_returns: np.ndarray, start_price: float | Sequence[float] = 100.0) -> np.ndarray:
    """Closes from per-day log returns (days-1, m); row 0 is the start price."""
    lr = np.atleast_2d(np.asarray(log_returns, dtype=float))
    start = np.broadcast_to(np.asarray(start_price, dtype=float), (lr.shape[1],))
    return start * np.exp(np.vstack([np.zeros((1, lr.shape[1])), np.cumsum(lr, axis=0)]))


def make_history(close, tickers: Sequence[str] | None = None, seed: int | None = None,
                 start: str = "2007-01-01") -> PriceHistory:
    close = np.asarray(close, dtype=float)
    if close.ndim == 1:
        close = close[:, None]
    tickers = tickers or [f"S{i:03d}" for i in range(close.shape[1])]
    rng = None if seed is None else np.random.default_rng(seed)
    cal, open_, high, low, close, volume = _ohlcv_from_close(close, rng, business_calendar(len(close), start))
    return PriceHistory(cal, tuple(tickers), open_, high, low, close, volume)


def drift_market(days: int = 400, drifts: Sequence[float] = (0.002, -0.002), noise: float = 0.0,
                 seed: int = 0, tickers: Sequence[str] = ("A", "B")) -> PriceHistory:
    """Stocks compounding at constant daily simple returns, plus optional noise."""
    rng = np.random.default_rng(seed)
    lr = np.log1p(np.asarray(drifts, dtype=float)) * np.ones((days - 1, len(drifts)))
    if noise > 0:
        lr = lr + rng.normal(0.0, noise, size=lr.shape)
    return make_history(price_paths(lr), tickers, seed if noise > 0 else None)


def regime_market(segments: Sequence[tuple[int, float]], vol: float = 0.01, seed: int = 0,
                  tickers: Sequence[str] = ("IDX",)) -> PriceHistory:
    """Concatenated regimes of ``(days, daily drift)``; every stock shares the regime."""
    rng = np.random.default_rng(seed)
    drifts = np.concatenate([np.full(n, mu) for n, mu in segments])[1:]
    lr = drifts[:, None] + rng.normal(0.0, vol, size=(len(drifts), len(tickers)))
    return make_history(price_paths(lr), tickers, seed)


def random_pool(num_stocks: int, days: int, seed: int = 0, vol: float = 0.015) -> PriceHistory:
    """Independent geometric random walks with stock-specific drifts."""
    rng = np.random.default_rng(seed)
    mu = rng.normal(0.0003, 0.0008, size=num_stocks)
    lr = mu + rng.normal(0.0, vol, size=(days - 1, num_stocks))
    start = rng.uniform(20, 200, size=num_stocks)
    return make_history(price_paths(lr, start), None, seed)


def write_csv(history: PriceHistory, path) -> None:
    history.to_frame().to_csv(path, index=False, float_format="%.17g")


def factor_universe(num_stocks: int, segments: Sequence[tuple[int, float]], seed: int = 0,
                    index_ticker: str = "SPY", market_vol: float = 0.01,
                    idio_vol: float = 0.015, start: str = "2007-01-01") -> PriceHistory:
    """An index following regime drifts plus stocks loading on it with random betas."""
    rng = np.random.default_rng(seed)
    drifts = np.concatenate([np.full(n, mu) for n, mu in segments])[1:]
    market = drifts + rng.normal(0.0, market_vol, size=len(drifts))
    beta = rng.uniform(0.5, 1.5, size=num_stocks)
    alpha = rng.normal(0.0, 0.0004, size=num_stocks)
    stocks = alpha + market[:, None] * beta + rng.normal(0.0, idio_vol, size=(len(drifts), num_stocks))
    lr = np.hstack([market[:, None], stocks])
    closes = price_paths(lr, np.concatenate([[100.0], rng.uniform(20, 200, size=num_stocks)]))
    tickers = [index_ticker] + [f"S{i:03d}" for i in range(num_stocks)]
    return make_history(closes, tickers, seed, start)
