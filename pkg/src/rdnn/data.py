"""Daily OHLCV ingestion, technical indicators and normalized feature matrices."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DuplicateRow,
    EmptyIntersectionCalendar,
    EmptySeries,
    HistoryTooShort,
    InvalidPeriods,
    MissingColumn,
    NegativeVolume,
    NonPositivePrice,
    SeriesTooShort,
)

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("date", "ticker", "open", "high", "low", "close", "volume")
PRICE_COLUMNS = ("open", "high", "low", "close")
MAX_MISSING_FRACTION = 0.05


@dataclass(frozen=True)
class PriceHistory:
    """Aligned daily OHLCV panel; every field array is (days, assets)."""

    calendar: np.ndarray  # datetime64[D], strictly increasing
    assets: tuple[str, ...]
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray

    def __post_init__(self):
        cal = np.asarray(self.calendar, dtype="datetime64[D]")
        object.__setattr__(self, "calendar", cal)
        object.__setattr__(self, "assets", tuple(self.assets))
        shape = (len(cal), len(self.assets))
        for name in PRICE_COLUMNS + ("volume",):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            object.__setattr__(self, name, arr)
        if len(cal) > 1 and not np.all(np.diff(cal) > np.timedelta64(0, "D")):
            raise ValueError("calendar must be strictly increasing")
        for name in PRICE_COLUMNS:
            if not np.all(getattr(self, name) > 0):
                raise NonPositivePrice(f"{name} must be strictly positive")
        if not np.all(self.volume >= 0):
            raise NegativeVolume("volume must be non-negative")

    @property
    def num_days(self) -> int:
        return len(self.calendar)

    @property
    def num_assets(self) -> int:
        return len(self.assets)

    def asset_index(self, ticker: str) -> int:
        return self.assets.index(ticker)

    def slice_days(self, start: int, stop: int) -> "PriceHistory":
        sl = slice(start, stop)
        return PriceHistory(
            self.calendar[sl], self.assets, self.open[sl], self.high[sl],
            self.low[sl], self.close[sl], self.volume[sl],
        )

    def between(self, start=None, end=None) -> "PriceHistory":
        """Days with ``start <= date <= end`` (ISO strings or datetime64)."""
        lo, hi = _date_bounds(self.calendar, start, end)
        return self.slice_days(lo, hi)

    def select_assets(self, tickers: Sequence[str]) -> "PriceHistory":
        idx = [self.asset_index(t) for t in tickers]
        return PriceHistory(
            self.calendar, tuple(tickers), self.open[:, idx], self.high[:, idx],
            self.low[:, idx], self.close[:, idx], self.volume[:, idx],
        )

    def to_frame(self) -> pd.DataFrame:
        """Long-format frame with the CSV input schema, sorted by date then ticker."""
        n, m = self.num_days, self.num_assets
        frame = pd.DataFrame({
            "date": np.repeat(self.calendar, m).astype(str),
            "ticker": np.tile(np.array(self.assets, dtype=object), n),
        })
        for name in PRICE_COLUMNS + ("volume",):
            frame[name] = getattr(self, name).reshape(-1)
        return frame


@dataclass(frozen=True)
class IndicatorConfig:
    """Indicator periods in trading days. ``None`` disables RSI or MACD."""

    ema_periods: tuple[int, ...] = (10, 20)
    rsi_period: int | None = 14
    macd_periods: tuple[int, int, int] | None = (12, 26, 9)
    normalization_window: int = 20

    def __post_init__(self):
        object.__setattr__(self, "ema_periods", tuple(int(p) for p in self.ema_periods))
        if self.macd_periods is not None:
            object.__setattr__(self, "macd_periods", tuple(int(p) for p in self.macd_periods))
            fast, slow, signal = self.macd_periods
            if not fast < slow:
                raise InvalidPeriods(f"macd fast {fast} must be below slow {slow}")
            if min(self.macd_periods) < 1:
                raise InvalidPeriods("macd periods must be >= 1")
        if any(p < 1 for p in self.ema_periods):
            raise InvalidPeriods("ema periods must be >= 1")
        if self.rsi_period is not None and self.rsi_period < 1:
            raise InvalidPeriods("rsi period must be >= 1")
        if self.normalization_window < 1:
            raise InvalidPeriods("normalization window must be >= 1")

    @property
    def warmup(self) -> int:
        """Number of leading days whose indicator values are not yet trusted."""
        spans = [0, *self.ema_periods]
        if self.rsi_period is not None:
            spans.append(self.rsi_period)
        if self.macd_periods is not None:
            spans.append(self.macd_periods[1] + self.macd_periods[2])
        return max(spans)

    def channel_names(self, extra: Sequence[str] = ()) -> list[str]:
        names = list(PRICE_COLUMNS) + ["volume"]
        names += [f"ema{p}" for p in self.ema_periods]
        if self.rsi_period is not None:
            names.append(f"rsi{self.rsi_period}")
        if self.macd_periods is not None:
            names += ["macd", "macd_signal", "macd_hist"]
        return names + list(extra)


@dataclass(frozen=True)
class FeatureMatrix:
    calendar: np.ndarray
    values: np.ndarray  # (days, assets * channels), asset-major
    assets: tuple[str, ...]
    channels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "calendar", np.asarray(self.calendar, dtype="datetime64[D]"))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(self, "assets", tuple(self.assets))
        object.__setattr__(self, "channels", tuple(self.channels))
        expect = (len(self.calendar), len(self.assets) * len(self.channels))
        if self.values.shape != expect:
            raise ValueError(f"values shape {self.values.shape}, expected {expect}")

    @property
    def feature_names(self) -> list[str]:
        return [f"{a}:{c}" for a in self.assets for c in self.channels]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def between(self, start=None, end=None) -> "FeatureMatrix":
        lo, hi = _date_bounds(self.calendar, start, end)
        return FeatureMatrix(self.calendar[lo:hi], self.values[lo:hi], self.assets, self.channels)

    def select_assets(self, tickers: Sequence[str]) -> "FeatureMatrix":
        idx = [self.assets.index(t) for t in tickers]
        return FeatureMatrix(self.calendar, self.per_asset()[:, idx].reshape(len(self.calendar), -1),
                             tuple(tickers), self.channels)

    def per_asset(self) -> np.ndarray:
        """View as (days, assets, channels)."""
        return self.values.reshape(len(self.calendar), len(self.assets), len(self.channels))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, columns=self.feature_names)
        frame.insert(0, "date", self.calendar.astype(str))
        return frame

    def to_csv(self, path: str | Path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_csv(cls, path: str | Path) -> "FeatureMatrix":
        frame = pd.read_csv(path, dtype={"date": str}, float_precision="round_trip")
        cols = [c for c in frame.columns if c != "date"]
        assets: list[str] = []
        channels: list[str] = []
        for col in cols:
            asset, chan = col.split(":", 1)
            if asset not in assets:
                assets.append(asset)
            if chan not in channels:
                channels.append(chan)
        return cls(frame["date"].to_numpy(dtype="datetime64[D]"),
                   frame[cols].to_numpy(float), tuple(assets), tuple(channels))


def _date_bounds(calendar: np.ndarray, start, end) -> tuple[int, int]:
    lo = 0 if start is None else int(np.searchsorted(calendar, np.datetime64(start, "D"), "left"))
    hi = len(calendar) if end is None else int(np.searchsorted(calendar, np.datetime64(end, "D"), "right"))
    return lo, hi


def load_ohlcv(path: str | Path, schema: Mapping[str, str] | None = None) -> PriceHistory:
    """Read a long-format OHLCV CSV and align all tickers on one calendar.

    ``schema`` maps canonical names (``date``, ``ticker``, ...) to the
    column names actually used in the file.

    The common span runs from the latest first-date to the earliest
    last-date across tickers. Tickers missing more than 5% of the span's
    trading days are dropped; the remaining gaps are forward-filled from
    the previous close with zero volume.
    """
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    return ohlcv_from_frame(frame, schema)


def ohlcv_from_frame(frame: pd.DataFrame, schema: Mapping[str, str] | None = None) -> PriceHistory:
    schema = dict(schema or {})
    rename = {schema.get(c, c): c for c in REQUIRED_COLUMNS}
    frame = frame.rename(columns=rename)
    for col in REQUIRED_COLUMNS:
        if col not in frame.columns:
            raise MissingColumn(col, line=1)
    frame = frame[list(REQUIRED_COLUMNS)].copy()
    frame["line"] = np.arange(len(frame)) + 2

    try:
        frame["date"] = pd.to_datetime(frame["date"], format="%Y-%m-%d").to_numpy().astype("datetime64[D]")
    except (ValueError, TypeError) as exc:
        raise MissingColumn(f"date: unparseable value ({exc})") from exc
    for col in PRICE_COLUMNS + ("volume",):
        bad = pd.to_numeric(frame[col], errors="coerce").isna().to_numpy()
        if bad.any():
            raise MissingColumn(f"{col}: non-numeric value", line=int(frame["line"].iloc[bad.argmax()]))
        # str -> float keeps %.17g text bit-exact; the vectorized parser may not
        frame[col] = frame[col].astype(float)
    for col in PRICE_COLUMNS:
        bad = (frame[col] <= 0).to_numpy()
        if bad.any():
            raise NonPositivePrice(f"{col} <= 0", line=int(frame["line"].iloc[bad.argmax()]))
    bad = (frame["volume"] < 0).to_numpy()
    if bad.any():
        raise NegativeVolume("volume < 0", line=int(frame["line"].iloc[bad.argmax()]))
    dup = frame.duplicated(["date", "ticker"]).to_numpy()
    if dup.any():
        raise DuplicateRow("repeated (date, ticker)", line=int(frame["line"].iloc[dup.argmax()]))
    if frame.empty:
        raise EmptyIntersectionCalendar("no rows")

    frame = frame.sort_values(["ticker", "date"], kind="mergesort")
    tickers = list(dict.fromkeys(frame["ticker"]))
    groups = {t: g.set_index("date") for t, g in frame.groupby("ticker", sort=False)}

    while True:
        start = max(g.index.min() for g in groups.values())
        stop = min(g.index.max() for g in groups.values())
        if start > stop:
            raise EmptyIntersectionCalendar(f"ticker date ranges do not overlap ({start} > {stop})")
        calendar = sorted(set().union(*(g.index[(g.index >= start) & (g.index <= stop)] for g in groups.values())))
        dropped = []
        for t, g in groups.items():
            present = g.index[(g.index >= start) & (g.index <= stop)]
            missing = len(calendar) - len(present)
            if missing / len(calendar) > MAX_MISSING_FRACTION:
                dropped.append(t)
        if not dropped:
            break
        for t in dropped:
            log.warning("dropping %s: more than %.0f%% of days missing", t, 100 * MAX_MISSING_FRACTION)
            del groups[t]
        if not groups:
            raise EmptyIntersectionCalendar("every ticker exceeded the missing-day limit")

    tickers = [t for t in tickers if t in groups]
    cal_index = pd.DatetimeIndex(calendar)
    arrays = {c: np.empty((len(calendar), len(tickers))) for c in PRICE_COLUMNS + ("volume",)}
    for j, t in enumerate(tickers):
        g = groups[t]
        g.index = pd.DatetimeIndex(g.index)
        full = g.reindex(g.index.union(cal_index))
        gap = full["close"].isna()
        full["close"] = full["close"].ffill()
        for c in ("open", "high", "low"):
            full[c] = full[c].where(~gap, full["close"])
        full["volume"] = full["volume"].where(~gap, 0.0)
        full = full.loc[cal_index]
        for c in arrays:
            arrays[c][:, j] = full[c].to_numpy(float)
    return PriceHistory(np.asarray(calendar, dtype="datetime64[D]"), tuple(tickers), **arrays)


def ema(series, period: int) -> np.ndarray:
    """Exponential moving average with alpha = 2/(period+1), seeded with the first value."""
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise EmptySeries("ema of an empty series")
    if period < 1:
        raise InvalidPeriods(f"period must be >= 1, got {period}")
    alpha = 2.0 / (period + 1)
    out = np.empty_like(x)
    out[0] = x[0]
    for i in range(1, len(x)):
        out[i] = alpha * x[i] + (1 - alpha) * out[i - 1]
    return out


def rsi(series, period: int = 14) -> np.ndarray:
    """Wilder RSI. The first ``period`` entries are warm-up and set to NaN.

    A window with neither gains nor losses reads 50.
    """
    x = np.asarray(series, dtype=float)
    if period < 1:
        raise InvalidPeriods(f"period must be >= 1, got {period}")
    if len(x) < period + 1:
        raise SeriesTooShort(f"rsi needs {period + 1} values, got {len(x)}")
    delta = np.diff(x)
    gains = np.clip(delta, 0, None)
    losses = np.clip(-delta, 0, None)
    out = np.full(len(x), np.nan)
    avg_gain = gains[:period].mean()
    avg_loss = losses[:period].mean()
    for i in range(period, len(x)):
        if i > period:
            avg_gain = (avg_gain * (period - 1) + gains[i - 1]) / period
            avg_loss = (avg_loss * (period - 1) + losses[i - 1]) / period
        if avg_loss == 0:
            out[i] = 100.0 if avg_gain > 0 else 50.0
        else:
            out[i] = 100.0 - 100.0 / (1.0 + avg_gain / avg_loss)
    return out


def macd(series, fast: int = 12, slow: int = 26, signal: int = 9):
    """Return ``(macd_line, signal_line, histogram)``."""
    if not fast < slow:
        raise InvalidPeriods(f"macd fast {fast} must be below slow {slow}")
    line = ema(series, fast) - ema(series, slow)
    sig = ema(line, signal)
    return line, sig, line - sig


def trailing_zscore(values: np.ndarray, window: int) -> np.ndarray:
    """Z-score each column against its trailing window ending at (and including) each row.

    Rows before the first full window are NaN. Flat windows map to 0.
    """
    x = np.asarray(values, dtype=float)
    out = np.full(x.shape, np.nan)
    if len(x) < window:
        return out
    win = np.lib.stride_tricks.sliding_window_view(x, window, axis=0)
    mean = win.mean(axis=-1)
    std = win.std(axis=-1)
    cur = x[window - 1:]
    flat = std <= 1e-10 * np.maximum(1.0, np.abs(mean))
    z = np.where(flat, 0.0, (cur - mean) / np.where(flat, 1.0, std))
    out[window - 1:] = z
    return out


def _asset_channels(history: PriceHistory, j: int, cfg: IndicatorConfig) -> list[np.ndarray]:
    close = history.close[:, j]
    cols = [history.open[:, j], history.high[:, j], history.low[:, j], close, history.volume[:, j]]
    cols += [ema(close, p) for p in cfg.ema_periods]
    if cfg.rsi_period is not None:
        cols.append(rsi(close, cfg.rsi_period))
    if cfg.macd_periods is not None:
        cols.extend(macd(close, *cfg.macd_periods))
    return cols


def build_features(
    history: PriceHistory,
    cfg: IndicatorConfig | None = None,
    extra: Mapping[str, Mapping[str, Sequence[float]]] | None = None,
) -> FeatureMatrix:
    """Per-asset raw channels, z-scored over the trailing normalization window.

    ``extra`` maps ticker -> {column name -> series aligned with the history
    calendar}; every ticker must supply the same column names.
    """
    cfg = cfg or IndicatorConfig()
    first = cfg.warmup + cfg.normalization_window - 1
    if history.num_days <= first:
        raise HistoryTooShort(f"need more than {first} days, got {history.num_days}")

    extra_names: list[str] = []
    if extra:
        extra_names = list(next(iter(extra.values())).keys())
        for t in history.assets:
            if t not in extra or list(extra[t].keys()) != extra_names:
                raise ValueError(f"extra columns for {t} do not match {extra_names}")

    blocks = []
    for j, t in enumerate(history.assets):
        cols = _asset_channels(history, j, cfg)
        for name in extra_names:
            col = np.asarray(extra[t][name], dtype=float)
            if col.shape != (history.num_days,):
                raise ValueError(f"extra column {t}:{name} has wrong length")
            cols.append(col)
        raw = np.column_stack(cols)
        # indicator warm-up rows are excluded from the normalization window
        z = trailing_zscore(raw[cfg.warmup:], cfg.normalization_window)
        blocks.append(z[cfg.normalization_window - 1:])
    values = np.concatenate(blocks, axis=1)
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite feature values; check extra columns")
    return FeatureMatrix(history.calendar[first:], values, history.assets, cfg.channel_names(extra_names))
