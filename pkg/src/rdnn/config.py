"""Run configuration files.

Grammar (parsed with :mod:`configparser`)::

    # comment
    seed = 7                     # top-level key
    train.epochs = 50            # dotted key
    [policy]                     # section prefix for the keys below
    hidden_sizes = 128, 128, 64

A key ``k`` under ``[s]`` is the same as ``s.k`` at the top. Values stay
strings until read through a typed accessor; ``none`` or an empty value
means "unset". Relative paths resolve against the config file's
directory.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .data import IndicatorConfig
from .env import EnvConfig
from .errors import ConfigError
from .policy import PolicyConfig
from .training import TrainConfig

_ROOT = "__root__"

DEFAULTS: dict[str, str] = {
    "seed": "0",
    "data.csv": "",
    "data.tickers": "",
    "output.dir": "out",
    "env.initial_wealth": "100000",
    "env.commission_rate": "0.0001",
    "env.risk_free_rate": "0",
    "features.ema_periods": "10, 20",
    "features.rsi_period": "14",
    "features.macd_periods": "12, 26, 9",
    "features.normalization_window": "20",
    "policy.mode": "weight",
    "policy.head": "sigmoid",
    "policy.dropout_rate": "0.2",
    "policy.hidden_sizes": "128, 128, 64",
    "policy.max_shares": "100",
    "train.learning_rate": "0.001",
    "train.batch_size": "64",
    "train.epochs": "100",
    "train.tau": "5",
    "train.utility": "log",
    "train.episode_length": "60",
    "train.gradient_clip": "none",
    "train.optimizer": "sgd",
    "train.average_steps": "true",
    "train.start": "",
    "train.end": "",
    "test.start": "",
    "test.end": "",
    "backtest.baseline": "",
    "selection.enabled": "false",
    "selection.pool": "",
    "selection.basket_size": "20",
    "selection.mode": "free",
    "selection.turnover_cap": "0.5",
    "selection.hidden": "64",
    "selection.iterations": "20",
    "selection.step": "0.05",
    "selection.perturbation": "0.05",
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _unset(raw: str) -> bool:
    return raw.strip().lower() in ("", "none")


def parse_text(text: str) -> dict[str, str]:
    parser = configparser.ConfigParser(
        interpolation=None, delimiters=("=",), comment_prefixes=("#",),
        inline_comment_prefixes=("#",), default_section="__unused__",
    )
    parser.optionxform = str  # keep key case
    try:
        parser.read_string(f"[{_ROOT}]\n{text}")
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    out: dict[str, str] = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            out[key if section == _ROOT else f"{section}.{key}"] = value.strip()
    return out


@dataclass
class RunConfig:
    values: dict[str, str] = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    def __post_init__(self):
        unknown = sorted(set(self.values) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        merged = dict(DEFAULTS)
        merged.update(self.values)
        self.values = merged
        self.validate()

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        return cls(parse_text(text), path.resolve().parent)

    @classmethod
    def from_text(cls, text: str, base_dir: str | Path = ".") -> "RunConfig":
        return cls(parse_text(text), Path(base_dir).resolve())

    def with_overrides(self, pairs: Iterable[str | tuple[str, object]]) -> "RunConfig":
        """Apply ``key=value`` strings or ``(key, value)`` pairs on top."""
        values = dict(self.values)
        for pair in pairs:
            if isinstance(pair, str):
                if "=" not in pair:
                    raise ConfigError(f"override {pair!r} is not key=value")
                key, value = pair.split("=", 1)
            else:
                key, value = pair
            values[key.strip()] = str(value).strip()
        return RunConfig(values, self.base_dir)

    # typed accessors ------------------------------------------------------

    def raw(self, key: str) -> str:
        if key not in self.values:
            raise ConfigError(f"unknown config key {key!r}")
        return self.values[key]

    def _convert(self, key: str, kind, optional: bool):
        raw = self.raw(key)
        if _unset(raw):
            if optional:
                return None
            raise ConfigError(f"{key} must be set")
        try:
            return kind(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {raw!r}") from exc

    def get_str(self, key: str, optional: bool = False) -> str | None:
        return self._convert(key, str, optional)

    def get_int(self, key: str, optional: bool = False) -> int | None:
        return self._convert(key, int, optional)

    def get_float(self, key: str, optional: bool = False) -> float | None:
        return self._convert(key, float, optional)

    def get_bool(self, key: str) -> bool:
        raw = self.raw(key).strip().lower()
        if raw in _TRUE:
            return True
        if raw in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")

    def get_list(self, key: str) -> list[str]:
        raw = self.raw(key)
        return [] if _unset(raw) else [p.strip() for p in raw.split(",") if p.strip()]

    def get_ints(self, key: str) -> tuple[int, ...] | None:
        parts = self.get_list(key)
        try:
            return tuple(int(p) for p in parts) if parts else None
        except ValueError as exc:
            raise ConfigError(f"{key}: expected integers, got {self.raw(key)!r}") from exc

    def get_path(self, key: str) -> Path | None:
        raw = self.get_str(key, optional=True)
        if raw is None:
            return None
        p = Path(raw).expanduser()
        return (p if p.is_absolute() else self.base_dir / p).resolve()

    def get_date(self, key: str) -> np.datetime64 | None:
        raw = self.get_str(key, optional=True)
        if raw is None:
            return None
        try:
            return np.datetime64(raw, "D")
        except ValueError as exc:
            raise ConfigError(f"{key}: not a YYYY-MM-DD date: {raw!r}") from exc

    # derived configuration ------------------------------------------------

    @property
    def seed(self) -> int:
        return self.get_int("seed")

    @property
    def output_dir(self) -> Path:
        return self.get_path("output.dir")

    def env_config(self) -> EnvConfig:
        return self._build(EnvConfig, initial_wealth=self.get_float("env.initial_wealth"),
                           commission_rate=self.get_float("env.commission_rate"),
                           risk_free_rate=self.get_float("env.risk_free_rate"))

    def indicator_config(self) -> IndicatorConfig:
        return self._build(IndicatorConfig, ema_periods=self.get_ints("features.ema_periods") or (),
                           rsi_period=self.get_int("features.rsi_period", optional=True),
                           macd_periods=self.get_ints("features.macd_periods"),
                           normalization_window=self.get_int("features.normalization_window"))

    def policy_config(self) -> PolicyConfig:
        # the root seed drives initialization directly
        return self._build(PolicyConfig, mode=self.get_str("policy.mode"), head=self.get_str("policy.head"),
                           dropout_rate=self.get_float("policy.dropout_rate"),
                           hidden_sizes=self.get_ints("policy.hidden_sizes") or (),
                           max_shares=self.get_int("policy.max_shares"), seed=self.seed)

    def train_config(self) -> TrainConfig:
        return self._build(TrainConfig, learning_rate=self.get_float("train.learning_rate"),
                           batch_size=self.get_int("train.batch_size"), epochs=self.get_int("train.epochs"),
                           tau=self.get_int("train.tau"), utility=self.get_str("train.utility"),
                           episode_length=self.get_int("train.episode_length"), seed=self.seed + 1,
                           gradient_clip=self.get_float("train.gradient_clip", optional=True),
                           optimizer=self.get_str("train.optimizer"),
                           average_steps=self.get_bool("train.average_steps"))

    @property
    def mask_seed(self) -> int:
        return self.seed + 2

    @property
    def selection_enabled(self) -> bool:
        return self.get_bool("selection.enabled")

    @staticmethod
    def _build(cls, **kwargs):
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"{cls.__name__}: {exc}") from exc

    # date ranges ----------------------------------------------------------

    @property
    def train_range(self) -> tuple[np.datetime64 | None, np.datetime64 | None]:
        """Inclusive bounds; an open end stops the day before the test range."""
        start, end = self.get_date("train.start"), self.get_date("train.end")
        test_start = self.get_date("test.start")
        if end is None and test_start is not None:
            end = test_start - np.timedelta64(1, "D")
        return start, end

    @property
    def test_range(self) -> tuple[np.datetime64 | None, np.datetime64 | None]:
        """Inclusive bounds; an open start begins the day after training ends."""
        start, end = self.get_date("test.start"), self.get_date("test.end")
        train_end = self.get_date("train.end")
        if start is None and train_end is not None:
            start = train_end + np.timedelta64(1, "D")
        return start, end

    def validate(self) -> None:
        for prefix in ("train", "test"):
            lo, hi = self.get_date(f"{prefix}.start"), self.get_date(f"{prefix}.end")
            if lo is not None and hi is not None and lo > hi:
                raise ConfigError(f"{prefix}.start {lo} is after {prefix}.end {hi}")
        train_lo, train_hi = self.get_date("train.start"), self.get_date("train.end")
        test_lo, test_hi = self.get_date("test.start"), self.get_date("test.end")
        if test_lo is not None and train_lo is not None and train_lo >= test_lo:
            raise ConfigError("the training range must precede the test range")
        if train_hi is not None and test_lo is not None and train_hi >= test_lo:
            raise ConfigError(f"train.end {train_hi} overlaps test.start {test_lo}")
        if train_hi is not None and test_hi is not None and train_hi >= test_hi:
            raise ConfigError("the training range must precede the test range")
        for key in ("seed", "train.epochs"):
            self.get_int(key)
        if self.get_str("selection.mode") not in ("free", "turnover"):
            raise ConfigError(f"selection.mode must be free or turnover, got {self.raw('selection.mode')!r}")
        self.get_bool("selection.enabled")
