"""Long-only portfolio accounting with proportional transaction costs.

Weight vectors have length m+1; index 0 is the bond (cash), 1..m are stocks.

Timing: the weights chosen at the close of day t-1 earn the returns over
day t. Before trading at that close, the book sits at the *effective*
weights, i.e. the previous target drifted by the previous day's returns.
One period therefore reads

    W_t = W_{t-1} * (1 - delta * sum_{i>=1} |w_t,i - drift_i|) * (w_t . g_t)

where the cost factor is charged on the pre-trade wealth and the remaining
capital is invested at the target weights.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import (
    BankruptWealth,
    EmptyReturns,
    InvalidWeights,
    LengthMismatch,
    LogOfNonPositive,
    NonPositiveGrossReturn,
    NonPositivePrice,
    UnknownAsset,
)

WEIGHT_TOL = 1e-9
SHARPE_EPS = 1e-12


class UtilityKind(str, enum.Enum):
    LOG = "log"
    SHARPE = "sharpe"


@dataclass(frozen=True)
class EnvConfig:
    initial_wealth: float = 100_000.0
    commission_rate: float = 0.0001
    risk_free_rate: float = 0.0  # per trading day
    num_stocks: int | None = None

    def __post_init__(self):
        if not 0 <= self.commission_rate < 1:
            raise ValueError("commission_rate must lie in [0, 1)")
        if self.initial_wealth <= 0:
            raise ValueError("initial_wealth must be positive")


def check_weights(w, tol: float = WEIGHT_TOL) -> np.ndarray:
    """Validate a long-only weight vector and return it as a float array."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size < 1:
        raise InvalidWeights(f"weights must be a non-empty vector, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < -tol):
        raise InvalidWeights(f"weights must be finite and non-negative: {w}")
    if abs(w.sum() - 1.0) > tol:
        raise InvalidWeights(f"weights sum to {w.sum()!r}, not 1")
    return w


def all_bond(num_stocks: int) -> np.ndarray:
    w = np.zeros(num_stocks + 1)
    w[0] = 1.0
    return w


@dataclass(frozen=True)
class PortfolioState:
    day_index: int
    wealth: float
    weights: np.ndarray  # last target
    effective_weights: np.ndarray  # target drifted by the latest period's returns
    last_return: float = 0.0

    @classmethod
    def initial(cls, cfg: EnvConfig, num_stocks: int) -> "PortfolioState":
        w = all_bond(num_stocks)
        return cls(0, float(cfg.initial_wealth), w, w.copy(), 0.0)


def gross_returns(closes, risk_free_rate: float = 0.0) -> np.ndarray:
    """(T+1, m) closes -> (T, m+1) gross returns with the bond in column 0."""
    closes = np.asarray(closes, dtype=float)
    if closes.ndim == 1:
        closes = closes[:, None]
    if np.any(closes <= 0):
        raise NonPositivePrice("closes must be strictly positive")
    stock = closes[1:] / closes[:-1]
    bond = np.full((len(stock), 1), 1.0 + risk_free_rate)
    return np.hstack([bond, stock])


def effective_weights(prev, gross) -> np.ndarray:
    prev = np.asarray(prev, dtype=float)
    g = np.asarray(gross, dtype=float)
    if np.any(g <= 0):
        raise NonPositiveGrossReturn(f"gross returns must be positive: {g}")
    if prev.shape != g.shape:
        raise InvalidWeights(f"shape {prev.shape} vs gross {g.shape}")
    grown = prev * g
    return grown / grown.sum()


def step(state: PortfolioState, target, gross, cfg: EnvConfig):
    """Rebalance to ``target`` at the current close, then hold over one period.

    Returns ``(new_state, period_return, cost_fraction)``.
    """
    target = check_weights(target)
    g = np.asarray(gross, dtype=float)
    if g.shape != target.shape:
        raise InvalidWeights(f"target {target.shape} vs gross {g.shape}")
    if np.any(g <= 0):
        raise NonPositiveGrossReturn(f"gross returns must be positive: {g}")
    cost = cfg.commission_rate * float(np.abs(target[1:] - state.effective_weights[1:]).sum())
    growth = float(target @ g)
    factor = growth * (1.0 - cost)
    wealth = state.wealth * factor
    if not wealth > 0:
        raise BankruptWealth(f"wealth {wealth} after step {state.day_index}")
    new = PortfolioState(
        day_index=state.day_index + 1,
        wealth=wealth,
        weights=target,
        effective_weights=effective_weights(target, g),
        last_return=factor - 1.0,
    )
    return new, factor - 1.0, cost


@dataclass
class EpisodeResult:
    returns: np.ndarray  # R_t, length T
    wealth: np.ndarray  # W_0..W_T
    cost: np.ndarray  # cost fraction paid at each rebalance, length T
    commission: np.ndarray  # currency paid at each rebalance
    turnover: np.ndarray  # sum over stocks of |target - effective|
    leverage: np.ndarray  # stock fraction of each target
    holdings: np.ndarray | None = None  # share mode: shares held after each rebalance

    @property
    def final_wealth(self) -> float:
        return float(self.wealth[-1])


def run_episode(cfg: EnvConfig, weight_sequence, closes) -> EpisodeResult:
    """Roll a weight sequence through ``T+1`` closes starting from all-bond.

    ``closes`` is a (T+1, m) array or a :class:`~rdnn.data.PriceHistory`.
    """
    closes = getattr(closes, "close", closes)
    closes = np.asarray(closes, dtype=float)
    if closes.ndim == 1:
        closes = closes[:, None]
    weights = np.asarray(weight_sequence, dtype=float).reshape(-1, closes.shape[1] + 1)
    T = len(weights)
    if len(closes) != T + 1:
        raise LengthMismatch(f"{T} weight vectors need {T + 1} closes, got {len(closes)}")
    g = gross_returns(closes, cfg.risk_free_rate)
    state = PortfolioState.initial(cfg, closes.shape[1])
    rets, wealth, costs, commission, turnover = [], [state.wealth], [], [], []
    for t in range(T):
        pre = state
        state, r, c = step(state, weights[t], g[t], cfg)
        rets.append(r)
        wealth.append(state.wealth)
        costs.append(c)
        commission.append(pre.wealth * c)
        turnover.append(float(np.abs(weights[t, 1:] - pre.effective_weights[1:]).sum()))
    return EpisodeResult(
        np.array(rets), np.array(wealth), np.array(costs), np.array(commission),
        np.array(turnover), 1.0 - weights[:, 0] if T else np.zeros(0),
    )


def share_budget_cap(commission_rate: float) -> float:
    """Fraction of pre-trade wealth the stock notional may reach in share mode.

    Capping at (1-d)/(1+d) keeps cash non-negative after commissions, given
    cash was non-negative before the trade.
    """
    return (1.0 - commission_rate) / (1.0 + commission_rate)


def run_share_episode(cfg: EnvConfig, share_targets, closes) -> EpisodeResult:
    """Share-count accounting: trade to target share counts at each close.

    Targets whose notional exceeds the budget cap are scaled down
    proportionally. Cash earns the risk-free rate.
    """
    closes = getattr(closes, "close", closes)
    closes = np.asarray(closes, dtype=float)
    if closes.ndim == 1:
        closes = closes[:, None]
    targets = np.asarray(share_targets, dtype=float).reshape(-1, closes.shape[1])
    T = len(targets)
    if len(closes) != T + 1:
        raise LengthMismatch(f"{T} share targets need {T + 1} closes, got {len(closes)}")
    if np.any(targets < 0):
        raise InvalidWeights("share targets must be non-negative")
    kappa = share_budget_cap(cfg.commission_rate)
    bond = 1.0 + cfg.risk_free_rate
    wealth = [float(cfg.initial_wealth)]
    held = np.zeros(closes.shape[1])
    rets, costs, commission, turnover, leverage, holdings = [], [], [], [], [], []
    for t in range(T):
        p, q = closes[t], closes[t + 1]
        w_prev = wealth[-1]
        n = targets[t]
        notional = float(n @ p)
        if notional > kappa * w_prev:
            n = n * (kappa * w_prev / notional)
        fee = cfg.commission_rate * float(np.abs(n - held) @ p)
        w_next = bond * (w_prev - n @ p - fee) + n @ q
        if not w_next > 0:
            raise BankruptWealth(f"wealth {w_next} after step {t}")
        rets.append(w_next / w_prev - 1.0)
        costs.append(fee / w_prev)
        commission.append(fee)
        turnover.append(float(np.abs(n - held) @ p) / w_prev)
        leverage.append(float(n @ p) / w_prev)
        wealth.append(float(w_next))
        held = n
        holdings.append(n)
    return EpisodeResult(np.array(rets), np.array(wealth), np.array(costs), np.array(commission),
                         np.array(turnover), np.array(leverage),
                         np.array(holdings).reshape(T, closes.shape[1]))


def shares_delta(wealth: float, w_now: float, w_prev: float, price: float) -> float:
    """Shares to trade to move one position from ``w_prev`` to ``w_now``."""
    if not price > 0:
        raise NonPositivePrice(f"price must be positive, got {price}")
    return (wealth * w_now - wealth * w_prev) / price


def utility(returns, kind: UtilityKind | str = UtilityKind.LOG) -> float:
    """Cumulative log return or the (per-period) Sharpe ratio of ``returns``.

    Sharpe uses the sample standard deviation plus 1e-12, so a single
    return gives ``mean / 1e-12``.
    """
    r = np.asarray(returns, dtype=float)
    if r.size == 0:
        raise EmptyReturns("utility of an empty return series")
    kind = UtilityKind(kind)
    if kind is UtilityKind.LOG:
        if np.any(1.0 + r <= 0):
            raise LogOfNonPositive("1 + R must be positive for log utility")
        return float(np.log1p(r).sum())
    std = r.std(ddof=1) if r.size > 1 else 0.0
    return float(r.mean() / (std + SHARPE_EPS))


def utility_grad(returns, kind: UtilityKind | str = UtilityKind.LOG) -> np.ndarray:
    """dU/dR along the last axis; leading axes are batch dimensions."""
    r = np.asarray(returns, dtype=float)
    kind = UtilityKind(kind)
    if kind is UtilityKind.LOG:
        return 1.0 / (1.0 + r)
    T = r.shape[-1]
    mean = r.mean(axis=-1, keepdims=True)
    if T > 1:
        std = r.std(axis=-1, ddof=1, keepdims=True)
        # std == 0 takes the zero subgradient
        dstd = np.where(std > 0, (r - mean) / ((T - 1) * np.where(std > 0, std, 1.0)), 0.0)
    else:
        std = np.zeros_like(mean)
        dstd = np.zeros_like(r)
    denom = std + SHARPE_EPS
    return 1.0 / (T * denom) - mean / denom**2 * dstd


def buy_and_hold(cfg: EnvConfig, history, asset: str) -> np.ndarray:
    """Equity curve of a one-time full allocation into ``asset`` at the first close."""
    if asset not in history.assets:
        raise UnknownAsset(asset)
    p = history.close[:, history.asset_index(asset)]
    return cfg.initial_wealth * (1.0 - cfg.commission_rate) * p / p[0]


def gross_leverage(weights) -> float:
    w = check_weights(weights)
    return float(1.0 - w[0])

