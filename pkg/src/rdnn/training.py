"""Task-aware backpropagation through time for the recurrent policy.

The utility depends on the actions through the accounting (each period
return depends on the current action and, via the drifted pre-trade
weights or held shares, on earlier ones) and through the policy's own
action feedback. The accounting part is differentiated exactly; the
feedback recursion ``dw_t/dtheta = local + dw_t/dw_{t-1} dw_{t-1}/dtheta``
is unrolled at most ``tau`` steps. Every step's direct utility
sensitivity always reaches its own parameters (the depth-0 term), so
each truncated stack gets gradient even for small ``tau``. With
``tau >= T - 1`` the result is the exact gradient.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import env as envmod
from .data import FeatureMatrix, PriceHistory
from .env import EnvConfig, UtilityKind, share_budget_cap, utility_grad
from .errors import InsufficientData, NonFiniteGradient, ShapeMismatch
from .policy import (
    WEIGHT_MODE,
    PolicyConfig,
    PolicyParameters,
    backward_step,
    dropout_masks,
    forward_sequence,
    _floating,
    init_params,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 64
    epochs: int = 100
    tau: int = 5
    utility: UtilityKind = UtilityKind.LOG
    episode_length: int = 60
    seed: int = 0
    gradient_clip: float | None = None
    optimizer: str = "sgd"  # "sgd" or "adam"
    average_steps: bool = True  # divide each episode gradient by its length

    def __post_init__(self):
        object.__setattr__(self, "utility", UtilityKind(self.utility))
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.tau < 1 or self.episode_length < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("tau, episode_length, batch_size must be >= 1 and epochs >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class Episode:
    """Features observed at closes d_0..d_{T-1} and closes d_0..d_T.

    Arrays may carry a leading batch axis: features (B, T, d), closes
    (B, T+1, m).
    """

    features: np.ndarray
    closes: np.ndarray
    risk_free_rate: float = 0.0

    def __post_init__(self):
        self.features = _floating(self.features)
        self.closes = _floating(self.closes)
        if self.closes.ndim == self.features.ndim - 1:
            self.closes = self.closes[..., None]
        if self.features.shape[:-1][:-1] != self.closes.shape[:-2] or \
                self.closes.shape[-2] != self.features.shape[-2] + 1:
            raise ShapeMismatch(f"features {self.features.shape} vs closes {self.closes.shape}")

    @property
    def batched(self) -> bool:
        return self.features.ndim == 3

    @property
    def length(self) -> int:
        return self.features.shape[-2]

    def as_batch(self) -> "Episode":
        if self.batched:
            return self
        return Episode(self.features[None], self.closes[None], self.risk_free_rate)

    def gross(self) -> np.ndarray:
        stock = self.closes[..., 1:, :] / self.closes[..., :-1, :]
        bond = np.full(stock.shape[:-1] + (1,), 1.0 + self.risk_free_rate)
        return np.concatenate([bond, stock], axis=-1)


# --- differentiable accounting (batched) ---------------------------------

def _weight_returns(actions, gross, delta):
    """Period returns for weight actions; ``actions`` and ``gross`` are (B, T, m+1)."""
    drift = np.zeros_like(actions)
    drift[:, 0, 0] = 1.0
    grown = actions[:, :-1] * gross[:, :-1]
    S = grown.sum(axis=-1, keepdims=True)
    drift[:, 1:] = grown / S
    diff = actions - drift
    cost = delta * np.abs(diff[..., 1:]).sum(axis=-1)
    growth = (actions * gross).sum(axis=-1)
    aux = {"diff": diff, "cost": cost, "growth": growth, "S": S}
    return growth * (1.0 - cost) - 1.0, aux


def _weight_returns_vjp(rho, actions, gross, delta, aux):
    diff, cost, growth, S = aux["diff"], aux["cost"], aux["growth"], aux["S"]
    sgn = np.sign(diff)
    sgn[..., 0] = 0.0
    abar = rho[..., None] * ((1.0 - cost)[..., None] * gross - (growth * delta)[..., None] * sgn)
    drift_bar = (rho * growth * delta)[..., None] * sgn
    db = drift_bar[:, 1:]
    prev, g = actions[:, :-1], gross[:, :-1]
    inner = (db * prev * g).sum(axis=-1, keepdims=True)
    abar[:, :-1] += db * g / S - inner * g / S**2
    return abar


def _share_returns(actions, closes, delta, rf, w0):
    B, T, m = actions.shape
    kappa = share_budget_cap(delta)
    b = 1.0 + rf
    W = np.empty((B, T + 1), dtype=actions.dtype)
    W[:, 0] = w0
    held = np.zeros((B, T + 1, m), dtype=actions.dtype)
    capped = np.zeros((B, T), dtype=bool)
    scale = np.ones((B, T), dtype=actions.dtype)
    for t in range(T):
        p, q, a = closes[:, t], closes[:, t + 1], actions[:, t]
        notional = (a * p).sum(axis=-1)
        cap = kappa * W[:, t]
        c = notional > cap
        s = np.where(c, cap / np.where(c, notional, 1.0), 1.0)
        n = a * s[:, None]
        fee = delta * (np.abs(n - held[:, t]) * p).sum(axis=-1)
        W[:, t + 1] = b * (W[:, t] - (n * p).sum(axis=-1) - fee) + (n * q).sum(axis=-1)
        held[:, t + 1] = n
        capped[:, t] = c
        scale[:, t] = s
    aux = {"W": W, "held": held, "capped": capped, "scale": scale}
    return W[:, 1:] / W[:, :-1] - 1.0, aux


def _share_returns_vjp(rho, actions, closes, delta, rf, aux):
    W, held, capped, scale = aux["W"], aux["held"], aux["capped"], aux["scale"]
    B, T, m = actions.shape
    kappa = share_budget_cap(delta)
    b = 1.0 + rf
    Wbar = np.zeros_like(W)
    nbar = np.zeros_like(held)
    abar = np.zeros_like(actions)
    for t in range(T - 1, -1, -1):
        p, q, a = closes[:, t], closes[:, t + 1], actions[:, t]
        Wbar[:, t + 1] += rho[:, t] / W[:, t]
        Wbar[:, t] -= rho[:, t] * W[:, t + 1] / W[:, t] ** 2
        G = Wbar[:, t + 1]
        Wbar[:, t] += b * G
        nbar[:, t + 1] += G[:, None] * (q - b * p)
        d = (-b * G * delta)[:, None] * np.sign(held[:, t + 1] - held[:, t]) * p
        nbar[:, t + 1] += d
        nbar[:, t] -= d
        nb = nbar[:, t + 1]
        c = capped[:, t]
        notional = np.where(c, (a * p).sum(axis=-1), 1.0)
        proj = (nb * a).sum(axis=-1) / notional
        abar[:, t] = np.where(c[:, None], scale[:, t, None] * (nb - proj[:, None] * p), nb)
        Wbar[:, t] += np.where(c, kappa * proj, 0.0)
    return abar


def _episode_returns(actions, episode: Episode, params: PolicyParameters, env_cfg: EnvConfig):
    delta = env_cfg.commission_rate
    if params.config.mode == WEIGHT_MODE:
        gross = episode.gross()
        R, aux = _weight_returns(actions, gross, delta)
        vjp = lambda rho: _weight_returns_vjp(rho, actions, gross, delta, aux)
    else:
        R, aux = _share_returns(actions, episode.closes, delta, episode.risk_free_rate,
                                env_cfg.initial_wealth)
        vjp = lambda rho: _share_returns_vjp(rho, actions, episode.closes, delta,
                                             episode.risk_free_rate, aux)
    return R, vjp


def _batch_utility(R, kind: UtilityKind) -> np.ndarray:
    if kind is UtilityKind.LOG:
        return np.log1p(R).sum(axis=-1)
    T = R.shape[-1]
    std = R.std(axis=-1, ddof=1) if T > 1 else np.zeros(R.shape[:-1])
    return R.mean(axis=-1) / (std + envmod.SHARPE_EPS)


# --- gradients -------------------------------------------------------------

def _zero_grad(params: PolicyParameters) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.arrays.items()}


def batch_gradient(episode: Episode, params: PolicyParameters, utility=UtilityKind.LOG, tau=None,
                   env_cfg: EnvConfig | None = None, masks=None):
    """Gradient summed over a batch of episodes, plus per-episode utilities."""
    env_cfg = env_cfg or EnvConfig()
    kind = UtilityKind(utility)
    ep = episode.as_batch()
    T = ep.length
    if ep.closes.shape[-1] != params.num_stocks:
        raise ShapeMismatch(f"episode has {ep.closes.shape[-1]} stocks, policy {params.num_stocks}")
    if masks is not None and not episode.batched:
        masks = [np.asarray(m)[None] for m in masks]
    actions, caches = forward_sequence(ep.features, params, masks)
    R, vjp = _episode_returns(actions, ep, params, env_cfg)
    direct = vjp(utility_grad(R, kind))
    tau = T if tau is None else tau

    grad = _zero_grad(params)
    if tau >= T - 1:
        carry = np.zeros((len(actions), 1, params.action_dim))
        for t in range(T - 1, -1, -1):
            g, carry = backward_step(caches[t], params, direct[:, t, None] + carry)
            for k in grad:
                grad[k] += g[k]
    else:
        rows = np.zeros((len(actions), 0, params.action_dim))
        origins: list[int] = []
        for s in range(T - 1, -1, -1):
            rows = np.concatenate([direct[:, s, None], rows], axis=1)
            origins.insert(0, s)
            g, prev_bar = backward_step(caches[s], params, rows)
            for k in grad:
                grad[k] += g[k]
            keep = [i for i, o in enumerate(origins) if o - (s - 1) <= tau]
            rows = prev_bar[:, keep]
            origins = [origins[i] for i in keep]
    for k, v in grad.items():
        if not np.all(np.isfinite(v)):
            raise NonFiniteGradient(f"non-finite gradient in {k}")
    return grad, _batch_utility(R, kind)


def bptt_gradient(episode: Episode, params: PolicyParameters, cfg: TrainConfig | None = None,
                  env_cfg: EnvConfig | None = None, masks=None, tau: int | None = None):
    """Return ``(gradient of the episode utility, utility value)``.

    ``tau`` overrides ``cfg.tau``. ``masks`` fixes the dropout pattern used
    in both passes; without it the forward runs dropout-free.
    """
    cfg = cfg or TrainConfig()
    grad, util = batch_gradient(episode, params, cfg.utility, cfg.tau if tau is None else tau,
                                env_cfg, masks)
    return grad, float(util.sum())


def episode_utility(episode: Episode, params: PolicyParameters, utility=UtilityKind.LOG,
                    env_cfg: EnvConfig | None = None, masks=None, dtype=None):
    """Utility of each episode by plain forward simulation (no gradients).

    ``dtype`` recasts features, prices and parameters first, e.g.
    ``np.longdouble`` for an extended-precision evaluation.
    """
    env_cfg = env_cfg or EnvConfig()
    ep = episode.as_batch()
    if dtype is not None:
        ep = Episode(ep.features.astype(dtype), ep.closes.astype(dtype), ep.risk_free_rate)
        params = params.with_arrays({k: v.astype(dtype) for k, v in params.arrays.items()})
        if masks is not None:
            masks = [np.asarray(m).astype(dtype) for m in masks]
    if masks is not None and not episode.batched:
        masks = [np.asarray(m)[None] for m in masks]
    actions, _ = forward_sequence(ep.features, params, masks)
    R, _ = _episode_returns(actions, ep, params, env_cfg)
    util = _batch_utility(R, UtilityKind(utility))
    return util if episode.batched else util[0]


def finite_diff_gradient(episode: Episode, params: PolicyParameters, utility=UtilityKind.LOG,
                         eps: float = 1e-5, env_cfg: EnvConfig | None = None, masks=None,
                         dtype=np.longdouble):
    """Central differences of the summed episode utility, one parameter at a time.

    The forward simulations run in ``dtype``; the default extended
    precision keeps rounding noise far below the O(eps^2) truncation error.
    """
    theta = params.flat().astype(dtype)
    out = np.empty(theta.size)
    for i in range(theta.size):
        saved = theta[i]
        theta[i] = saved + dtype(eps)
        up = np.sum(episode_utility(episode, params.unflat(theta), utility, env_cfg, masks, dtype))
        theta[i] = saved - dtype(eps)
        down = np.sum(episode_utility(episode, params.unflat(theta), utility, env_cfg, masks, dtype))
        theta[i] = saved
        out[i] = float((up - down) / (2 * dtype(eps)))
    return params.unflat(out).arrays


def grad_norm(grad) -> float:
    return float(np.sqrt(sum(float((g**2).sum()) for g in grad.values())))


def clip_gradient(grad, max_norm: float | None):
    if max_norm is None:
        return grad
    norm = grad_norm(grad)
    if norm <= max_norm or norm == 0:
        return grad
    return {k: g * (max_norm / norm) for k, g in grad.items()}


def sgd_step(params: PolicyParameters, grad, lr: float, clip: float | None = None) -> PolicyParameters:
    """Gradient ascent on the utility: theta + lr * grad."""
    if grad.keys() != params.arrays.keys():
        raise ShapeMismatch("gradient and parameter names differ")
    grad = clip_gradient(grad, clip)
    new = {}
    for k, v in params.arrays.items():
        if np.shape(grad[k]) != v.shape:
            raise ShapeMismatch(f"{k}: {np.shape(grad[k])} vs {v.shape}")
        new[k] = v + lr * grad[k]
    return params.with_arrays(new)


class Adam:
    """Adam ascent; state is keyed by parameter name."""

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: PolicyParameters, grad, clip=None) -> PolicyParameters:
        grad = clip_gradient(grad, clip)
        self.t += 1
        new = {}
        for k, theta in params.arrays.items():
            g = grad[k]
            self.m[k] = self.beta1 * self.m.get(k, 0.0) + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v.get(k, 0.0) + (1 - self.beta2) * g * g
            mhat = self.m[k] / (1 - self.beta1**self.t)
            vhat = self.v[k] / (1 - self.beta2**self.t)
            new[k] = theta + self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return params.with_arrays(new)


@dataclass
class TrainReport:
    epoch: list[int] = field(default_factory=list)
    utility: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)
    params: PolicyParameters | None = None

    def to_dict(self) -> dict:
        # wall-time is left out so the export is reproducible
        return {"schema_version": 1, "epoch": self.epoch, "utility": self.utility,
                "grad_norm": self.grad_norm}


def align(features: FeatureMatrix, history: PriceHistory) -> int:
    """Row offset of the feature calendar inside the history calendar."""
    n = len(features.calendar)
    offset = history.num_days - n
    if offset < 0 or not np.array_equal(history.calendar[offset:], features.calendar):
        raise InsufficientData("feature calendar is not a suffix of the price calendar")
    if tuple(features.assets) != tuple(history.assets):
        raise InsufficientData("feature and price assets differ")
    return offset


def episode_windows(features: FeatureMatrix, history: PriceHistory, starts, length: int,
                    risk_free_rate: float = 0.0) -> Episode:
    """Batch of episodes starting at the given feature rows."""
    offset = align(features, history)
    starts = np.asarray(starts, dtype=int)
    fidx = starts[:, None] + np.arange(length)
    cidx = offset + starts[:, None] + np.arange(length + 1)
    return Episode(features.values[fidx], history.close[cidx], risk_free_rate)


def train(features: FeatureMatrix, history: PriceHistory, cfg: TrainConfig,
          env_cfg: EnvConfig | None = None, policy: PolicyConfig | PolicyParameters | None = None):
    """Mini-batch ascent on sampled episode windows.

    Returns ``(params, report)``. Deterministic given ``cfg.seed`` and the
    policy seed.
    """
    env_cfg = env_cfg or EnvConfig()
    if isinstance(policy, PolicyParameters):
        params = policy.copy()
    else:
        params = init_params(policy or PolicyConfig(), features.dim, history.num_assets)
    offset = align(features, history)
    T = cfg.episode_length
    n_starts = len(features.calendar) - T
    if n_starts < 1:
        raise InsufficientData(f"{len(features.calendar)} feature days cannot hold a {T}-day episode")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg.learning_rate) if cfg.optimizer == "adam" else None
    report = TrainReport()
    for epoch in range(cfg.epochs):
        tic = time.perf_counter()
        starts = rng.integers(0, n_starts, size=cfg.batch_size)
        batch = episode_windows(features, history, starts, T, env_cfg.risk_free_rate)
        masks = None
        if params.config.dropout_rate > 0:
            masks = dropout_masks(params, rng, (cfg.batch_size, T))
        grad, util = batch_gradient(batch, params, cfg.utility, cfg.tau, env_cfg, masks)
        scale = 1.0 / (cfg.batch_size * (T if cfg.average_steps else 1))
        grad = {k: g * scale for k, g in grad.items()}
        if opt is None:
            params = sgd_step(params, grad, cfg.learning_rate, cfg.gradient_clip)
        else:
            params = opt.step(params, grad, cfg.gradient_clip)
        report.epoch.append(epoch)
        report.utility.append(float(util.mean()))
        report.grad_norm.append(grad_norm(grad))
        report.wall_time.append(time.perf_counter() - tic)
        log.debug("epoch %d utility %.6f |g| %.3e", epoch, report.utility[-1], report.grad_norm[-1])
    report.params = params
    return params, report
