"""Stock selection over a large pool: mask-network scores, top-k baskets, turnover control."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DegenerateMask, KTooLarge, PoolTooSmall, ShapeMismatch
from .policy import PolicyParameters, forward


@dataclass
class MaskParameters:
    """Per-stock scorer shared across the pool: relu hidden layer then a linear score."""

    w1: np.ndarray  # (channels, hidden)
    b1: np.ndarray
    w2: np.ndarray  # (hidden,)
    b2: float = 0.0

    @classmethod
    def init(cls, channels: int, hidden: int = 64, seed: int = 0) -> "MaskParameters":
        rng = np.random.default_rng(seed)
        s1 = np.sqrt(6.0 / (channels + hidden))
        s2 = np.sqrt(6.0 / (hidden + 1))
        return cls(rng.uniform(-s1, s1, (channels, hidden)), np.zeros(hidden),
                   rng.uniform(-s2, s2, hidden), 0.0)

    @classmethod
    def zeros(cls, channels: int, hidden: int = 64) -> "MaskParameters":
        return cls(np.zeros((channels, hidden)), np.zeros(hidden), np.zeros(hidden), 0.0)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2, [self.b2]])

    def unflat(self, vec) -> "MaskParameters":
        c, h = self.w1.shape
        vec = np.asarray(vec, dtype=float)
        return MaskParameters(vec[:c * h].reshape(c, h), vec[c * h:c * h + h],
                              vec[c * h + h:c * h + 2 * h], float(vec[-1]))

    def to_dict(self) -> dict:
        return {"shape": list(self.w1.shape), "w1": self.w1.ravel().tolist(), "b1": self.b1.tolist(),
                "w2": self.w2.tolist(), "b2": self.b2}

    @classmethod
    def from_dict(cls, doc: dict) -> "MaskParameters":
        return cls(np.asarray(doc["w1"], dtype=float).reshape(doc["shape"]),
                   np.asarray(doc["b1"], dtype=float), np.asarray(doc["w2"], dtype=float),
                   float(doc["b2"]))


@dataclass
class Basket:
    selected: np.ndarray  # sorted pool indices
    mask: np.ndarray  # 0/1 over the pool
    retained: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @classmethod
    def from_indices(cls, indices, pool_size: int, retained=()) -> "Basket":
        sel = np.sort(np.asarray(indices, dtype=int))
        mask = np.zeros(pool_size)
        mask[sel] = 1.0
        return cls(sel, mask, np.sort(np.asarray(retained, dtype=int)))


def score_stocks(pool_features, params: MaskParameters) -> np.ndarray:
    """One score per stock; ``pool_features`` is (stocks, channels)."""
    x = np.asarray(pool_features, dtype=float)
    if x.ndim != 2 or x.shape[1] != params.w1.shape[0] or x.shape[0] == 0:
        raise ShapeMismatch(f"pool features {x.shape} vs scorer input {params.w1.shape[0]}")
    return np.maximum(x @ params.w1 + params.b1, 0.0) @ params.w2 + params.b2


def _rank(scores, candidates) -> np.ndarray:
    """Candidates ordered by descending score, ties by lower index."""
    candidates = np.asarray(candidates, dtype=int)
    order = np.lexsort((candidates, -np.asarray(scores)[candidates]))
    return candidates[order]


def top_k_mask(scores, k: int) -> Basket:
    scores = np.asarray(scores, dtype=float)
    if k > len(scores):
        raise KTooLarge(f"k={k} exceeds pool of {len(scores)}")
    if k < 0:
        raise ValueError("k must be non-negative")
    return Basket.from_indices(_rank(scores, np.arange(len(scores)))[:k], len(scores))


def max_replacements(k: int, turnover_cap: float) -> int:
    """Tickers that may change per day when at most ``turnover_cap`` of the basket turns over."""
    return int(np.floor(turnover_cap * k + 1e-12))


def turnover_constrained_basket(scores, prev: Basket, k: int, turnover_cap: float = 0.5) -> Basket:
    """Keep the best-scoring part of yesterday's basket, fill the rest by score.

    With the default cap, the top ``k/2`` of ``prev`` (ranked by today's
    scores) are retained and the remaining ``k/2`` slots go to the
    best-scoring stocks outside the retained set, which may include the
    rest of yesterday's basket.
    """
    scores = np.asarray(scores, dtype=float)
    n = len(scores)
    if n < k:
        raise PoolTooSmall(f"pool of {n} cannot hold a basket of {k}")
    if len(prev.selected) != k:
        raise ShapeMismatch(f"previous basket has {len(prev.selected)} names, expected {k}")
    keep = k - max_replacements(k, turnover_cap)
    retained = _rank(scores, prev.selected)[:keep]
    rest = np.setdiff1d(np.arange(n), retained)
    fill = _rank(scores, rest)[:k - keep]
    return Basket.from_indices(np.concatenate([retained, fill]), n, retained)


def apply_mask(raw_action, basket: Basket) -> np.ndarray:
    """Zero the unselected stocks (bond untouched) and renormalize."""
    w = np.asarray(raw_action, dtype=float)
    if w.shape != (len(basket.mask) + 1,):
        raise ShapeMismatch(f"action {w.shape} vs pool of {len(basket.mask)}")
    out = w * np.concatenate([[1.0], basket.mask])
    total = out.sum()
    if not total > 0:
        raise DegenerateMask("masked action has no weight left")
    return out / total


@dataclass
class SelectionResult:
    weights: np.ndarray  # (T, pool+1)
    baskets: list[Basket]
    scores: np.ndarray  # (T, pool)


def joint_forward(pool_features, mask_params: MaskParameters, policy: PolicyParameters, k: int,
                  mode: str = "free", turnover_cap: float = 0.5) -> SelectionResult:
    """Score, pick a basket, run the actor and mask its action, day by day.

    ``pool_features`` is (T, pool, channels). The actor sees the pool's
    features with unselected stocks zeroed and gets the previous masked
    weights as feedback.
    """
    X = np.asarray(pool_features, dtype=float)
    T, n, c = X.shape
    if policy.num_stocks != n or policy.feature_dim != n * c:
        raise ShapeMismatch("policy dimensions do not match the pool")
    if mode not in ("free", "turnover"):
        raise ValueError(f"unknown selection mode {mode!r}")
    prev_w = policy.initial_action()
    basket = None
    weights = np.empty((T, n + 1))
    scores = np.empty((T, n))
    baskets = []
    for t in range(T):
        s = score_stocks(X[t], mask_params)
        if basket is None or mode == "free":
            basket = top_k_mask(s, k)
        else:
            basket = turnover_constrained_basket(s, basket, k, turnover_cap)
        visible = (X[t] * basket.mask[:, None]).reshape(-1)
        raw, _ = forward(visible, prev_w, policy)
        prev_w = apply_mask(raw, basket)
        weights[t] = prev_w
        scores[t] = s
        baskets.append(basket)
    return SelectionResult(weights, baskets, scores)


def train_mask(mask_params: MaskParameters, objective: Callable[[MaskParameters], float],
               iterations: int = 20, step: float = 0.05, perturbation: float = 0.05,
               seed: int = 0) -> tuple[MaskParameters, list[float]]:
    """Derivative-free ascent for the scorer.

    Each iteration draws a Rademacher direction, estimates the slope from
    the two perturbed objective values, and accepts the proposed step only
    if it improves the objective. Returns the parameters and the accepted
    objective trace.
    """
    rng = np.random.default_rng(seed)
    theta = mask_params.flat()
    best = objective(mask_params)
    trace = [best]
    for _ in range(iterations):
        direction = rng.choice([-1.0, 1.0], size=theta.size)
        up = objective(mask_params.unflat(theta + perturbation * direction))
        down = objective(mask_params.unflat(theta - perturbation * direction))
        slope = (up - down) / (2 * perturbation)
        candidates = [(up, theta + perturbation * direction),
                      (down, theta - perturbation * direction)]
        proposal = theta + step * slope * direction
        candidates.append((objective(mask_params.unflat(proposal)), proposal))
        value, vec = max(candidates, key=lambda c: c[0])
        if value > best:
            best, theta = value, vec
        trace.append(best)
    return mask_params.unflat(theta), trace
