"""Recurrent deep policy network.

Layer 1 is recurrent only through the previous action::

    o1 = relu(f_t @ a + b + w_{t-1} @ u)

followed by dense relu layers and an output head. The weight head turns
logits into long-only weights over bond + m stocks (sigmoid then
normalize, or softmax); the share head emits ``max_shares * tanh(z)``
clamped at zero, one entry per stock.

All functions accept a leading batch axis.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write
from .errors import EmptySlice, ShapeMismatch

WEIGHT_MODE = "weight"
SHARE_MODE = "share"
CHECKPOINT_VERSION = 1


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    x = _floating(x)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def tanh(x):
    return np.tanh(x)


def _floating(x):
    """Array view that keeps any float dtype (e.g. longdouble) and upcasts the rest."""
    x = np.asarray(x)
    return x if np.issubdtype(x.dtype, np.floating) else x.astype(float)


def _softmax(x):
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class PolicyConfig:
    mode: str = WEIGHT_MODE
    head: str = "sigmoid"  # weight-head normalization: "sigmoid" or "softmax"
    dropout_rate: float = 0.2
    hidden_sizes: tuple[int, ...] = (128, 128, 64)
    max_shares: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.mode not in (WEIGHT_MODE, SHARE_MODE):
            raise ValueError(f"unknown policy mode {self.mode!r}")
        if self.head not in ("sigmoid", "softmax"):
            raise ValueError(f"unknown weight head {self.head!r}")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise ValueError("hidden sizes must be >= 1")
        if self.max_shares < 1:
            raise ValueError("max_shares must be >= 1")


@dataclass
class PolicyParameters:
    config: PolicyConfig
    feature_dim: int
    num_stocks: int
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def action_dim(self) -> int:
        return self.num_stocks + 1 if self.config.mode == WEIGHT_MODE else self.num_stocks

    @property
    def dense_names(self) -> list[str]:
        return [f"dense{i}" for i in range(1, len(self.config.hidden_sizes))]

    @property
    def feedback_scale(self) -> float:
        return 1.0 if self.config.mode == WEIGHT_MODE else 1.0 / self.config.max_shares

    def initial_action(self) -> np.ndarray:
        w = np.zeros(self.action_dim)
        if self.config.mode == WEIGHT_MODE:
            w[0] = 1.0
        return w

    def copy(self) -> "PolicyParameters":
        return PolicyParameters(self.config, self.feature_dim, self.num_stocks,
                                {k: v.copy() for k, v in self.arrays.items()})

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "PolicyParameters":
        if arrays.keys() != self.arrays.keys():
            raise ShapeMismatch("parameter names differ")
        for k, v in arrays.items():
            if np.shape(v) != self.arrays[k].shape:
                raise ShapeMismatch(f"{k}: {np.shape(v)} vs {self.arrays[k].shape}")
        return PolicyParameters(self.config, self.feature_dim, self.num_stocks, dict(arrays))

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.arrays.values()])

    def unflat(self, vec) -> "PolicyParameters":
        vec = np.asarray(vec)
        total = sum(v.size for v in self.arrays.values())
        if vec.size != total:
            raise ShapeMismatch(f"expected {total} values, got {vec.size}")
        out, i = {}, 0
        for k, v in self.arrays.items():
            out[k] = vec[i:i + v.size].reshape(v.shape)
            i += v.size
        return PolicyParameters(self.config, self.feature_dim, self.num_stocks, out)

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["hidden_sizes"] = list(cfg["hidden_sizes"])
        return {
            "schema_version": CHECKPOINT_VERSION,
            "config": cfg,
            "feature_dim": self.feature_dim,
            "num_stocks": self.num_stocks,
            "arrays": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                       for k, v in self.arrays.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PolicyParameters":
        if doc.get("schema_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('schema_version')}")
        cfg = PolicyConfig(**doc["config"])
        arrays = {k: np.asarray(v["data"], dtype=float).reshape(v["shape"])
                  for k, v in doc["arrays"].items()}
        return cls(cfg, int(doc["feature_dim"]), int(doc["num_stocks"]), arrays)

    def save(self, path: str | Path) -> None:
        atomic_write(path, json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PolicyParameters":
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_params(cfg: PolicyConfig, feature_dim: int, num_stocks: int) -> PolicyParameters:
    """Glorot-uniform weights, zero biases, deterministic in ``cfg.seed``."""
    if feature_dim < 1 or num_stocks < 1:
        raise ShapeMismatch("feature_dim and num_stocks must be positive")
    rng = np.random.default_rng(cfg.seed)
    params = PolicyParameters(cfg, feature_dim, num_stocks)
    A = params.action_dim
    sizes = cfg.hidden_sizes

    def glorot(fan_in, fan_out):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-s, s, size=(fan_in, fan_out))

    arrays = {
        "rec.a": glorot(feature_dim, sizes[0]),
        "rec.b": np.zeros(sizes[0]),
        "rec.u": glorot(A, sizes[0]),
    }
    for name, n_in, n_out in zip(params.dense_names, sizes[:-1], sizes[1:]):
        arrays[f"{name}.a"] = glorot(n_in, n_out)
        arrays[f"{name}.b"] = np.zeros(n_out)
    arrays["out.a"] = glorot(sizes[-1], A)
    arrays["out.b"] = np.zeros(A)
    params.arrays = arrays
    return params


def dropout_masks(params: PolicyParameters, rng: np.random.Generator, prefix: tuple[int, ...] = (),
                  rate: float | None = None) -> list[np.ndarray]:
    """Inverted-dropout masks (0 or 1/(1-rate)) for every hidden layer."""
    rate = params.config.dropout_rate if rate is None else rate
    keep = 1.0 - rate
    return [(rng.random(prefix + (h,)) < keep) / keep for h in params.config.hidden_sizes]


def forward(f, w_prev, params: PolicyParameters, masks=None):
    """One decision step. Returns ``(action, cache)``.

    ``masks`` is one array per hidden layer (as from :func:`dropout_masks`);
    ``None`` evaluates without dropout.
    """
    f = _floating(f)
    w_prev = _floating(w_prev)
    single = f.ndim == 1
    x = np.atleast_2d(f)
    wp = np.atleast_2d(w_prev)
    if x.shape[-1] != params.feature_dim:
        raise ShapeMismatch(f"feature dim {x.shape[-1]}, expected {params.feature_dim}")
    if wp.shape[-1] != params.action_dim:
        raise ShapeMismatch(f"previous action dim {wp.shape[-1]}, expected {params.action_dim}")
    P = params.arrays
    w_in = wp * params.feedback_scale

    zs, hs = [], []
    z = x @ P["rec.a"] + P["rec.b"] + w_in @ P["rec.u"]
    h = relu(z)
    if masks is not None:
        h = h * np.atleast_2d(masks[0])
    zs.append(z)
    hs.append(h)
    for i, name in enumerate(params.dense_names, start=1):
        z = h @ P[f"{name}.a"] + P[f"{name}.b"]
        h = relu(z)
        if masks is not None:
            h = h * np.atleast_2d(masks[i])
        zs.append(z)
        hs.append(h)
    zo = h @ P["out.a"] + P["out.b"]

    cfg = params.config
    if cfg.mode == WEIGHT_MODE:
        if cfg.head == "sigmoid":
            # normalized sigmoid in log space: exact for any finite logits
            action = _softmax(-np.logaddexp(0.0, -zo))
        else:
            action = _softmax(zo)
        head = None
    else:
        head = cfg.max_shares * np.tanh(zo)
        action = np.maximum(head, 0.0)

    cache = {"x": x, "w_in": w_in, "z": zs, "h": hs, "masks": masks, "zo": zo,
             "head": head, "action": action}
    return (action[0] if single else action), cache


def backward_step(cache, params: PolicyParameters, action_bar):
    """Vector-Jacobian product of one forward step.

    ``action_bar`` has shape (B, K, A): K adjoint rows per batch element
    sharing the same cached activations. Returns ``(grads, prev_bar)``
    where ``grads`` sums over all rows and ``prev_bar`` (B, K, A) is the
    adjoint of the previous action.
    """
    P = params.arrays
    cfg = params.config
    abar = _floating(action_bar)
    zo = cache["zo"][:, None, :]
    act = cache["action"][:, None, :]
    if cfg.mode == WEIGHT_MODE:
        inner = act * (abar - (abar * act).sum(axis=-1, keepdims=True))
        zbar = inner * sigmoid(-zo) if cfg.head == "sigmoid" else inner
    else:
        head = cache["head"][:, None, :]
        th = head / cfg.max_shares
        zbar = abar * (head > 0) * cfg.max_shares * (1.0 - th**2)

    grads = {}
    hs, zs, masks = cache["h"], cache["z"], cache["masks"]
    zsum = zbar.sum(axis=1)
    grads["out.a"] = hs[-1].T @ zsum
    grads["out.b"] = zsum.sum(axis=0)
    hbar = zbar @ P["out.a"].T

    names = ["rec"] + params.dense_names
    for i in range(len(names) - 1, -1, -1):
        if masks is not None:
            hbar = hbar * np.atleast_2d(masks[i])[:, None, :]
        zbar = hbar * (zs[i] > 0)[:, None, :]
        zsum = zbar.sum(axis=1)
        name = names[i]
        if i == 0:
            grads["rec.a"] = cache["x"].T @ zsum
            grads["rec.b"] = zsum.sum(axis=0)
            grads["rec.u"] = cache["w_in"].T @ zsum
            prev_bar = (zbar @ P["rec.u"].T) * params.feedback_scale
        else:
            grads[f"{name}.a"] = hs[i - 1].T @ zsum
            grads[f"{name}.b"] = zsum.sum(axis=0)
            hbar = zbar @ P[f"{name}.a"].T
    return {k: grads[k] for k in P}, prev_bar


def forward_sequence(features, params: PolicyParameters, masks=None, w0=None):
    """Roll the policy over a feature slice.

    ``features`` is (T, d) or (B, T, d); ``masks`` per hidden layer is
    (T, h) or (B, T, h). The previous action starts at all-bond (weight
    head) or zero shares (share head). Returns ``(actions, caches)`` with
    actions shaped like the input's leading axes plus the action dim.
    """
    X = _floating(features)
    single = X.ndim == 2
    if single:
        X = X[None]
        if masks is not None:
            masks = [np.asarray(m)[None] for m in masks]
    if X.ndim != 3 or X.shape[1] == 0:
        raise EmptySlice("feature slice must contain at least one day")
    B, T, _ = X.shape
    prev = np.broadcast_to(params.initial_action() if w0 is None else _floating(w0),
                           (B, params.action_dim))
    dtype = np.result_type(X, params.arrays["rec.a"])
    actions = np.empty((B, T, params.action_dim), dtype=dtype)
    caches = []
    for t in range(T):
        m_t = None if masks is None else [m[:, t] for m in masks]
        prev, cache = forward(X[:, t], prev, params, m_t)
        actions[:, t] = prev
        caches.append(cache)
    return (actions[0] if single else actions), caches
