"""Recurrent direct reinforcement learning for long-only portfolios with transaction costs."""

from .data import FeatureMatrix, IndicatorConfig, PriceHistory, build_features, load_ohlcv
from .env import EnvConfig, UtilityKind, run_episode, run_share_episode, utility
from .policy import PolicyConfig, PolicyParameters, forward, forward_sequence, init_params
from .training import TrainConfig, bptt_gradient, finite_diff_gradient, train

__version__ = "0.1.0"
