"""
Learning the obvious trade
==========================

Stock A compounds at +0.2% a day and stock B at -0.2%. A policy that
maximizes log wealth should move everything into A.
"""

# %%
import numpy as np

from rdnn import env, synthetic
from rdnn.data import build_features
from rdnn.env import EnvConfig
from rdnn.policy import PolicyConfig, forward_sequence
from rdnn.training import TrainConfig, train

hist = synthetic.drift_market(days=400, drifts=(0.002, -0.002))
feats = build_features(hist)
print(feats.dim, "features per day over", len(feats.calendar), "days")

# %% Train in stages and watch the allocation move.
env_cfg = EnvConfig(commission_rate=0.0)
params = PolicyConfig(seed=0)
for stage in range(5):
    cfg = TrainConfig(epochs=5, episode_length=60, optimizer="adam", seed=stage)
    params, report = train(feats, hist, cfg, env_cfg, params)
    weights, _ = forward_sequence(feats.values[-60:], params)
    print(f"after {5 * (stage + 1):2d} epochs: mean weights (bond, A, B) = {weights.mean(axis=0).round(3)}"
          f"  batch utility {report.utility[-1]:.4f}")

# %% Compare with holding both stocks equally.
closes = hist.close[-61:]
agent = env.run_episode(env_cfg, forward_sequence(feats.values[-61:-1], params)[0], closes)
equal = env.run_episode(env_cfg, np.tile([0, 0.5, 0.5], (60, 1)), closes)
print(f"last 60 days: agent {agent.final_wealth:,.0f}, equal weight {equal.final_wealth:,.0f}")
