"""
Backpropagation through the action feedback loop
================================================

The policy feeds its previous action back into the first layer, so the
utility depends on the parameters through every earlier decision. This
script compares the analytic gradient with finite differences and shows
how truncating the feedback chain changes it.
"""

# %%
import numpy as np

from rdnn.env import EnvConfig
from rdnn.policy import PolicyConfig, init_params
from rdnn.training import Episode, TrainConfig, bptt_gradient, finite_diff_gradient

rng = np.random.default_rng(1)
params = init_params(PolicyConfig(hidden_sizes=(4, 4, 4), dropout_rate=0.0), 5, 2)
closes = 50 * np.exp(np.cumsum(rng.normal(0, 0.03, size=(9, 2)), axis=0))
episode = Episode(rng.normal(size=(8, 5)), closes)
env_cfg = EnvConfig(commission_rate=0.001)


def flat(grad):
    return np.concatenate([g.ravel() for g in grad.values()])


# %% Full-depth gradient against central differences
for utility in ("log", "sharpe"):
    grad, value = bptt_gradient(episode, params, TrainConfig(utility=utility), env_cfg, tau=8)
    fd = flat(finite_diff_gradient(episode, params, utility, env_cfg=env_cfg))
    big = np.abs(fd) > 1e-8
    err = np.max(np.abs(flat(grad)[big] - fd[big]) / np.abs(fd[big]))
    print(f"{utility:6s} utility {value:+.5f}  max relative error {err:.1e}")

# %% Truncation depth: the gap to the full gradient shrinks as tau grows
full = flat(bptt_gradient(episode, params, env_cfg=env_cfg, tau=8)[0])
for tau in range(1, 8):
    g = flat(bptt_gradient(episode, params, env_cfg=env_cfg, tau=tau)[0])
    print(f"tau={tau}  |g - g_full| / |g_full| = {np.linalg.norm(g - full) / np.linalg.norm(full):.3e}")
