"""
Picking a basket from a large pool
==================================

A scorer ranks every stock each day; the policy only sees and trades the
top k. With the turnover cap on, at most a fixed share of the basket
changes per day (a fifth here).
"""

# %%
import numpy as np

from rdnn import synthetic
from rdnn.data import IndicatorConfig, build_features
from rdnn.policy import PolicyConfig, init_params
from rdnn.selection import MaskParameters, joint_forward

hist = synthetic.random_pool(60, 200, seed=3)
feats = build_features(hist, IndicatorConfig(normalization_window=10))
pool = feats.per_asset()
policy = init_params(PolicyConfig(hidden_sizes=(32, 32, 16), dropout_rate=0.0), feats.dim, 60)
scorer = MaskParameters.init(len(feats.channels), 16, seed=1)

# %%
for mode in ("free", "turnover"):
    sel = joint_forward(pool, scorer, policy, k=20, mode=mode, turnover_cap=0.2)
    changes = [len(set(b.selected) - set(a.selected)) for a, b in zip(sel.baskets, sel.baskets[1:])]
    held = (sel.weights[:, 1:] > 0).sum(axis=1)
    print(f"{mode:8s} daily replacements: mean {np.mean(changes):.1f}, max {max(changes)};"
          f" stocks held per day: {held.min()}..{held.max()}")
