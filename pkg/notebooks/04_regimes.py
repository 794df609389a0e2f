"""
Risk appetite learned from the training regime
==============================================

Two policies share an architecture and a seed. One is trained on a bull
run, the other on a crash. Frozen, both then trade a later crash; the
crash-trained one keeps most of its capital in the bond.
"""

# %%
from rdnn import synthetic
from rdnn.backtest import backtest
from rdnn.data import build_features
from rdnn.env import EnvConfig
from rdnn.policy import PolicyConfig
from rdnn.training import TrainConfig, train

segments = [(260, 0.003), (260, -0.003), (200, 0.003), (200, -0.003)]
hist = synthetic.regime_market(segments, vol=0.01, seed=0)
feats = build_features(hist)
cal = hist.calendar
cfg = TrainConfig(epochs=60, episode_length=40, batch_size=32, optimizer="adam")


def fit(a, b):
    return train(feats.between(cal[a], cal[b]), hist.between(cal[a], cal[b]), cfg, EnvConfig(),
                 PolicyConfig(seed=0))[0]


bull, crash = fit(60, 259), fit(260, 519)

# %% Both frozen over the final crash
for name, params in (("bull-trained", bull), ("crash-trained", crash)):
    r = backtest(params, feats, hist, EnvConfig(), "IDX", cal[720], cal[919])
    s = r.summary
    print(f"{name:14s} mean leverage {r.leverage.mean():.2f}  final wealth {s['final_wealth']:,.0f}"
          f"  vs index {s['baseline_final_wealth']:,.0f}")
