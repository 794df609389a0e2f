"""
Portfolio accounting with transaction costs
===========================================

Walks through one rebalance by hand, then checks a whole episode against
an explicit cash-and-shares ledger.
"""

# %%
import numpy as np

from rdnn import env
from rdnn.env import EnvConfig, PortfolioState

cfg = EnvConfig(initial_wealth=100_000, commission_rate=0.0001)

# %% A 50/50 book after the stock gains 10% has drifted toward the stock.
drifted = env.effective_weights([0.5, 0.5], [1.0, 1.1])
print("drifted weights:", drifted.round(5))

# %% Trading back to 50/50 costs delta times the stock turnover.
state = PortfolioState(1, 105_000.0, np.array([0.5, 0.5]), drifted)
new, r, cost = env.step(state, [0.5, 0.5], [1.0, 1.0], cfg)
print(f"turnover {abs(0.5 - drifted[1]):.5f}, cost fraction {cost:.3e}, wealth {new.wealth:.2f}")

# %% A random week over three stocks.
rng = np.random.default_rng(0)
closes = 100 * np.exp(np.cumsum(rng.normal(0, 0.02, size=(6, 3)), axis=0))
weights = rng.dirichlet(np.ones(4), size=5)
result = env.run_episode(cfg, weights, closes)
print("wealth path:", result.wealth.round(2))
print("commission paid per day:", result.commission.round(2))
print("gross leverage per day:", result.leverage.round(3))


# %% The same trades booked share by share.
def ledger(weights, closes, delta, cash=100_000.0):
    shares = np.zeros(closes.shape[1])
    for t, w in enumerate(weights):
        wealth = cash + shares @ closes[t]
        fee = delta * np.abs(w[1:] * wealth - shares * closes[t]).sum()
        after = wealth - fee
        shares = w[1:] * after / closes[t]
        cash = w[0] * after
    return cash + shares @ closes[-1]


print("episode:", result.final_wealth, "ledger:", ledger(weights, closes, cfg.commission_rate))

# %% Buy and hold pays commission once.
from rdnn import synthetic

hist = synthetic.make_history(np.array([100.0, 120.0, 150.0]), ["SPY"])
print("buy and hold:", env.buy_and_hold(cfg, hist, "SPY"))
