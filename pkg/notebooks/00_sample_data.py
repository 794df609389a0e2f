"""Build the synthetic market the config presets point at.

A market index (SPY) runs through a calm stretch, a crash and a long
recovery; forty stocks load on it with random betas. The result is a
long-format OHLCV CSV in data/sample_market.csv.
"""

# %%
from __future__ import annotations

from pathlib import Path

import numpy as np

from rdnn import synthetic

ROOT = Path(__file__).resolve().parents[1]

# %% Regimes in trading days: 2007 calm, 2008-2009 crash, 2010-2012 recovery.
segments = [(252, 0.0004), (400, -0.0012), (104, 0.0015), (760, 0.0005)]
history = synthetic.factor_universe(40, segments, seed=2007)
print(history.num_days, "days,", history.num_assets, "assets")
print("first and last date:", history.calendar[0], history.calendar[-1])

# %% Index path at a few checkpoints
spy = history.close[:, 0]
for day in (0, 252, 652, 756, len(spy) - 1):
    print(history.calendar[day], round(float(spy[day]), 2))

# %%
out = ROOT / "data" / "sample_market.csv"
out.parent.mkdir(exist_ok=True)
synthetic.write_csv(history, out)
print("wrote", out, f"({out.stat().st_size / 1e6:.1f} MB)")
