"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line."""

from __future__ import annotations

import time

import numpy as np
import pytest

from oracles import criterion, ledger_wealth, random_simplex, sort_top_k
from rdnn import env, synthetic
from rdnn.cli import main
from rdnn.data import build_features
from rdnn.env import EnvConfig
from rdnn.policy import PolicyConfig, forward, forward_sequence, init_params
from rdnn.selection import Basket, top_k_mask, turnover_constrained_basket
from rdnn.training import Episode, TrainConfig, bptt_gradient, finite_diff_gradient, train


def scenarios(seed, count):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        m, T = int(rng.integers(1, 6)), int(rng.integers(1, 31))
        closes = rng.uniform(5, 500, size=m) * np.exp(np.cumsum(rng.normal(0, 0.03, size=(T + 1, m)), axis=0))
        weights = np.array([random_simplex(rng, m + 1) for _ in range(T)])
        yield rng, weights, closes


def test_criterion_1_ledger_oracle():
    tic = time.perf_counter()
    worst = 0.0
    for rng, weights, closes in scenarios(1, 100):
        delta = float(rng.choice([0.0, 0.0001, 0.01]))
        got = env.run_episode(EnvConfig(commission_rate=delta), weights, closes).final_wealth
        want = ledger_wealth(weights, closes, delta)[-1]
        worst = max(worst, abs(got - want) / want)
    elapsed = time.perf_counter() - tic
    criterion(1, "ledger-oracle equivalence", worst < 1e-10 and elapsed < 5.0,
              f"100 scenarios, max rel err {worst:.2e} (< 1e-10), {elapsed:.2f} s (< 5 s)")


def test_criterion_2_frictionless_product():
    worst = 0.0
    for _, weights, closes in scenarios(2, 100):
        got = env.run_episode(EnvConfig(commission_rate=0.0), weights, closes).final_wealth
        want = 100_000.0
        for t in range(len(weights)):
            growth = weights[t, 0] + sum(weights[t, i + 1] * closes[t + 1, i] / closes[t, i]
                                         for i in range(closes.shape[1]))
            want *= growth
        worst = max(worst, abs(got - want) / want)
    criterion(2, "frictionless reduction to the return product", worst < 1e-12,
              f"100 scenarios, max rel err {worst:.2e} (< 1e-12)")


def gradient_instance(seed, mode, utility):
    rng = np.random.default_rng(seed)
    cfg = PolicyConfig(mode=mode, hidden_sizes=(4, 4, 4), dropout_rate=0.0, seed=seed)
    params = init_params(cfg, 5, 2)
    params = params.with_arrays({k: v + rng.normal(0, 0.3, v.shape) for k, v in params.arrays.items()})
    closes = rng.uniform(20, 200, size=2) * np.exp(np.cumsum(rng.normal(0, 0.03, size=(7, 2)), axis=0))
    episode = Episode(rng.normal(size=(6, 5)), closes)
    env_cfg = EnvConfig(commission_rate=float(rng.choice([0.0, 0.0001, 0.01])), initial_wealth=10_000.0)
    grad, _ = bptt_gradient(episode, params, TrainConfig(utility=utility), env_cfg, tau=6)
    fd = finite_diff_gradient(episode, params, utility, env_cfg=env_cfg)
    g = np.concatenate([v.ravel() for v in grad.values()])
    f = np.concatenate([v.ravel() for v in fd.values()])
    keep = np.abs(f) > 1e-8
    return float(np.max(np.abs(g[keep] - f[keep]) / np.abs(f[keep]))) if keep.any() else 0.0


def test_criterion_3_gradient_vs_finite_differences():
    tic = time.perf_counter()
    errors = [gradient_instance(seed, mode, utility)
              for seed in range(13) for mode in ("weight", "share") for utility in ("log", "sharpe")]
    elapsed = time.perf_counter() - tic
    worst = max(errors)
    criterion(3, "BPTT gradient vs central finite differences", worst < 1e-4 and elapsed < 60.0,
              f"{len(errors)} instances (both heads, both utilities), max rel err {worst:.2e} (< 1e-4), "
              f"{elapsed:.1f} s (< 60 s)")


def test_criterion_4_learnability():
    tic = time.perf_counter()
    hist = synthetic.drift_market(days=400, drifts=(0.002, -0.002))
    feats = build_features(hist)
    split = feats.calendar[int(0.7 * len(feats.calendar))]
    train_f = feats.between(None, split)
    train_h = hist.between(None, split)
    env_cfg = EnvConfig(commission_rate=0.0)
    cfg = TrainConfig(epochs=200, episode_length=60, batch_size=64, optimizer="adam", seed=0)
    params, _ = train(train_f, train_h, cfg, env_cfg, PolicyConfig(seed=0))

    test_f = feats.between(split + np.timedelta64(1, "D"), None)
    test_h = hist.between(test_f.calendar[0], None)
    actions, _ = forward_sequence(test_f.values[:-1], params)
    allocation = float(actions[:, 1].mean())
    agent = env.utility(env.run_episode(env_cfg, actions, test_h.close).returns, "log")
    equal = np.tile([0.0, 0.5, 0.5], (len(actions), 1))
    baseline = env.utility(env.run_episode(env_cfg, equal, test_h.close).returns, "log")
    elapsed = time.perf_counter() - tic
    ok = allocation > 0.9 and agent > baseline and elapsed < 120.0
    criterion(4, "learnability on the drift market", ok,
              f"allocation to the rising stock {allocation:.4f} (> 0.9) after 200 epochs, "
              f"test log return {agent:.4f} vs equal weight {baseline:.4f}, {elapsed:.1f} s (< 120 s)")


def test_criterion_5_constraints():
    rng = np.random.default_rng(5)
    worst_sum, min_weight = 0.0, np.inf
    share_lo, share_hi = np.inf, -np.inf
    passes = 0
    for draw in range(100):
        for mode in ("weight", "share"):
            cfg = PolicyConfig(mode=mode, head=("sigmoid", "softmax")[draw % 2], hidden_sizes=(32, 32, 16),
                               dropout_rate=0.0, seed=draw)
            params = init_params(cfg, 10, 4)
            scale = 10.0 ** rng.uniform(-1, 2)
            params = params.with_arrays({k: v * scale if k.startswith("out") else v
                                         for k, v in params.arrays.items()})
            f = rng.normal(0, 10.0 ** rng.uniform(-1, 2), size=(5000, 10))
            prev = np.abs(rng.normal(size=(5000, params.action_dim)))
            if mode == "weight":
                prev /= prev.sum(axis=1, keepdims=True)
            else:
                prev *= 50
            out, _ = forward(f, prev, params)
            passes += len(out)
            if mode == "weight":
                worst_sum = max(worst_sum, float(np.max(np.abs(out.sum(axis=1) - 1.0))))
                min_weight = min(min_weight, float(out.min()))
            else:
                share_lo, share_hi = min(share_lo, float(out.min())), max(share_hi, float(out.max()))
    ok = worst_sum <= 1e-9 and min_weight >= 0.0 and share_lo >= 0.0 and share_hi <= 100.0
    criterion(5, "action constraints", ok,
              f"{passes:,} forward passes; weight head max |sum-1| {worst_sum:.1e}, min weight "
              f"{min_weight:.1e}; share head range [{share_lo:.3g}, {share_hi:.3g}]")


def test_criterion_6_selection():
    rng = np.random.default_rng(6)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        scores = rng.integers(-5, 6, size=n).astype(float)  # plenty of ties
        k = int(rng.integers(0, n + 1))
        mismatches += top_k_mask(scores, k).selected.tolist() != sort_top_k(scores.tolist(), k)

    n, k = 100, 20
    latent = rng.normal(size=n)
    basket = top_k_mask(latent, k)
    worst = 0
    for _ in range(500):
        latent = 0.7 * latent + 0.7 * rng.normal(size=n)
        nxt = turnover_constrained_basket(latent, basket, k, 0.5)
        worst = max(worst, len(set(nxt.selected) - set(basket.selected)))
        basket = nxt
    criterion(6, "top-k selection and turnover cap", mismatches == 0 and worst <= 10,
              f"{mismatches} mismatches vs sort oracle on 1000 tied vectors; "
              f"max daily replacements {worst} (<= 10) over 500 days")


def test_criterion_7_regime_leverage():
    segments = [(260, 0.003), (260, -0.003), (200, 0.003), (200, -0.003)]
    agree = 0
    rows = []
    for seed in range(10):
        hist = synthetic.regime_market(segments, vol=0.01, seed=seed)
        feats = build_features(hist)
        cal = hist.calendar

        def segment(a, b):
            return feats.between(cal[a], cal[b]), hist.between(cal[a], cal[b])

        cfg = TrainConfig(epochs=60, episode_length=40, batch_size=32, optimizer="adam", seed=seed)
        bull, _ = train(*segment(60, 259), cfg, EnvConfig(), PolicyConfig(seed=seed))
        crash, _ = train(*segment(260, 519), cfg, EnvConfig(), PolicyConfig(seed=seed))
        held_out, _ = segment(720, 919)
        lev_bull = 1 - forward_sequence(held_out.values, bull)[0][:, 0].mean()
        lev_crash = 1 - forward_sequence(held_out.values, crash)[0][:, 0].mean()
        agree += lev_crash < lev_bull
        rows.append(f"{lev_crash:.2f}<{lev_bull:.2f}")
    criterion(7, "crash-trained policy holds less leverage in a held-out crash", agree >= 8,
              f"{agree}/10 seeds agree (>= 8); crash<bull leverage per seed: {', '.join(rows)}")


def test_criterion_8_pipeline_determinism(tmp_path):
    hist = synthetic.random_pool(6, 300, seed=8)
    synthetic.write_csv(hist, tmp_path / "market.csv")
    (tmp_path / "run.cfg").write_text(
        "data.csv = market.csv\nseed = 3\npolicy.hidden_sizes = 16, 16, 8\n"
        "train.epochs = 10\ntrain.batch_size = 16\ntrain.episode_length = 30\n"
        "train.end = 2007-09-28\ntest.start = 2007-10-01\nbacktest.baseline = S000\n"
        "selection.enabled = true\nselection.basket_size = 3\nselection.mode = turnover\n"
        "selection.iterations = 4\nselection.hidden = 8\n"
    )
    outputs = []
    for run in ("first", "second"):
        out = tmp_path / run
        for cmd in ("ingest", "train", "backtest", "report"):
            code = main([cmd, "--config", str(tmp_path / "run.cfg"), "--output-dir", str(out)])
            assert code == 0, f"{cmd} exited {code}"
        outputs.append({p.relative_to(out).as_posix(): p.read_bytes()
                        for p in sorted(out.rglob("*")) if p.is_file()})
    same = outputs[0] == outputs[1]
    criterion(8, "byte-identical pipeline outputs", same,
              f"{len(outputs[0])} files compared across two runs with root seed 3")
