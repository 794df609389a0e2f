"""``rdnn`` command line: ingest, train, backtest, report.

Exit codes: 0 success, 1 bad configuration or usage, 2 data errors,
3 training errors, 4 backtest errors, 5 report errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import pandas as pd

from . import env as envmod
from ._io import atomic_write
from .backtest import BacktestReport, backtest, write_overlay, write_series
from .config import RunConfig
from .data import FeatureMatrix, PriceHistory, build_features, load_ohlcv
from .errors import ConfigError, DataError, InsufficientData, RDNNError, ShapeMismatch
from .policy import WEIGHT_MODE, PolicyParameters
from .selection import MaskParameters, joint_forward, train_mask
from .training import train

log = logging.getLogger("rdnn")

EXIT_CONFIG, EXIT_DATA, EXIT_TRAIN, EXIT_BACKTEST, EXIT_REPORT = 1, 2, 3, 4, 5

PRICES = "prices.csv"
FEATURES = "features.csv"
CHECKPOINT = "checkpoint.json"
TRAIN_REPORT = "train_report.json"
MASK = "mask.json"
BACKTEST_REPORT = "backtest_report.json"
BACKTEST_SERIES = "backtest_series.csv"
BASKET_TRACE = "basket_trace.csv"
REPORT_DIR = "report"

FLAG_KEYS = {
    "seed": "seed",
    "epochs": "train.epochs",
    "tau": "train.tau",
    "lr": "train.learning_rate",
    "batch_size": "train.batch_size",
    "pool": "selection.pool",
    "basket_size": "selection.basket_size",
    "turnover_cap": "selection.turnover_cap",
}


def _csv_text(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format="%.17g")


def _json_text(doc) -> str:
    return json.dumps(doc, indent=1) + "\n"


def load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config)
    overrides: list = list(args.set or [])
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append((key, value))
    if getattr(args, "pool", None) is not None:
        overrides.append(("selection.enabled", "true"))
    if getattr(args, "turnover_cap", None) is not None:
        overrides.append(("selection.mode", "turnover"))
    if getattr(args, "output_dir", None) is not None:
        # relative to the working directory, unlike paths inside the file
        overrides.append(("output.dir", str(Path(args.output_dir).resolve())))
    return cfg.with_overrides(overrides)


# --- artifacts -------------------------------------------------------------

def load_market(cfg: RunConfig) -> tuple[PriceHistory, FeatureMatrix]:
    out = cfg.output_dir
    prices, features = out / PRICES, out / FEATURES
    if not prices.exists() or not features.exists():
        raise InsufficientData(f"no ingested data in {out}; run `rdnn ingest` first")
    history = load_ohlcv(prices)
    feats = FeatureMatrix.from_csv(features)
    pool = cfg.get_list("selection.pool")
    if cfg.selection_enabled and pool:
        missing = [t for t in pool if t not in history.assets]
        if missing:
            raise InsufficientData(f"pool tickers not in the ingested data: {', '.join(missing)}")
        history, feats = history.select_assets(pool), feats.select_assets(pool)
    return history, feats


def _check_selection(cfg: RunConfig, params: PolicyParameters) -> None:
    if cfg.selection_enabled and params.config.mode != WEIGHT_MODE:
        raise ConfigError("stock selection requires policy.mode = weight")


def _selection_kwargs(cfg: RunConfig) -> dict:
    return {"k": cfg.get_int("selection.basket_size"), "mode": cfg.get_str("selection.mode"),
            "turnover_cap": cfg.get_float("selection.turnover_cap")}


# --- commands --------------------------------------------------------------

def cmd_ingest(cfg: RunConfig, args) -> int:
    csv = cfg.get_path("data.csv")
    if csv is None:
        raise ConfigError("data.csv must be set")
    history = load_ohlcv(csv)
    tickers = cfg.get_list("data.tickers")
    if tickers:
        missing = [t for t in tickers if t not in history.assets]
        if missing:
            raise DataError(f"tickers not in {csv.name}: {', '.join(missing)}")
        history = history.select_assets(tickers)
    features = build_features(history, cfg.indicator_config())
    out = cfg.output_dir
    atomic_write(out / PRICES, _csv_text(history.to_frame()))
    atomic_write(out / FEATURES, _csv_text(features.to_frame()))
    print(f"ingested {history.num_assets} assets over {history.num_days} days "
          f"({len(features.calendar)} feature days, {features.dim} features) into {out}")
    return 0


def _train_slices(cfg: RunConfig, history: PriceHistory, feats: FeatureMatrix):
    lo, hi = cfg.train_range
    f = feats.between(lo, hi)
    if len(f.calendar) == 0:
        raise InsufficientData(f"no feature days in the training range {lo}..{hi}")
    return history.between(None, f.calendar[-1]), f


def cmd_train(cfg: RunConfig, args) -> int:
    history, feats = load_market(cfg)
    hist, f = _train_slices(cfg, history, feats)
    tcfg, env_cfg, pcfg = cfg.train_config(), cfg.env_config(), cfg.policy_config()
    if cfg.selection_enabled and pcfg.mode != WEIGHT_MODE:
        raise ConfigError("stock selection requires policy.mode = weight")
    params, report = train(f, hist, tcfg, env_cfg, pcfg)
    out = cfg.output_dir
    atomic_write(out / CHECKPOINT, _json_text(params.to_dict()))
    atomic_write(out / TRAIN_REPORT, _json_text(report.to_dict()))
    if report.utility:
        print(f"trained {tcfg.epochs} epochs on {len(f.calendar)} days: "
              f"utility {report.utility[0]:.6g} -> {report.utility[-1]:.6g}")
    else:
        print("epochs = 0: wrote the initial parameters")

    if cfg.selection_enabled:
        kw = _selection_kwargs(cfg)
        closes = hist.close[-len(f.calendar):]
        pool = f.per_asset()[:-1]

        def objective(mp: MaskParameters) -> float:
            sel = joint_forward(pool, mp, params, **kw)
            res = envmod.run_episode(env_cfg, sel.weights, closes)
            return envmod.utility(res.returns, tcfg.utility)

        mask0 = MaskParameters.init(len(f.channels), cfg.get_int("selection.hidden"), cfg.mask_seed)
        mask, trace = train_mask(mask0, objective, cfg.get_int("selection.iterations"),
                                 cfg.get_float("selection.step"), cfg.get_float("selection.perturbation"),
                                 cfg.mask_seed)
        atomic_write(out / MASK, _json_text({"schema_version": 1, "trace": trace, **mask.to_dict()}))
        print(f"selection scorer: utility {trace[0]:.6g} -> {trace[-1]:.6g}")
    return 0


def cmd_backtest(cfg: RunConfig, args) -> int:
    history, feats = load_market(cfg)
    out = cfg.output_dir
    if not (out / CHECKPOINT).exists():
        raise ConfigError(f"no checkpoint in {out}; run `rdnn train` first")
    params = PolicyParameters.load(out / CHECKPOINT)
    _check_selection(cfg, params)
    if params.feature_dim != feats.dim or params.num_stocks != len(feats.assets):
        raise ShapeMismatch(f"checkpoint expects {params.feature_dim} features over {params.num_stocks} "
                            f"stocks, data has {feats.dim} over {len(feats.assets)}")
    mask = None
    extra = {}
    if cfg.selection_enabled:
        if not (out / MASK).exists():
            raise ConfigError(f"selection is enabled but {out / MASK} is missing")
        mask = MaskParameters.from_dict(json.loads((out / MASK).read_text()))
        kw = _selection_kwargs(cfg)
        extra = {"basket_size": kw["k"], "selection_mode": kw["mode"], "turnover_cap": kw["turnover_cap"]}
    lo, hi = cfg.test_range
    report = backtest(params, feats, history, cfg.env_config(), cfg.get_str("backtest.baseline", optional=True),
                      lo, hi, mask, **extra)
    report.write_json(out / BACKTEST_REPORT)
    atomic_write(out / BACKTEST_SERIES, _csv_text(report.frame()))
    if mask is not None:
        trace = pd.DataFrame(report.baskets, columns=["date", "ticker", "selected", "score"])
        atomic_write(out / BASKET_TRACE, _csv_text(trace))
    s = report.summary
    line = (f"backtest {report.dates[0]}..{report.dates[-1]}: final wealth {s['final_wealth']:.2f}, "
            f"total return {s['total_return']:.4%}, max drawdown {s['max_drawdown']:.4%}")
    if "outperformance" in s:
        line += f", vs {report.baseline_ticker} {s['outperformance']:+.2f}"
    print(line)
    return 0


def cmd_report(cfg: RunConfig, args) -> int:
    paths = [Path(p) for p in args.reports] if args.reports else [cfg.output_dir / BACKTEST_REPORT]
    reports = [BacktestReport.read_json(p) for p in paths]
    target = Path(args.out) if args.out else cfg.output_dir / REPORT_DIR
    if len(reports) == 1:
        written = write_series(reports[0], target)
    else:
        labels = args.labels.split(",") if args.labels else None
        if labels is not None and len(labels) != len(reports):
            raise ConfigError(f"{len(labels)} labels for {len(reports)} reports")
        written = write_overlay(reports, target, labels)
    print("wrote " + ", ".join(str(p) for p in written))
    return 0


COMMANDS = {
    "ingest": (cmd_ingest, EXIT_DATA),
    "train": (cmd_train, EXIT_TRAIN),
    "backtest": (cmd_backtest, EXIT_BACKTEST),
    "report": (cmd_report, EXIT_REPORT),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    common.add_argument("--output-dir", help="override output.dir")
    common.add_argument("--seed", type=int, help="root seed")
    common.add_argument("--epochs", type=int)
    common.add_argument("--tau", type=int, help="truncation depth")
    common.add_argument("--lr", type=float, help="learning rate")
    common.add_argument("--batch-size", type=int)
    common.add_argument("--pool", help="comma-separated pool tickers; enables selection")
    common.add_argument("--basket-size", type=int)
    common.add_argument("--turnover-cap", type=float, help="daily basket turnover cap; enables turnover mode")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="rdnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="validate a CSV and build features")
    sub.add_parser("train", parents=[common], help="train the policy on the training range")
    sub.add_parser("backtest", parents=[common], help="run the frozen policy over the test range")
    rep = sub.add_parser("report", parents=[common], help="write plot-ready CSV series")
    rep.add_argument("--reports", nargs="+", help="backtest report JSON files (default: the run's own)")
    rep.add_argument("--labels", help="comma-separated column suffixes for an overlay")
    rep.add_argument("--out", help="directory for the CSV files")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func, failure = COMMANDS[args.command]
    try:
        cfg = load_config(args)
        return func(cfg, args)
    except ConfigError as exc:
        print(f"ConfigError: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DATA
    except (RDNNError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"{type(exc).__name__}: {msg}", file=sys.stderr)
        return failure


if __name__ == "__main__":
    sys.exit(main())
