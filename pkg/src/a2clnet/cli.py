"""Command-line entry point: ``a2clnet <command> [options]``.

Exit codes: 0 success, 1 configuration/usage error, 2 data error,
3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

import numpy as np

from . import dataio, metrics, plots, pso
from . import model as M
from .errors import A2CLNetError, ConfigurationError, DataError, InputError
from .tensor import Rng, tune_allocator
from .training import HyperParams, head_activation_for, loss, predict, train

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger("a2clnet")

PSO = "pso"
SYNTHETIC = "synthetic"
DEFAULT_SYNTHETIC_DAYS = 60
HP_FLAGS = {"lr": "learning_rate", "batch_size": "batch_size", "epochs": "epochs",
            "init": "init_scheme", "loss": "loss_metric"}
COMPARE_VARIANTS = ["A2CLNet", "PSO-A2CLNet", "HybridCNNLSTM", "VanillaCNN", "VanillaLSTM", "persistence"]


@dataclass
class RunConfig:
    seed: Optional[int] = None
    data: str = SYNTHETIC
    schema: str = "ts=timestamp,load=load"
    synthetic_days: int = DEFAULT_SYNTHETIC_DAYS
    architecture: M.ArchitectureConfig = field(default_factory=M.ArchitectureConfig)
    hyperparams: Dict[str, Any] = field(default_factory=dict)
    pso_mode: bool = False
    swarm: pso.SwarmConfig = field(default_factory=pso.SwarmConfig)
    out_dir: str = "."
    epoch_budget: Optional[int] = None

    def hp(self) -> HyperParams:
        return HyperParams(**self.hyperparams)

    def require_seed(self):
        if self.seed is None:
            raise ConfigurationError("a seed is mandatory: pass --seed or set [run] seed in the config")
        return self.seed


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="TOML config file; flags override its values")
    p.add_argument("--seed", type=int, help="master seed (mandatory for commands that draw randomness)")
    p.add_argument("--out-dir", help="directory for all outputs (created if missing)")
    p.add_argument("--epoch-budget", type=int, help="cap on training epochs (desk-scale runs)")
    p.add_argument("--data", help=f"CSV path or '{SYNTHETIC}'")
    p.add_argument("--schema", help="column mapping, e.g. ts=timestamp,load=load[,feat=temp]")
    p.add_argument("--days", type=int, help="length of the synthetic series")
    p.add_argument("-v", "--verbose", action="store_true")


def _hp_flags(p: argparse.ArgumentParser):
    p.add_argument("--hyperparams", choices=["explicit", PSO], help="'pso' searches them first")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--init", help="Xavier, He or Random")
    p.add_argument("--loss", help="MSE, CrossEntropy or MAPE")
    p.add_argument("--swarm-size", type=int)
    p.add_argument("--iterations", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="a2clnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth-data", help="write a synthetic hourly load CSV")
    _common(p)
    p.add_argument("--noise", type=float, help="noise standard deviation (kW·h)")

    p = sub.add_parser("pso-search", help="search hyperparameters with particle swarm optimization")
    _common(p)
    _hp_flags(p)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _common(p)
    _hp_flags(p)

    p = sub.add_parser("evaluate", help="score a checkpoint on one split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])

    p = sub.add_parser("forecast", help="predict the step after a recent window")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--window", required=True, help="CSV with at least lookback recent rows")

    p = sub.add_parser("compare", help="train every variant and tabulate test metrics")
    _common(p)
    _hp_flags(p)
    return parser


# --------------------------------------------------------------------------
# Configuration


def _read_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config {path}: {exc}") from None


def _section(doc, name) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigurationError(f"config section [{name}] must be a table")
    return dict(sec)


def load_run_config(args) -> RunConfig:
    doc = _read_toml(args.config) if getattr(args, "config", None) else {}
    unknown = set(doc) - {"run", "data", "architecture", "hyperparams", "swarm"}
    if unknown:
        raise ConfigurationError(f"unknown config sections {sorted(unknown)}")
    cfg = RunConfig()
    run, data = _section(doc, "run"), _section(doc, "data")
    cfg.seed = run.pop("seed", None)
    cfg.out_dir = run.pop("out_dir", cfg.out_dir)
    cfg.epoch_budget = run.pop("epoch_budget", None)
    if run:
        raise ConfigurationError(f"unknown [run] keys {sorted(run)}")
    cfg.data = data.pop("path", cfg.data)
    cfg.schema = data.pop("schema", cfg.schema)
    cfg.synthetic_days = data.pop("days", cfg.synthetic_days)
    if data:
        raise ConfigurationError(f"unknown [data] keys {sorted(data)}")
    cfg.architecture = M.ArchitectureConfig.from_dict(_section(doc, "architecture"))
    hp = _section(doc, "hyperparams")
    mode = hp.pop("mode", "explicit")
    cfg.swarm = pso.SwarmConfig.from_dict(_section(doc, "swarm"))

    # flags win over the file
    for flag, attr in (("seed", "seed"), ("out_dir", "out_dir"), ("epoch_budget", "epoch_budget"),
                       ("data", "data"), ("schema", "schema"), ("days", "synthetic_days")):
        v = getattr(args, flag, None)
        if v is not None:
            setattr(cfg, attr, v)
    if getattr(args, "hyperparams", None):
        mode = args.hyperparams
    if mode not in ("explicit", PSO):
        raise ConfigurationError(f"hyperparams mode must be 'explicit' or '{PSO}', got {mode!r}")
    explicit = {attr: getattr(args, flag) for flag, attr in HP_FLAGS.items() if getattr(args, flag, None) is not None}
    cfg.pso_mode = mode == PSO
    if cfg.pso_mode and (explicit or hp):
        raise ConfigurationError(
            f"hyperparameters {sorted({**hp, **explicit})} given together with pso mode; choose one")
    unknown = set(hp) - set(HP_FLAGS.values())
    if unknown:
        raise ConfigurationError(f"unknown [hyperparams] keys {sorted(unknown)}")
    cfg.hyperparams = {**hp, **explicit}
    if getattr(args, "swarm_size", None) is not None:
        cfg.swarm.swarm_size = args.swarm_size
    if getattr(args, "iterations", None) is not None:
        cfg.swarm.max_iterations = args.iterations
    if cfg.epoch_budget is not None and cfg.epoch_budget < 1:
        raise ConfigurationError("epoch budget must be >= 1")
    if cfg.seed is not None and not 0 <= int(cfg.seed) < 2**64:
        raise ConfigurationError("seed must be a 64-bit unsigned integer")
    return cfg


# --------------------------------------------------------------------------
# Helpers


def _out(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


def _write(path: str, text: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def load_series(cfg: RunConfig) -> dataio.LoadSeries:
    if cfg.data == SYNTHETIC:
        return dataio.synthetic_load(cfg.synthetic_days, cfg.require_seed())
    return dataio.ingest_csv(cfg.data, cfg.schema)


def load_dataset(cfg: RunConfig, stats=None) -> dataio.WindowedDataset:
    series = load_series(cfg)
    arch = cfg.architecture
    if len(series.feature_names) != arch.input_features:
        raise ConfigurationError(
            f"architecture expects {arch.input_features} input feature(s), data has {series.feature_names}")
    return dataio.window(series, arch.lookback_window, stats=stats)


def _train_model(variant, arch, hp: HyperParams, dataset, seed: int, epoch_budget):
    rng = Rng(seed)
    cfg = M.ArchitectureConfig.from_dict({**arch.to_dict(), "variant": M.Variant.parse(variant)})
    model = M.build(cfg, hp.init_scheme, rng.child(0), head_activation_for(hp.loss_metric))
    report = train(model, dataset, hp, rng.child(1), epoch_budget=epoch_budget)
    return model, report


def _search(cfg: RunConfig, dataset):
    seed = cfg.require_seed()
    swarm = pso.SwarmConfig.from_dict({**cfg.swarm.to_dict(), "seed": seed})
    fitness = pso.HyperparameterFitness(dataset, cfg.architecture, cfg.epoch_budget, seed)
    return pso.optimize(pso.hyperparameter_space(), fitness, swarm)


def _write_search(cfg: RunConfig, history: pso.SearchHistory):
    _write(_out(cfg, "pso_history.csv"), history.to_csv())
    _write(_out(cfg, "pso_summary.json"), history.to_json())
    _write(_out(cfg, "best_hyperparams.json"), _dump(history.best.to_dict()))
    _write(_out(cfg, "pso_convergence.svg"),
           plots.line_chart({"gbest": history.gbest}, "PSO convergence", "iteration", "validation MSE"))


def _metrics_for(model, dataset, split) -> metrics.EvalReport:
    X, _ = dataset.split(split)
    yhat = dataset.stats.denormalize_load(predict(model, X))
    return metrics.EvalReport.compute(dataset.denormalized_targets(split), yhat)


# --------------------------------------------------------------------------
# Commands


def cmd_synth_data(cfg: RunConfig, args) -> int:
    params = dataio.SyntheticParams()
    if args.noise is not None:
        params = dataio.SyntheticParams(**{**params.__dict__, "noise_sd": args.noise})
    series = dataio.synthetic_load(cfg.synthetic_days, cfg.require_seed(), params)
    path = _out(cfg, "synthetic.csv")
    dataio.write_csv(series, path)
    print(path)
    return 0


def cmd_pso_search(cfg: RunConfig, args) -> int:
    dataset = load_dataset(cfg)
    best, history = _search(cfg, dataset)
    _write_search(cfg, history)
    print(_dump({"best": best.to_dict(), "best_fitness": history.best_fitness}), end="")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    seed = cfg.require_seed()
    dataset = load_dataset(cfg)
    if cfg.pso_mode:
        hp, history = _search(cfg, dataset)
        _write_search(cfg, history)
    else:
        hp = cfg.hp()
    model, report = _train_model(cfg.architecture.variant, cfg.architecture, hp, dataset, seed, cfg.epoch_budget)
    M.save_checkpoint(model, _out(cfg, "checkpoint.json"))
    _write(_out(cfg, "train_report.json"), report.to_json())
    _write(_out(cfg, "loss_curve.csv"), report.to_csv())
    _write(_out(cfg, "loss_curve.svg"),
           plots.line_chart({"train": report.train_loss, "validation (MSE)": report.val_loss},
                            "Training curve", "epoch", "loss", log_y=True))
    print(_dump({"checkpoint": _out(cfg, "checkpoint.json"), "final_train_loss": report.final_train_loss,
                 "epochs": report.epochs_run, "seconds": round(report.seconds, 3)}), end="")
    return 0


def _load_checkpoint(path):
    if not os.path.exists(path):
        raise DataError(f"checkpoint {path} does not exist")
    return M.load_checkpoint(path)


def _stats_of(model) -> dataio.NormStats:
    if not model.normalization:
        raise DataError("checkpoint carries no normalization statistics")
    return dataio.NormStats.from_dict(model.normalization)


def cmd_evaluate(cfg: RunConfig, args) -> int:
    model = _load_checkpoint(args.checkpoint)
    cfg.architecture = model.config
    dataset = load_dataset(cfg, stats=_stats_of(model))
    X, y = dataset.split(args.split)
    if len(X) < 2:
        raise DataError(f"split {args.split!r} has {len(X)} windows; need at least 2")
    report = _metrics_for(model, dataset, args.split)
    _write(_out(cfg, "eval_report.json"), report.to_json())
    _write(_out(cfg, "eval_report.csv"), report.to_csv())
    # the checkpoint's own training loss on this split, comparable with the TrainReport
    hp = HyperParams.from_dict(model.hyperparams or {}, checked=False)
    pred = predict(model, X)
    if hp.loss_metric.value == "MAPE":
        value = loss(dataset.stats.denormalize_load(pred), dataset.stats.denormalize_load(y), "MAPE")[0]
    else:
        value = loss(pred, y, hp.loss_metric)[0]
    _write(_out(cfg, "eval_loss.json"), _dump({"split": args.split, "metric": hp.loss_metric.value, "value": value}))
    print(report.to_json(), end="")
    return 0


def cmd_forecast(cfg: RunConfig, args) -> int:
    model = _load_checkpoint(args.checkpoint)
    stats = _stats_of(model)
    lookback = model.config.lookback_window
    series = dataio.ingest_csv(args.window, cfg.schema)
    if len(series) < lookback:
        raise InputError(f"forecast window has {len(series)} rows; the model needs lookback={lookback}")
    if series.feature_names != list(stats.names):
        raise ConfigurationError(f"window columns {series.feature_names} do not match the checkpoint's {stats.names}")
    window = stats.apply(series.matrix()[-lookback:])
    yhat_norm = model.forward(window)
    step = int(series.timestamps[-1] - series.timestamps[-2]) if len(series) > 1 else 3600
    target_ts = int(series.timestamps[-1]) + step
    result = {
        "prediction_kwh": float(stats.denormalize_load(yhat_norm)),
        "prediction_normalized": float(yhat_norm),
        "target_timestamp": datetime.fromtimestamp(target_ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
        "normalization_version": stats.version,
        "normalization": stats.to_dict(),
    }
    _write(_out(cfg, "forecast.json"), _dump(result))
    print(_dump(result), end="")
    return 0


def cmd_compare(cfg: RunConfig, args) -> int:
    seed = cfg.require_seed()
    dataset = load_dataset(cfg)
    y_test = dataset.denormalized_targets("test")
    hp = cfg.hp()
    rows: List[dict] = []
    for name in COMPARE_VARIANTS:
        if name == "persistence":
            rep = metrics.EvalReport.compute(y_test, dataset.persistence("test"))
            used = None
        elif name == "PSO-A2CLNet":
            best, history = _search(cfg, dataset)
            _write_search(cfg, history)
            model, _ = _train_model("A2CLNet", cfg.architecture, best, dataset, seed, cfg.epoch_budget)
            rep, used = _metrics_for(model, dataset, "test"), best.to_dict()
        else:
            model, _ = _train_model(name, cfg.architecture, hp, dataset, seed, cfg.epoch_budget)
            rep, used = _metrics_for(model, dataset, "test"), hp.to_dict()
        rows.append({"model": name, **rep.to_dict(), "hyperparams": used})
        log.info("%s: %s", name, rep.to_dict())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "R2", "MAPE", "MAE"])
    for r in rows:
        w.writerow([r["model"], repr(r["r2"]), repr(r["mape_percent"]), repr(r["mae"])])
    _write(_out(cfg, "compare.csv"), buf.getvalue())
    _write(_out(cfg, "compare.json"), _dump({"seed": seed, "epoch_budget": cfg.epoch_budget, "rows": rows}))
    _write(_out(cfg, "compare_mape.svg"),
           plots.bar_chart([r["model"] for r in rows], [r["mape_percent"] for r in rows],
                           "Test MAPE by model", "MAPE (%)"))
    print(buf.getvalue(), end="")
    return 0


COMMANDS = {
    "synth-data": cmd_synth_data,
    "pso-search": cmd_pso_search,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "forecast": cmd_forecast,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_run_config(args)
        tune_allocator()
        return COMMANDS[args.command](cfg, args)
    except A2CLNetError as exc:
        print(f"a2clnet: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"a2clnet: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort mapping onto the exit code contract
        print(f"a2clnet: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
