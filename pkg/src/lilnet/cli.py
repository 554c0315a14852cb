"""Command-line entry point: ``lilnet {gen-data,train,attack,report}``.

Exit codes: 0 success, 2 validation or config error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import sys
import time
from dataclasses import asdict
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import FGSM, PGD, LossContext, log_sweep, robust_accuracy_sweep
from .datasets import (
    LabeledDataset,
    gen_entangled_rings,
    gen_torus,
    load_mnist_dir,
    read_dataset_csv,
    subsample,
    write_dataset_csv,
)
from .linalg import make_rng
from .metrics import accuracy, distance_histograms, isometry_report
from .network import NetworkConfig, init_network, load_checkpoint, save_checkpoint, stacked_forward
from .trainer import NumericalError, TrainConfig, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


# experiment config -------------------------------------------------------

DATASET_KEYS = {
    "rings": {"kind", "n_per_ring", "noise_variance", "seed", "test_fraction"},
    "torus": {"kind", "n", "R", "r", "noise_variance", "seed", "test_fraction"},
    "mnist": {"kind", "dir", "train_subsample", "test_subsample", "seed"},
    "csv": {"kind", "path"},
}
NETWORK_KEYS = {"hidden", "num_classes_per_level", "levels"}
TRAIN_KEYS = set(TrainConfig.__dataclass_fields__)
ATTACK_KEYS = {"kind", "sweep", "ball", "steps", "loss", "limit", "batch_size", "clip"}
TOP_KEYS = {"name", "dataset", "network", "train", "attack", "beta_sweep"}

DATASET_DEFAULTS = {
    "rings": {"n_per_ring": 400, "noise_variance": 1e-4, "seed": 0, "test_fraction": 0.2},
    "torus": {"n": 1600, "R": 2.0, "r": 1.0, "noise_variance": 0.001, "seed": 0, "test_fraction": 0.2},
    "mnist": {"dir": "data/mnist", "train_subsample": None, "test_subsample": None, "seed": 0},
    "csv": {},
}
ATTACK_DEFAULTS = {"kind": FGSM, "sweep": [0.01, 1.0, 20], "ball": 0.5, "steps": 10, "loss": "combined",
                   "limit": None, "batch_size": 100, "clip": None}


def _reject_unknown(section: str, got: dict, allowed: set) -> None:
    extra = sorted(set(got) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(extra)}")


def validate_config(raw: dict) -> dict:
    """Fill defaults and check every section; returns a new, fully explicit config."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _reject_unknown("config", raw, TOP_KEYS)
    cfg = copy.deepcopy(raw)
    ds = cfg.get("dataset")
    if not isinstance(ds, dict) or ds.get("kind") not in DATASET_KEYS:
        raise ConfigError(f"dataset.kind must be one of {sorted(DATASET_KEYS)}")
    _reject_unknown("dataset", ds, DATASET_KEYS[ds["kind"]])
    cfg["dataset"] = {"kind": ds["kind"], **DATASET_DEFAULTS[ds["kind"]], **ds}
    if ds["kind"] == "csv" and "path" not in ds:
        raise ConfigError("dataset.path is required for kind 'csv'")

    net = cfg.setdefault("network", {})
    _reject_unknown("network", net, NETWORK_KEYS)
    net.setdefault("hidden", [20, 20, 20, 20])
    if not net["hidden"] or any(int(w) < 1 for w in net["hidden"]):
        raise ConfigError("network.hidden needs at least one positive width")

    tr = cfg.setdefault("train", {})
    _reject_unknown("train", tr, TRAIN_KEYS)
    try:
        cfg["train"] = asdict(TrainConfig(**tr))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from exc

    at = cfg.setdefault("attack", {})
    _reject_unknown("attack", at, ATTACK_KEYS)
    cfg["attack"] = {**ATTACK_DEFAULTS, **at}
    if cfg["attack"]["kind"] not in (FGSM, PGD) or cfg["attack"]["loss"] not in ("combined", "cse"):
        raise ConfigError("attack.kind must be fgsm|pgd and attack.loss combined|cse")

    sweep = cfg.get("beta_sweep")
    if sweep is not None and (not isinstance(sweep, list) or any(float(b) < 0 for b in sweep)):
        raise ConfigError("beta_sweep must be a list of non-negative numbers")
    return cfg


def load_config(source: str) -> dict:
    """Read a config file, or a bundled preset by name (``rings``, ``torus-stacked``, ``mnist-sweep``)."""
    path = Path(source)
    if path.is_file():
        text = path.read_text()
    else:
        preset = resources.files("lilnet") / "presets" / f"{source.removesuffix('.json')}.json"
        if not preset.is_file():
            raise ConfigError(f"no config file or preset named {source!r}")
        text = preset.read_text()
    try:
        return validate_config(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: invalid JSON: {exc}") from exc


def build_datasets(ds_cfg: dict) -> tuple[LabeledDataset, LabeledDataset]:
    """``(train, test)`` splits for a validated dataset section."""
    kind = ds_cfg["kind"]
    if kind == "rings":
        full = gen_entangled_rings(int(ds_cfg["n_per_ring"]), float(ds_cfg["noise_variance"]),
                                   make_rng(int(ds_cfg["seed"])), float(ds_cfg["test_fraction"]))
    elif kind == "torus":
        full = gen_torus(int(ds_cfg["n"]), float(ds_cfg["R"]), float(ds_cfg["r"]),
                         float(ds_cfg["noise_variance"]), make_rng(int(ds_cfg["seed"])),
                         float(ds_cfg["test_fraction"]))
    elif kind == "csv":
        full = read_dataset_csv(ds_cfg["path"])
    else:
        rng = make_rng(int(ds_cfg["seed"]))
        tr = load_mnist_dir(ds_cfg["dir"], "train")
        te = load_mnist_dir(ds_cfg["dir"], "test")
        if ds_cfg["train_subsample"]:
            tr = subsample(tr, int(ds_cfg["train_subsample"]), rng)
        if ds_cfg["test_subsample"]:
            te = subsample(te, int(ds_cfg["test_subsample"]), rng)
        return tr, te
    return full.select_split("train"), full.select_split("test")


def run_training(cfg: dict):
    """Build data and network from a validated config and train; returns ``(net, report, train, test)``."""
    train_ds, test_ds = build_datasets(cfg["dataset"])
    tcfg = TrainConfig(**cfg["train"])
    net_cfg = cfg["network"]
    n_levels = train_ds.n_levels
    classes = net_cfg.get("num_classes_per_level") or [
        max(train_ds.num_classes(k), test_ds.num_classes(k) if len(test_ds) else 0) for k in range(n_levels)
    ]
    levels = net_cfg.get("levels") or tcfg.hierarchy_plan or [0]
    ncfg = NetworkConfig([train_ds.points.shape[1], *net_cfg["hidden"]], classes, levels)
    rng = make_rng(tcfg.seed)
    net = init_network(ncfg, rng)
    report = train(net, train_ds, tcfg, rng)
    return net, report, train_ds, test_ds


# data helpers ------------------------------------------------------------

def load_data_arg(path: str, split: str) -> LabeledDataset:
    p = Path(path)
    if p.is_dir():
        if split == "all":
            a, b = load_mnist_dir(p, "train"), load_mnist_dir(p, "test")
            return LabeledDataset(np.vstack([a.points, b.points]), [np.concatenate([a.labels[0], b.labels[0]])],
                                  np.concatenate([a.split, b.split]), kind="mnist")
        return load_mnist_dir(p, split)
    return read_dataset_csv(p).select_split(split)


def _require(path: str, what: str) -> None:
    if not Path(path).exists():
        raise ConfigError(f"{what} not found: {path}")


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_csv(path, header: list[str], rows, comments: list[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[h]) for h in header])


def _sidecar(out: Path, **extra) -> None:
    meta = {"written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "lilnet_version": __version__, **extra}
    Path(str(out) + ".meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


# commands ----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    rng = make_rng(args.seed)
    if args.kind == "rings":
        ds = gen_entangled_rings(args.n if args.n is not None else 400,
                                 args.noise if args.noise is not None else 1e-4, rng)
    else:
        ds = gen_torus(args.n if args.n is not None else 1600, args.R, args.r,
                       args.noise if args.noise is not None else 0.001, rng)
    write_dataset_csv(ds, args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.beta is not None:
        cfg["train"]["beta"] = args.beta
    if args.epochs is not None:
        cfg["train"]["epochs"] = args.epochs
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
    if args.data is not None:
        key = "dir" if cfg["dataset"]["kind"] == "mnist" else "path"
        if key == "path":
            cfg["dataset"] = {"kind": "csv", "path": args.data}
        else:
            cfg["dataset"]["dir"] = args.data
    cfg = validate_config(cfg)
    if cfg["dataset"]["kind"] == "mnist":
        _require(cfg["dataset"]["dir"], "MNIST directory")
    elif cfg["dataset"]["kind"] == "csv":
        _require(cfg["dataset"]["path"], "dataset file")

    net, report, train_ds, test_ds = run_training(cfg)
    test_acc = {lvl: accuracy(net, test_ds, lvl) for lvl in net.levels} if len(test_ds) else {}
    out = Path(args.out)
    stem = str(out.with_suffix(""))
    meta = {
        "dataset_kind": cfg["dataset"]["kind"],
        "clip": [0.0, 1.0] if cfg["dataset"]["kind"] == "mnist" else None,
        "alpha": cfg["train"]["alpha"],
        "beta": cfg["train"]["beta"],
        "global_isometry": cfg["train"]["global_isometry"],
        "train_accuracy": {str(k): v for k, v in report.final_accuracy.items()},
        "test_accuracy": {str(k): v for k, v in test_acc.items()},
    }
    save_checkpoint(out, net, config=cfg, seed=cfg["train"]["seed"], metadata=meta)
    Path(stem + ".report.json").write_text(json.dumps(report.to_dict(), sort_keys=True) + "\n")
    report.write_loss_csv(stem + ".losses.csv")
    if cfg["dataset"]["kind"] in ("rings", "torus"):
        full = LabeledDataset(np.vstack([train_ds.points, test_ds.points]),
                              [np.concatenate([a, b]) for a, b in zip(train_ds.labels, test_ds.labels)],
                              np.concatenate([train_ds.split, test_ds.split]))
        write_dataset_csv(full, stem + ".data.csv")
    _sidecar(out, wall_time_seconds=report.wall_time)
    for lvl in net.levels:
        line = f"level {lvl}: train accuracy {report.final_accuracy[lvl]:.4f}"
        if lvl in test_acc:
            line += f", test accuracy {test_acc[lvl]:.4f}"
        print(line)
    return EXIT_OK


def _loss_context(doc: dict, level: int, mode: str) -> LossContext:
    meta = doc.get("metadata", {})
    return LossContext(alpha=float(meta.get("alpha", 1.0)), beta=float(meta.get("beta", 0.0)), level=level,
                       mode=mode, global_isometry=bool(meta.get("global_isometry", False)))


def cmd_attack(args) -> int:
    _require(args.model, "model")
    _require(args.data, "data")
    net, doc = load_checkpoint(args.model)
    ds = load_data_arg(args.data, args.split)
    if args.limit is not None:
        ds = ds.subset(np.arange(min(args.limit, len(ds))))
    if len(ds) == 0:
        raise ConfigError("no samples to attack")
    level = net.levels[-1] if args.level is None else args.level
    ctx = _loss_context(doc, level, args.loss)
    if args.eps:
        eps = [float(e) for e in args.eps]
    else:
        lo, hi, n = args.sweep
        eps = log_sweep(float(lo), float(hi), int(n))
    clip = args.clip or doc.get("metadata", {}).get("clip") or [-math.inf, math.inf]
    table = robust_accuracy_sweep(net, ds, args.kind, eps, ctx, args.ball, args.steps, clip[0], clip[1],
                                  args.batch_size)
    comments = [f"attack={args.kind} loss={args.loss} level={level} clip={clip[0]},{clip[1]}"]
    if args.kind == PGD:
        comments.append(f"ball={args.ball} steps={args.steps}")
    rows = [{"beta": ctx.beta, "attack": args.kind, "epsilon": e, "robust_accuracy": a, "n_samples": len(ds)}
            for e, a in table]
    _write_csv(args.out, ["beta", "attack", "epsilon", "robust_accuracy", "n_samples"], rows, comments)
    _sidecar(Path(args.out))
    return EXIT_OK


def cmd_report(args) -> int:
    _require(args.model, "model")
    _require(args.data, "data")
    net, _ = load_checkpoint(args.model)
    ds = load_data_arg(args.data, args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traces = stacked_forward(net, ds.points)
    acc_rows, iso_rows, hist_rows = [], [], []
    for k, lvl in enumerate(net.levels):
        if lvl >= ds.n_levels:
            continue
        acc_rows.append({"level": lvl, "block": k, "accuracy": accuracy(net, ds, lvl), "n_samples": len(ds)})
        phi = ds.points if args.identity else traces[k].phi
        rep = isometry_report(ds.points, phi, ds.labels[lvl])
        for w in rep.warnings:
            print(f"warning: level {lvl}: {w}", file=sys.stderr)
        iso_rows += [{"level": lvl, "block": k, **r} for r in rep.rows()]
        hist_rows += [{"level": lvl, "block": k, **r}
                      for r in distance_histograms(ds.points, phi, ds.labels[lvl], args.bins)]
    _write_csv(out / "accuracy.csv", ["level", "block", "accuracy", "n_samples"], acc_rows)
    _write_csv(out / "isometry.csv",
               ["level", "block", "class", "pearson_r", "mean_abs_residual", "empirical_K", "n_pairs"], iso_rows)
    _write_csv(out / "histograms.csv", ["level", "block", "class", "space", "bin_lo", "bin_hi", "count"], hist_rows)
    _sidecar(out / "report", model=str(args.model), data=str(args.data), split=args.split)
    return EXIT_OK


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _nonneg_float(s: str) -> float:
    v = float(s)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {s}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lilnet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a toy dataset as CSV")
    g.add_argument("--kind", choices=["rings", "torus"], required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=_positive_int, help="points per ring (rings) or total points (torus)")
    g.add_argument("--noise", type=_nonneg_float, help="per-coordinate noise variance")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--R", type=float, default=2.0, help="torus major radius")
    g.add_argument("--r", type=float, default=1.0, help="torus minor radius")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a network from a config file or preset")
    t.add_argument("--config", required=True, help="JSON config path or preset name")
    t.add_argument("--beta", type=_nonneg_float)
    t.add_argument("--epochs", type=_positive_int)
    t.add_argument("--seed", type=int)
    t.add_argument("--data", help="dataset CSV (toy) or MNIST directory, overriding the config")
    t.add_argument("--out", required=True, help="checkpoint path, e.g. MODEL.json")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", help="robust accuracy under an FGSM or PGD sweep")
    a.add_argument("--model", required=True)
    a.add_argument("--data", required=True, help="dataset CSV or MNIST directory")
    a.add_argument("--kind", choices=[FGSM, PGD], required=True)
    a.add_argument("--sweep", nargs=3, metavar=("LO", "HI", "N"), default=["0.01", "1", "20"],
                   help="log-spaced step sizes")
    a.add_argument("--eps", nargs="+", type=_nonneg_float, help="explicit step sizes instead of --sweep")
    a.add_argument("--ball", type=_nonneg_float, default=0.5)
    a.add_argument("--steps", type=int, default=10)
    a.add_argument("--loss", choices=["combined", "cse"], default="combined")
    a.add_argument("--split", choices=["train", "test", "all"], default="test")
    a.add_argument("--limit", type=_positive_int, help="attack only the first N samples")
    a.add_argument("--level", type=int)
    a.add_argument("--batch-size", type=_positive_int, default=100)
    a.add_argument("--clip", nargs=2, type=float, metavar=("LO", "HI"))
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_attack)

    r = sub.add_parser("report", help="accuracy, isometry summary and distance histograms")
    r.add_argument("--model", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--split", choices=["train", "test", "all"], default="all")
    r.add_argument("--bins", type=_positive_int, default=30)
    r.add_argument("--identity", action="store_true", help="diagnostic: use the inputs as the representation")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
