"""Command-line entry point: ``sddgat {gen-data,train,eval,experiment,graph-stats}``.

Every command writes into ``--out DIR`` and leaves a ``manifest.json`` there
with the fully resolved configuration. Values come from, in increasing
priority: built-in defaults, a flat ``key = value`` file given by
``--config``, and explicit flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .data import (SplitSpec, Standardizer, SyntheticSpec, generate_synthetic, load_csv, make_split, perturb_dropout,
                   perturb_noise, write_csv)
from .errors import ConfigError, DataIOError, DimensionError, DivergenceError, SddGatError
from .geometry import CoordTransform
from .graph import GraphConfig, build_dual_graph, export_edges_csv, graph_stats
from .losses import LossConfig
from .model import VARIANTS, load_checkpoint, save_checkpoint
from .training import (RunConfig, TrainConfig, evaluate, prepare, run_experiment, run_single, with_threshold)

logger = logging.getLogger("sddgat")

EXIT_OK, EXIT_USAGE = 0, 2
KIND_ALIASES = {"ablation": "ablation", "noise": "noise_sweep", "dropout": "dropout_sweep", "region": "region_holdout"}


def _fractions(text: str) -> tuple:
    try:
        parts = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
    return parts


def _optional_float(text: str):
    return None if text.lower() in ("", "none", "auto") else float(text)


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


_SYN = SyntheticSpec()
_TRAIN = TrainConfig()
_GRAPH = GraphConfig()
_RUN = RunConfig()

# (flag, type, default, help); dest is the flag name with dashes turned into underscores
GEN_OPTIONS = [
    ("--n", int, _SYN.n_nodes, "number of nodes"),
    ("--bearing", float, _SYN.bearing_deg, "plume bearing in degrees, counterclockwise from +lon"),
    ("--len-along", float, _SYN.len_along, "plume length scale along the bearing"),
    ("--len-across", float, _SYN.len_across, "plume length scale across the bearing"),
    ("--noise-sd", float, _SYN.noise_sd, "sd of the Gaussian noise added to dfi"),
    ("--n-regions", int, _SYN.n_regions, "number of Voronoi regions"),
    ("--n-plumes", int, _SYN.n_plumes, "number of plume kernels"),
    ("--seed", int, _SYN.seed, "generator seed"),
]

GRAPH_OPTIONS = [
    ("--epsilon", _optional_float, _GRAPH.epsilon, "spatial radius in standardized units ('auto' picks it from --target-degree)"),
    ("--target-degree", float, _GRAPH.target_degree, "mean spatial degree used when epsilon is auto"),
    ("--sigma", float, _GRAPH.sigma, "spatial kernel bandwidth"),
    ("--lambda-edge", float, _GRAPH.lambda_edge, "feature-disparity penalty in spatial edge weights"),
    ("--delta", float, _GRAPH.delta, "feature kernel bandwidth"),
    ("--k", int, _GRAPH.k, "neighbors per node in the feature graph"),
]

RUN_OPTIONS = [
    ("--task", str, _RUN.task, "regression, classification or dual"),
    ("--variant", str, _RUN.variant, f"model variant: {', '.join(VARIANTS)}"),
    ("--hidden-dim", int, _RUN.hidden_dim, "hidden width of every attention layer"),
    ("--leaky-slope", float, _RUN.leaky_slope, "negative slope of leaky_relu"),
    ("--lambda-smooth", float, _RUN.lambda_smooth, "weight of the spatial smoothness penalty"),
    ("--cls-threshold-dfi", float, _RUN.cls_threshold_dfi, "dfi above this is the positive class"),
    ("--lr", float, _TRAIN.lr, "Adam learning rate"),
    ("--adam-beta1", float, _TRAIN.adam_beta1, "Adam beta1"),
    ("--adam-beta2", float, _TRAIN.adam_beta2, "Adam beta2"),
    ("--adam-eps", float, _TRAIN.adam_eps, "Adam epsilon"),
    ("--max-epochs", int, _TRAIN.max_epochs, "epoch limit"),
    ("--patience", int, _TRAIN.patience, "early-stopping patience in epochs"),
    ("--divergence-threshold", float, _TRAIN.divergence_threshold, "abort when the training loss exceeds this"),
    ("--seed", int, _TRAIN.seed, "seed for initialization and the split"),
    ("--split", str, "random", "random or region_holdout"),
    ("--fractions", _fractions, _RUN.split.fractions, "train,val,test fractions for a random split"),
    ("--holdout-region", int, None, "test region for a region_holdout split"),
    ("--val-fraction", float, _RUN.split.val_fraction, "validation share of the non-test rows (region_holdout)"),
]


class Options:
    """Registry of the configurable options of one subcommand."""

    def __init__(self):
        self.types: dict = {}
        self.defaults: dict = {}

    def add(self, parser, table) -> None:
        for flag, typ, default, help_ in table:
            dest = flag[2:].replace("-", "_")
            self.types[dest] = typ
            self.defaults[dest] = default
            parser.add_argument(flag, dest=dest, type=typ, default=argparse.SUPPRESS,
                                help=f"{help_} (default: {default})")

    def add_switch(self, parser, flag, help_) -> None:
        dest = flag[2:].replace("-", "_")
        self.types[dest] = _bool
        self.defaults[dest] = False
        parser.add_argument(flag, dest=dest, action="store_true", default=argparse.SUPPRESS, help=help_)

    def resolve(self, args: argparse.Namespace) -> dict:
        values = dict(self.defaults)
        if getattr(args, "config", None):
            values.update(self.read_config(args.config))
        values.update({k: v for k, v in vars(args).items() if k in self.types})
        return values

    def read_config(self, path) -> dict:
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise DataIOError(f"cannot read config {path}: {exc}") from None
        out = {}
        for no, raw in enumerate(lines, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{no}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.lstrip("-").replace("-", "_")
            if key not in self.types:
                raise ConfigError(f"{path}:{no}: unknown key {key!r}")
            try:
                out[key] = self.types[key](value)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(f"{path}:{no}: bad value for {key!r}: {exc}") from None
        return out


def run_config_from(v: dict) -> RunConfig:
    graph = GraphConfig(epsilon=v["epsilon"], sigma=v["sigma"], lambda_edge=v["lambda_edge"], delta=v["delta"],
                        k=v["k"], target_degree=v["target_degree"])
    train = TrainConfig(lr=v["lr"], adam_beta1=v["adam_beta1"], adam_beta2=v["adam_beta2"], adam_eps=v["adam_eps"],
                        max_epochs=v["max_epochs"], patience=v["patience"], seed=v["seed"],
                        divergence_threshold=v["divergence_threshold"])
    split = SplitSpec(kind=v["split"], fractions=tuple(v["fractions"]), holdout_region=v["holdout_region"],
                      seed=v["seed"], val_fraction=v["val_fraction"])
    cfg = RunConfig(graph=graph, hidden_dim=v["hidden_dim"], task=v["task"], variant=v["variant"], train=train,
                    lambda_smooth=v["lambda_smooth"], split=split, leaky_slope=v["leaky_slope"],
                    cls_threshold_dfi=v["cls_threshold_dfi"])
    return cfg.validate()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataIOError(f"cannot create output directory {out}: {exc}") from None
    return out


def _write_manifest(out: Path, command: str, config: dict, seed, inputs: dict, outputs: list, started: str) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": inputs,
        "outputs": sorted(outputs),
        "version": __version__,
        "started": started,
        "finished": _now(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- commands


def cmd_gen_data(args, opts: Options) -> int:
    started = _now()
    v = opts.resolve(args)
    spec = SyntheticSpec(n_nodes=v["n"], bearing_deg=v["bearing"], len_along=v["len_along"],
                         len_across=v["len_across"], noise_sd=v["noise_sd"], n_regions=v["n_regions"],
                         seed=v["seed"], n_plumes=v["n_plumes"]).validate()
    table = generate_synthetic(spec)
    out = _out_dir(args.out)
    path = out / args.name
    write_csv(table, path)
    logger.info("wrote %d rows to %s", table.n, path)
    _write_manifest(out, "gen-data", asdict(spec), spec.seed, {}, [args.name], started)
    return EXIT_OK


def _checkpoint_extra(cfg: RunConfig, prep) -> dict:
    return {
        "run_config": cfg.to_dict(),
        "resolved_graph": prep.graph.config.to_dict(),
        "standardizer": prep.table.standardizer.to_dict(),
        "coord_transform": prep.coord_transform.to_dict(),
        "feature_names": list(prep.table.feature_names),
    }


def cmd_train(args, opts: Options) -> int:
    started = _now()
    v = opts.resolve(args)
    cfg = run_config_from(v)
    raw = load_csv(args.data)
    out = _out_dir(args.out)
    try:
        res = run_single(raw, cfg)
    except DivergenceError as exc:
        if exc.log is not None:
            exc.log.write_csv(out / "train_log.csv")
        raise
    resolved = replace(cfg, graph=res.prepared.graph.config)
    save_checkpoint(out / "checkpoint.json", res.model, _checkpoint_extra(resolved, res.prepared))
    res.log.write_csv(out / "train_log.csv")
    (out / "metrics.txt").write_text(res.report.to_text(), encoding="utf-8")
    (out / "metrics.json").write_text(res.report.to_json(), encoding="utf-8")
    outputs = ["checkpoint.json", "train_log.csv", "metrics.txt", "metrics.json"]
    if v["export_edges"]:
        export_edges_csv(res.prepared.graph, out / "edges.csv")
        outputs.append("edges.csv")
    logger.info("trained %d epochs (best %d); test metrics:\n%s", len(res.log), res.log.best_epoch, res.report.to_text())
    _write_manifest(out, "train", resolved.to_dict(), cfg.seed, {"data": str(args.data)}, outputs, started)
    return EXIT_OK


def cmd_eval(args, opts: Options) -> int:
    started = _now()
    v = opts.resolve(args)
    model, extra = load_checkpoint(args.checkpoint)
    if "run_config" not in extra:
        raise ConfigError(f"{args.checkpoint} was not written by 'train' (no run configuration)")
    rc = extra["run_config"]
    raw = with_threshold(load_csv(args.data), rc["cls_threshold_dfi"])
    expected = list(extra["feature_names"])
    if list(raw.feature_names) != expected:
        raise DimensionError(
            f"checkpoint expects {len(expected)} feature columns {expected}, "
            f"found {len(raw.feature_names)} {list(raw.feature_names)} in {args.data}")
    split = make_split(raw, SplitSpec.from_dict(rc["split"]))
    table = Standardizer.from_dict(extra["standardizer"]).apply(raw)
    coords = CoordTransform.from_dict(extra["coord_transform"]).apply(raw.coords)
    graph_cfg = GraphConfig(**extra["resolved_graph"])
    seed = rc["train"]["seed"]
    perturbed = perturb_dropout(perturb_noise(table, v["noise"], seed), v["dropout"], seed)
    graph = build_dual_graph(coords, perturbed.features, graph_cfg)
    loss_cfg = LossConfig(lambda_smooth=rc["lambda_smooth"], task=rc["task"], cls_threshold_dfi=rc["cls_threshold_dfi"])
    report = evaluate(model, perturbed, graph, split.named(v["split"]), loss_cfg)
    out = _out_dir(args.out)
    (out / "metrics.txt").write_text(report.to_text(), encoding="utf-8")
    (out / "metrics.json").write_text(report.to_json(), encoding="utf-8")
    sys.stdout.write(report.to_text())
    config = {"run_config": rc, "split_name": v["split"], "noise": v["noise"], "dropout": v["dropout"]}
    _write_manifest(out, "eval", config, seed, {"checkpoint": str(args.checkpoint), "data": str(args.data)},
                    ["metrics.txt", "metrics.json"], started)
    return EXIT_OK


def cmd_experiment(args, opts: Options) -> int:
    started = _now()
    v = opts.resolve(args)
    cfg = run_config_from(v)
    raw = load_csv(args.data)
    kind = KIND_ALIASES[args.kind]
    report = run_experiment(kind, raw, cfg, include_zero=v["include_zero"])
    out = _out_dir(args.out)
    report.write_csv(out / "report.csv")
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    sys.stdout.write(report.to_text())
    config = dict(cfg.to_dict(), kind=kind, include_zero=v["include_zero"])
    _write_manifest(out, "experiment", config, cfg.seed, {"data": str(args.data)}, ["report.csv", "report.txt"], started)
    return EXIT_OK


def cmd_graph_stats(args, opts: Options) -> int:
    started = _now()
    v = opts.resolve(args)
    cfg = run_config_from(v)
    raw = load_csv(args.data)
    prep = prepare(raw, cfg.split, cfg.graph)
    stats = graph_stats(prep.graph)
    out = _out_dir(args.out)
    text = "".join(f"{k}={stats[k]:.6g}\n" if isinstance(stats[k], float) else f"{k}={stats[k]}\n" for k in stats)
    (out / "graph_stats.txt").write_text(text, encoding="utf-8")
    (out / "graph_stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    outputs = ["graph_stats.txt", "graph_stats.json"]
    if v["export_edges"]:
        export_edges_csv(prep.graph, out / "edges.csv")
        outputs.append("edges.csv")
    sys.stdout.write(text)
    config = {"graph": prep.graph.config.to_dict(), "split": cfg.split.to_dict()}
    _write_manifest(out, "graph-stats", config, cfg.seed, {"data": str(args.data)}, outputs, started)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser():
    parser = argparse.ArgumentParser(prog="sddgat", description="Dual-graph directional GAT for spatial risk data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    registry = {}

    def common(p, data=True):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", help="flat 'key = value' file; explicit flags win")
        if data:
            p.add_argument("--data", required=True, help="dataset CSV")

    p = sub.add_parser("gen-data", help="write a synthetic anisotropic dataset")
    common(p, data=False)
    p.add_argument("--name", default="data.csv", help="file name inside --out (default: data.csv)")
    opts = Options()
    opts.add(p, GEN_OPTIONS)
    registry["gen-data"] = (cmd_gen_data, opts)

    p = sub.add_parser("train", help="train one model and evaluate it on the test split")
    common(p)
    opts = Options()
    opts.add(p, GRAPH_OPTIONS + RUN_OPTIONS)
    opts.add_switch(p, "--export-edges", "also write both edge lists to edges.csv")
    registry["train"] = (cmd_train, opts)

    p = sub.add_parser("eval", help="recompute metrics from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint.json written by train")
    opts = Options()
    opts.add(p, [
        ("--split", str, "test", "split to score: train, val, test or all"),
        ("--noise", float, 0.0, "sd of Gaussian noise added to numeric features first"),
        ("--dropout", float, 0.0, "share of numeric feature entries zeroed first"),
    ])
    registry["eval"] = (cmd_eval, opts)

    p = sub.add_parser("experiment", help="run an ablation, robustness sweep or region holdout")
    common(p)
    p.add_argument("--kind", required=True, choices=sorted(KIND_ALIASES))
    opts = Options()
    opts.add(p, GRAPH_OPTIONS + RUN_OPTIONS)
    opts.add_switch(p, "--include-zero", "add a sigma=0 row to the noise sweep")
    registry["experiment"] = (cmd_experiment, opts)

    p = sub.add_parser("graph-stats", help="build both graphs and report degrees and components")
    common(p)
    opts = Options()
    opts.add(p, GRAPH_OPTIONS + RUN_OPTIONS)
    opts.add_switch(p, "--export-edges", "also write both edge lists to edges.csv")
    registry["graph-stats"] = (cmd_graph_stats, opts)
    return parser, registry


def main(argv=None) -> int:
    parser, registry = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func, opts = registry[args.command]
    try:
        return func(args, opts)
    except SddGatError as exc:
        print(f"sddgat {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"sddgat {args.command}: error: {exc}", file=sys.stderr)
        return DataIOError.exit_code


if __name__ == "__main__":
    sys.exit(main())
