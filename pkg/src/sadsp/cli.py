"""Command line front end.

Subcommands: gen, train, eval, ablate, sweep, analyze. Every run is
driven by one flat key=value configuration: documented defaults, then a
config file, then --set pairs, then named flags, each layer overriding
the one before. The effective configuration is echoed into the output
directory so a run can be reproduced from its artifacts alone.

Exit codes: 0 ok, 1 usage or bad config, 2 data error (missing or
malformed files, dimension mismatch), 3 training divergence.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

from . import analysis
from .data import (
    Dataset,
    DatasetSpec,
    WorldConfig,
    load_dataset,
    make_synthetic_dataset,
    write_feature_file,
)
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    ParseError,
    SpecError,
    TrainingDivergence,
)
from .evaluate import (
    BranchMask,
    FULL_MASK,
    GammaWeights,
    evaluate,
    gamma_sweep,
    run_ablation_suite,
    write_ablation_table,
    write_eval_summary,
    write_gamma_sweep,
    write_sweep_curve,
)
from .model import ModelParams
from .trainer import REGIMES, TrainConfig, load_checkpoint, save_checkpoint, train, write_train_log

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3


@dataclass(frozen=True)
class Field:
    kind: type
    default: object
    help: str


CONFIG_FIELDS = {
    # dataset geometry
    "num_states": Field(int, 8, "number of state primitives |S|"),
    "num_objects": Field(int, 10, "number of object primitives |O|"),
    "feature_dim": Field(int, 32, "input feature width d"),
    "seed": Field(int, 0, "seed for data generation and training shuffles"),
    # synthetic world
    "proto_dim": Field(int, 16, "latent prototype width"),
    "interaction": Field(float, 2.0, "pair interaction strength"),
    "noise": Field(float, 0.05, "per-feature noise scale"),
    "feasible_frac": Field(float, 0.6, "fraction of pairs that are feasible"),
    "seen_frac": Field(float, 0.4, "fraction of all pairs used for training"),
    "train_per_pair": Field(int, 25, "training samples per seen pair"),
    "test_seen_per_pair": Field(int, 6, "test samples per seen pair"),
    "test_unseen_per_pair": Field(int, 6, "test samples per unseen pair"),
    # model
    "hidden": Field(int, 64, "hidden width of every head"),
    # training
    "epochs": Field(int, 50, "training epochs"),
    "batch_size": Field(int, 2, "minibatch size"),
    "lr_trunk": Field(float, 5.0e-6, "learning rate for the shared trunk"),
    "lr_adversary": Field(float, 1.0e-2, "learning rate for denoisers and discriminators"),
    "lr_other": Field(float, 5.0e-5, "learning rate for the remaining heads"),
    "weight_decay": Field(float, 5.0e-5, "decoupled weight decay"),
    "adversary_steps_per_batch": Field(int, 1, "adversary updates per minibatch"),
    "regime": Field(str, "end_to_end", "end_to_end or fixed_trunk"),
    # inference
    "gamma": Field(str, "0.7,0.25,0.05", "branch weights g1,g2,g3"),
    "disable": Field(str, "", "comma list of branches to drop: pf_s,pf_o,pc_s,pc_o"),
    "grid_points": Field(int, 201, "finite bias points on the calibration sweep"),
    # gamma sweep
    "sweep_g2": Field(str, "", "comma list of g2 values (empty: default grid)"),
    "sweep_g3": Field(str, "", "comma list of g3 values (empty: default grid)"),
    # analysis
    "attention_mode": Field(str, "interleaved", "interleaved or raw_final accumulation"),
    "topk": Field(int, 3, "list length for frequency rankings"),
    # paths
    "data_path": Field(str, "", "feature file to load (empty: synthesize from config)"),
    "checkpoint_path": Field(str, "", "trained checkpoint for eval/ablate/sweep/analyze"),
    "out_dir": Field(str, "run", "directory for all emitted artifacts"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_value(key: str, raw: str):
    field = CONFIG_FIELDS.get(key)
    if field is None:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return field.kind(raw)
    except ValueError:
        raise ConfigError(
            f"config key {key!r} wants {field.kind.__name__}, got {raw!r}") from None


def load_config_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="ascii") as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from None
    values = {}
    for lineno, line in enumerate(lines, 1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, raw = text.partition("=")
        values[key.strip()] = parse_value(key.strip(), raw.strip())
    return values


def effective_config(args) -> dict:
    cfg = {k: f.default for k, f in CONFIG_FIELDS.items()}
    if args.config:
        cfg.update(load_config_file(args.config))
    for pair in args.set or []:
        if "=" not in pair:
            raise ConfigError(f"--set wants key=value, got {pair!r}")
        key, _, raw = pair.partition("=")
        cfg[key] = parse_value(key, raw)
    for flag, key in (("seed", "seed"), ("out", "out_dir"),
                      ("data", "data_path"), ("checkpoint", "checkpoint_path"),
                      ("gamma", "gamma"), ("disable", "disable"),
                      ("regime", "regime")):
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = value
    return cfg


def write_config_echo(path: str, cfg: dict) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for key in sorted(cfg):
            fh.write(f"{key}={cfg[key]}\n")


# ------------------------------------------------------------- assembly


def _prepare_out(cfg: dict) -> str:
    out = cfg["out_dir"]
    os.makedirs(out, exist_ok=True)
    write_config_echo(os.path.join(out, "effective.cfg"), cfg)
    return out


def _synthetic_dataset(cfg: dict) -> Dataset:
    spec = DatasetSpec(num_states=cfg["num_states"], num_objects=cfg["num_objects"],
                       feature_dim=cfg["feature_dim"], rng_seed=cfg["seed"])
    world = WorldConfig(
        proto_dim=cfg["proto_dim"], interaction=cfg["interaction"],
        noise=cfg["noise"], feasible_frac=cfg["feasible_frac"],
        seen_frac=cfg["seen_frac"], train_per_pair=cfg["train_per_pair"],
        test_seen_per_pair=cfg["test_seen_per_pair"],
        test_unseen_per_pair=cfg["test_unseen_per_pair"])
    return make_synthetic_dataset(spec, world)


def _dataset(cfg: dict) -> Dataset:
    if cfg["data_path"]:
        return load_dataset(cfg["data_path"])
    return _synthetic_dataset(cfg)


def _train_config(cfg: dict) -> TrainConfig:
    tc = TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch_size"], seed=cfg["seed"],
        lr_trunk=cfg["lr_trunk"], lr_adversary=cfg["lr_adversary"],
        lr_other=cfg["lr_other"], weight_decay=cfg["weight_decay"],
        adversary_steps_per_batch=cfg["adversary_steps_per_batch"],
        regime=cfg["regime"])
    try:
        tc.validate()
    except ContractError as e:
        raise ConfigError(str(e)) from None
    return tc


def _gamma(cfg: dict) -> GammaWeights:
    try:
        return GammaWeights.parse(cfg["gamma"])
    except (ContractError, ValueError) as e:
        raise ConfigError(f"bad gamma {cfg['gamma']!r}: {e}") from None


def _mask(cfg: dict) -> BranchMask:
    tokens = [t.strip() for t in cfg["disable"].split(",") if t.strip()]
    try:
        return FULL_MASK.disable(*tokens)
    except ContractError as e:
        raise ConfigError(str(e)) from None


def _load_params(cfg: dict, dataset: Dataset) -> ModelParams:
    path = cfg["checkpoint_path"]
    if not path:
        raise ConfigError("this command needs checkpoint_path (or --checkpoint)")
    params = load_checkpoint(path)
    spec = dataset.spec
    if (params.num_states, params.num_objects, params.feature_dim) != (
            spec.num_states, spec.num_objects, spec.feature_dim):
        raise CheckpointError(
            f"checkpoint dims (|S|={params.num_states}, |O|={params.num_objects}, "
            f"d={params.feature_dim}) disagree with dataset "
            f"(|S|={spec.num_states}, |O|={spec.num_objects}, d={spec.feature_dim})")
    return params


def _float_list(cfg: dict, key: str):
    raw = cfg[key].strip()
    if not raw:
        return None
    try:
        return [float(v) for v in raw.split(",")]
    except ValueError:
        raise ConfigError(f"config key {key!r} wants comma-separated floats, "
                          f"got {cfg[key]!r}") from None


# -------------------------------------------------------------- commands


def cmd_gen(cfg: dict) -> int:
    ds = _synthetic_dataset(cfg)
    out = _prepare_out(cfg)
    write_feature_file(os.path.join(out, "features.sadspf"), ds.spec, ds.samples)
    seen = sorted(ds.spec.seen_pairs)
    unseen = sorted({(s.state, s.object) for s in ds.test_unseen})
    with open(os.path.join(out, "pairs.txt"), "w", encoding="ascii") as fh:
        fh.write(f"seen_pairs: {len(seen)}\n")
        for s, o in seen:
            fh.write(f"{s},{o}\n")
        fh.write(f"unseen_feasible_pairs: {len(unseen)}\n")
        for s, o in unseen:
            fh.write(f"{s},{o}\n")
    print(f"wrote {len(ds.samples)} samples, {len(seen)} seen / "
          f"{len(unseen)} unseen pairs to {out}")
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    ds = _dataset(cfg)
    tc = _train_config(cfg)
    params = ModelParams.create(ds.spec.num_states, ds.spec.num_objects,
                                ds.spec.feature_dim, hidden=cfg["hidden"],
                                seed=cfg["seed"])
    out = _prepare_out(cfg)
    params, log = train(params, ds, tc)
    save_checkpoint(params, os.path.join(out, "checkpoint.sadspck"))
    write_train_log(os.path.join(out, "train_log.csv"), log)
    if log.entries:
        last = log.entries[-1]
        print(f"trained {tc.epochs} epochs, final generator loss "
              f"{last.generator.l_total:.6f}, checkpoint in {out}")
    else:
        print(f"trained 0 epochs, checkpoint equals initialization, in {out}")
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    ds = _dataset(cfg)
    params = _load_params(cfg, ds)
    summary = evaluate(params, ds, gamma=_gamma(cfg), mask=_mask(cfg),
                       grid_points=cfg["grid_points"])
    out = _prepare_out(cfg)
    write_eval_summary(os.path.join(out, "eval_summary.csv"), summary)
    write_sweep_curve(os.path.join(out, "sweep_curve.csv"), summary)
    pct = summary.percent()
    print(f"S {pct['best_S']:.2f}  U {pct['best_U']:.2f}  "
          f"HM {pct['best_HM']:.2f}  AUC {pct['AUC']:.2f}")
    return EXIT_OK


def cmd_ablate(cfg: dict) -> int:
    ds = _dataset(cfg)
    params = _load_params(cfg, ds)
    rows = run_ablation_suite(params, ds, gamma=_gamma(cfg),
                              grid_points=cfg["grid_points"])
    out = _prepare_out(cfg)
    write_ablation_table(os.path.join(out, "ablation.csv"), rows)
    print(f"wrote {len(rows)} ablation rows to {out}")
    return EXIT_OK


def cmd_sweep(cfg: dict) -> int:
    ds = _dataset(cfg)
    params = _load_params(cfg, ds)
    res = gamma_sweep(params, ds, g2_values=_float_list(cfg, "sweep_g2"),
                      g3_values=_float_list(cfg, "sweep_g3"),
                      mask=_mask(cfg), grid_points=cfg["grid_points"])
    out = _prepare_out(cfg)
    write_gamma_sweep(os.path.join(out, "gamma_sweep.csv"), res)
    if res.best is None:
        print("every grid point was skipped")
    else:
        b = res.best
        print(f"best gamma ({b.g1},{b.g2},{b.g3})  AUC {100.0 * b.auc:.2f}")
    return EXIT_OK


def cmd_analyze(cfg: dict) -> int:
    if cfg["attention_mode"] not in (analysis.INTERLEAVED, analysis.RAW_FINAL):
        raise ConfigError(f"attention_mode must be {analysis.INTERLEAVED} or "
                          f"{analysis.RAW_FINAL}, got {cfg['attention_mode']!r}")
    if cfg["topk"] < 1:
        raise ConfigError(f"topk must be >= 1, got {cfg['topk']}")
    ds = _dataset(cfg)
    params = _load_params(cfg, ds)
    out = _prepare_out(cfg)

    fm = analysis.accumulate_attention(params, ds, mode=cfg["attention_mode"])
    analysis.write_matrix_csv(os.path.join(out, "attention_rows.csv"),
                              fm.view(analysis.ROW_NORM))
    analysis.write_matrix_csv(os.path.join(out, "attention_cols.csv"),
                              fm.view(analysis.COL_NORM))
    analysis.write_matrix_csv(os.path.join(out, "attention_raw.csv"),
                              fm.view(analysis.RAW))
    analysis.write_matrix_csv(os.path.join(out, "heatmap.csv"),
                              analysis.min_max_rows(fm.view(analysis.ROW_NORM)))

    ft = analysis.build_frequency_table(params, ds)
    analysis.write_frequency_csv(os.path.join(out, "frequency.csv"), ft)
    with open(os.path.join(out, "topk.csv"), "w", encoding="ascii") as fh:
        fh.write("kind,index,direction,space,rank,state,object,count,truncated\n")
        jobs = [("state", i) for i in range(ds.spec.num_states)]
        jobs += [("object", j) for j in range(ds.spec.num_objects)]
        for kind, index in jobs:
            for direction in ("top", "bottom"):
                for space in ("open_world", "unseen_only"):
                    r = analysis.topk_feasible(
                        ft, kind, index, k=cfg["topk"], direction=direction,
                        space=space, seen_pairs=ds.spec.seen_pairs)
                    for rank, ((s, o), count) in enumerate(r.pairs, 1):
                        fh.write(f"{kind},{index},{direction},{space},{rank},"
                                 f"{s},{o},{count},{int(r.truncated)}\n")

    rep = analysis.prototype_report(params, ds)
    analysis.write_prototype_report(os.path.join(out, "prototypes.csv"),
                                    os.path.join(out, "prototypes.txt"), rep)
    probes = analysis.probe_accuracies(params, ds.train)
    with open(os.path.join(out, "probes.csv"), "w", encoding="ascii") as fh:
        fh.write("probe,accuracy\n")
        for name in sorted(probes):
            fh.write(f"{name},{probes[name]!r}\n")
    print(f"wrote attention, frequency, prototype, and probe reports to {out}")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "analyze": cmd_analyze,
}


def build_parser() -> _Parser:
    parser = _Parser(prog="sadsp", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="override the seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--data", help="feature file path")
        p.add_argument("--checkpoint", help="checkpoint path")
        p.add_argument("--gamma", help='branch weights, e.g. "0.7,0.25,0.05"')
        p.add_argument("--disable", help='branches to drop, e.g. "pf_s,pc_o"')
        p.add_argument("--regime", choices=list(REGIMES))
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config key (repeatable)")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = effective_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergence as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (SpecError, ParseError, CheckpointError, ContractError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
