"""Command-line entry point: ``outfitrec <subcommand> [options]``.

Every subcommand accepts ``--config FILE``, repeated ``--set key=value``
overrides and ``--seed N``. Exit status is 0 on success, 1 on usage or
configuration errors and 2 on data errors (bad or missing files).
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .dataio import (DataError, data_dir, generate_synthetic, kcore_filter, load_dataset,
                     read_split, split_dataset, write_dataset, write_split)
from .eval import (EvaluationError, build_fitb_queries, evaluate_topk, fitb_accuracy,
                   read_fitb_queries, write_fitb_queries)
from .graph import GraphError, category_stats_rows
from .model import ModelConfig, entity_counts
from .training import CheckpointError, Experiment, load_checkpoint, save_checkpoint, train

logger = logging.getLogger("outfitrec")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _common(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config entry, e.g. train.epochs=10")
    p.add_argument("--seed", type=int, help="master seed (overrides the config file)")
    p.add_argument("-v", "--verbose", action="store_true")


def _data_args(p, split=True):
    p.add_argument("--data", help="dataset directory (default: $OUTFITREC_DATA or ./data)")
    if split:
        p.add_argument("--split-dir", help="directory holding train/val/test.tsv "
                                           "(default: split the data with the config)")


def build_parser():
    parser = _Parser(prog="outfitrec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    p = sub.add_parser("gen-synth", help="write a synthetic dataset with planted styles")
    _common(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("filter", help="k-core filter users and outfits")
    _common(p)
    _data_args(p, split=False)
    p.add_argument("--out", required=True)
    p.add_argument("--min-user", type=int, default=20)
    p.add_argument("--min-outfit", type=int, default=10)

    p = sub.add_parser("split", help="per-user train/val/test split")
    _common(p)
    _data_args(p, split=False)
    p.add_argument("--out", required=True)

    p = sub.add_parser("graph-stats", help="category co-occurrence statistics")
    _common(p)
    _data_args(p)
    p.add_argument("--top", type=int, default=5)

    p = sub.add_parser("train", help="train and write a checkpoint")
    _common(p)
    _data_args(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--history", help="per-epoch log (tab-separated)")

    p = sub.add_parser("eval", help="Top-K metrics of a checkpoint")
    _common(p)
    _data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--on", choices=("test", "val"), default="test")
    p.add_argument("--metrics", help="write key=value metrics here")

    p = sub.add_parser("fitb", help="Fill-in-the-Blank accuracy on held-out outfits")
    _common(p)
    _data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--category-matched", action="store_true",
                   help="draw distractors from the masked item's category")
    p.add_argument("--export", help="write the generated queries here")
    p.add_argument("--queries", help="read queries from this file instead of generating")

    p = sub.add_parser("inspect-checkpoint", help="print a checkpoint header")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    return parser


def _config(args):
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return cfgmod.load_config(args.config, overrides)


def _splits(args, dataset, cfg):
    if getattr(args, "split_dir", None):
        parts = read_split(args.split_dir)
        if parts is None:
            raise DataError(f"{args.split_dir}: missing train/val/test.tsv")
        return parts
    return split_dataset(dataset, cfg.split_spec())


def _experiment(args, cfg):
    dataset = load_dataset(data_dir(args.data))
    return Experiment.from_dataset(dataset, *_splits(args, dataset, cfg))


def _model_config(cfg, experiment):
    # the encoder input width always follows the data
    return cfg.model_config(feature_dim=experiment.features.shape[1])


def _load_model(args, experiment):
    path = Path(args.checkpoint)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    ck = load_checkpoint(path)
    mc = ModelConfig(**ck.config)
    counts = entity_counts(experiment.index)
    load_checkpoint(path, mc, counts)
    return experiment.model(mc, ck.params)


def cmd_gen_synth(args, cfg):
    spec = cfg.synthetic_spec()
    write_dataset(generate_synthetic(spec), args.out)
    print(f"wrote {args.out}: {spec.n_users} users, {spec.n_outfits} outfits, "
          f"{spec.n_items} items")


def cmd_filter(args, cfg):
    ds = kcore_filter(load_dataset(data_dir(args.data)), args.min_user, args.min_outfit)
    write_dataset(ds, args.out)
    print(f"kept {len({u for u, _ in ds.interactions})} users, {len(ds.outfits)} outfits, "
          f"{len(ds.interactions)} interactions, {len(ds.item_category)} items")


def cmd_split(args, cfg):
    ds = load_dataset(data_dir(args.data))
    train_, val, test = split_dataset(ds, cfg.split_spec())
    Path(args.out).mkdir(parents=True, exist_ok=True)
    write_split(args.out, train_, val, test)
    print(f"train {len(train_)}\tval {len(val)}\ttest {len(test)}")


def cmd_graph_stats(args, cfg):
    ex = _experiment(args, cfg)
    rows = category_stats_rows(ex.category_graph, list(ex.index.categories), args.top)
    for name, freq, partners in rows:
        cells = [name, str(freq)] + [f"{p}:{w:.6f}" for p, w in partners]
        print("\t".join(cells))


def cmd_train(args, cfg):
    extra = {} if args.epochs is None else {"epochs": args.epochs}
    ex = _experiment(args, cfg)
    mc = _model_config(cfg, ex)
    tc = cfg.train_config(**extra)
    counts = entity_counts(ex.index)
    if tc.epochs == 0:
        params, epoch = ex.model(mc).params, 0
    else:
        result = train(ex, mc, tc, history_path=args.history)
        if result.diverged:
            logger.warning("training diverged; saving the last good parameters")
        params, epoch = result.params, result.best_epoch
    save_checkpoint(args.out, params, mc, counts, epoch=epoch, seed=cfg.seed)
    print(f"wrote {args.out} (epoch {epoch})")


def cmd_eval(args, cfg):
    ex = _experiment(args, cfg)
    report = evaluate_topk(_load_model(args, ex), ex, k=args.k, split=args.on)
    print(report.to_text())
    if args.metrics:
        report.write(args.metrics)


def cmd_fitb(args, cfg):
    ex = _experiment(args, cfg)
    model = _load_model(args, ex)
    if not ex.heldout:
        raise DataError("dataset has no held-out outfits (heldout_outfits.tsv)")
    heldout_ids = sorted(load_dataset(data_dir(args.data)).heldout_outfits)
    if args.queries:
        queries = read_fitb_queries(args.queries, {o: k for k, o in enumerate(heldout_ids)},
                                    ex.index.item_pos)
    else:
        rng = np.random.default_rng(cfg.seed + 3)
        queries = build_fitb_queries(ex.heldout, ex.index.item_count, rng, args.count,
                                     ex.index.item_category, args.category_matched,
                                     seed=cfg.seed)
    if args.export:
        write_fitb_queries(args.export, queries, heldout_ids, ex.index.items)
    acc = fitb_accuracy(model.compat_of, ex.heldout, queries)
    print(f"fitb_accuracy={acc:.6f}\tqueries={len(queries)}")


def cmd_inspect_checkpoint(args, cfg):
    path = Path(args.checkpoint)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    ck = load_checkpoint(path)
    print(f"epoch\t{ck.epoch}")
    print(f"seed\t{ck.seed}")
    print("counts\t" + ",".join(str(c) for c in ck.counts))
    for k, v in ck.config.items():
        print(f"config.{k}\t{v}")
    for name, a in ck.params.as_dict().items():
        print(f"{name}\t{'x'.join(str(s) for s in a.shape)}\tnorm={np.linalg.norm(a):.6g}")


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "filter": cmd_filter,
    "split": cmd_split,
    "graph-stats": cmd_graph_stats,
    "train": cmd_train,
    "eval": cmd_eval,
    "fitb": cmd_fitb,
    "inspect-checkpoint": cmd_inspect_checkpoint,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        cfg = _config(args)
    except (UsageError, cfgmod.ConfigFileError) as exc:
        print(exc, file=sys.stderr)
        return 1
    try:
        COMMANDS[args.command](args, cfg)
    except (DataError, GraphError, CheckpointError, EvaluationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # invalid settings that only surface once the data is known
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
