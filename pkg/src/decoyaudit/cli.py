"""Command-line interface for the full audit pipeline.

Subcommands: decoy, train, finetune, audit, compare, eval. The data
directory may be given once via the DECOYAUDIT_DATA_DIR environment
variable instead of --data on every call.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import audit as audit_mod
from . import dataset as ds
from .configio import model_config_from, read_kv_file, train_config_from
from .model import CheckpointError, accuracy, load_checkpoint, save_checkpoint
from .training import combined_loss, finetune, train

DATA_DIR_ENV = "DECOYAUDIT_DATA_DIR"


def _data_dir(args) -> Path:
    path = args.data or os.environ.get(DATA_DIR_ENV)
    if not path:
        raise ValueError(f"no data directory: pass --data or set {DATA_DIR_ENV}")
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"data directory not found: {path}")
    return path


def _load_train_split(data_dir: Path) -> ds.DatasetSplit:
    return ds.load_idx(data_dir / ds.TRAIN_IMAGES, data_dir / ds.TRAIN_LABELS)


def _load_test_split(data_dir: Path) -> ds.DatasetSplit:
    return ds.load_idx(data_dir / ds.TEST_IMAGES, data_dir / ds.TEST_LABELS)


def _configs(args):
    kv = read_kv_file(args.config) if args.config else {}
    mcfg = model_config_from(kv, filters=getattr(args, "filters", None),
                             dropout_rate=getattr(args, "dropout_rate", None))
    tcfg = train_config_from(
        kv,
        epochs=getattr(args, "epochs", None),
        batch_size=getattr(args, "batch_size", None),
        lr0=getattr(args, "lr0", None),
        lr_decay=getattr(args, "lr_decay", None),
        l2=getattr(args, "l2", None),
        explanation_weight=getattr(args, "explanation_weight", None),
        seed=getattr(args, "seed", None),
    )
    return mcfg, tcfg


def _train_meta(params, split, mcfg, tcfg, explanation_weight: float) -> dict:
    sample = min(len(split), 2048)
    final_loss = combined_loss(
        params, split.images[:sample], split.labels[:sample],
        masks=None if split.masks is None else split.masks[:sample],
        l2=tcfg.l2, explanation_weight=explanation_weight,
    )
    return {
        "filters": mcfg.filters, "dropout_rate": mcfg.dropout_rate,
        "classes": mcfg.classes, "epochs": tcfg.epochs,
        "batch_size": tcfg.batch_size, "lr0": tcfg.lr0, "lr_decay": tcfg.lr_decay,
        "l2": tcfg.l2, "explanation_weight": explanation_weight,
        "seed": tcfg.seed, "final_combined_loss": f"{final_loss:.6f}",
        "train_examples": len(split),
    }


def cmd_decoy(args) -> int:
    spec = ds.read_decoy_spec(args.spec) if args.spec else ds.DecoySpec()
    train_split = ds.load_idx(args.train_images, args.train_labels)
    test_split = ds.load_idx(args.test_images, args.test_labels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_decoyed = ds.inject_decoys(train_split, spec)
    test_decoyed = ds.inject_decoys(test_split, spec)
    ds.save_idx(train_decoyed, out / ds.TRAIN_IMAGES, out / ds.TRAIN_LABELS)
    ds.save_idx(test_decoyed, out / ds.TEST_IMAGES, out / ds.TEST_LABELS)
    ds.save_masks_idx(train_decoyed.masks, out / ds.TRAIN_MASKS)
    ds.save_masks_idx(test_decoyed.masks, out / ds.TEST_MASKS)
    ds.write_decoy_spec(spec, out / ds.DECOY_SPEC_FILE)
    print(f"decoyed {len(train_decoyed)} train / {len(test_decoyed)} test examples -> {out}")
    return 0


def cmd_train(args) -> int:
    mcfg, tcfg = _configs(args)
    split = _load_train_split(_data_dir(args))
    if args.limit:
        split = split.subset(np.arange(min(args.limit, len(split))))
    params = train(split, mcfg, tcfg)
    meta = _train_meta(params, split, mcfg, tcfg, explanation_weight=0.0)
    save_checkpoint(params, args.out_checkpoint, meta)
    print(f"trained {tcfg.epochs} epochs on {len(split)} examples -> {args.out_checkpoint}")
    return 0


def cmd_finetune(args) -> int:
    mcfg, tcfg = _configs(args)
    data_dir = _data_dir(args)
    split = _load_train_split(data_dir)
    masks_path = Path(args.masks) if args.masks else data_dir / ds.TRAIN_MASKS
    masks = ds.load_masks_idx(masks_path)
    if masks.shape[0] != len(split):
        raise ValueError(f"{masks_path}: {masks.shape[0]} masks for {len(split)} examples")
    split = ds.DatasetSplit(split.images, split.labels, masks)
    if args.limit:
        split = split.subset(np.arange(min(args.limit, len(split))))
    params0, meta0 = load_checkpoint(args.checkpoint)
    if "dropout_rate" in meta0 and args.dropout_rate is None:
        mcfg = model_config_from({}, filters=params0.filters,
                                 dropout_rate=float(meta0["dropout_rate"]))
    params = finetune(params0, split, mcfg, tcfg)
    meta = _train_meta(params, split, mcfg, tcfg, tcfg.explanation_weight)
    meta["finetuned_from"] = Path(args.checkpoint).name
    save_checkpoint(params, args.out_checkpoint, meta)
    print(f"fine-tuned {tcfg.epochs} epochs on {len(split)} examples -> {args.out_checkpoint}")
    return 0


def cmd_audit(args) -> int:
    params, meta = load_checkpoint(args.checkpoint)
    dropout_rate = args.dropout_rate
    if dropout_rate is None:
        dropout_rate = float(meta.get("dropout_rate", 0.5))
    split = _load_test_split(_data_dir(args))
    report = audit_mod.run_audit(
        params, split,
        source_class=args.source_class, target_class=args.target_class,
        n_targets=args.n_targets, passes=args.mc_passes, seed=args.seed,
        dropout_rate=dropout_rate, n_sources=args.n_sources, n_plots=args.n_plots,
        model_id=audit_mod.checkpoint_model_id(args.checkpoint),
        checkpoint=Path(args.checkpoint).name,
        keep_per_target=args.appendix,
    )
    written = audit_mod.emit_report(report, args.out, appendix=args.appendix)
    print(f"consensus_cell = {report.consensus_cell}")
    print(f"mean_abs_change = {report.metrics.mean_abs_change:.4f}")
    print(f"mean_max_drop = {report.metrics.mean_max_drop:.4f}")
    print(f"wrote {len(written)} files -> {args.out}")
    return 0


def _summary_path(arg: str) -> Path:
    path = Path(arg)
    return path / audit_mod.SUMMARY_FILE if path.is_dir() else path


def cmd_compare(args) -> int:
    summary_a = audit_mod.read_summary(_summary_path(args.report_a))
    summary_b = audit_mod.read_summary(_summary_path(args.report_b))
    lines = [f"report_a = {args.report_a}", f"report_b = {args.report_b}"]
    lines += audit_mod.compare_summaries(summary_a, summary_b)
    out = Path(args.out)
    if out.suffix != ".txt":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "compare.txt"
    out.write_text("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    return 0


def cmd_eval(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    split = _load_test_split(_data_dir(args))
    print(f"accuracy = {accuracy(params, split.images, split.labels):.4f}")
    return 0


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key-value config file (flags override it)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr0", type=float)
    p.add_argument("--lr-decay", type=float, dest="lr_decay")
    p.add_argument("--l2", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--filters", type=int)
    p.add_argument("--dropout-rate", type=float, dest="dropout_rate")
    p.add_argument("--limit", type=int, help="train on only the first N examples")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decoyaudit",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decoy", help="inject class-wise decoy patches, write masks")
    p.add_argument("--train-images", required=True)
    p.add_argument("--train-labels", required=True)
    p.add_argument("--test-images", required=True)
    p.add_argument("--test-labels", required=True)
    p.add_argument("--spec", help="decoy spec config (defaults to the built-in table)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decoy)

    p = sub.add_parser("train", help="classification-only training")
    p.add_argument("--data", help=f"decoyed data dir (or ${DATA_DIR_ENV})")
    p.add_argument("--out-checkpoint", required=True, dest="out_checkpoint")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="explanation-penalized fine-tuning")
    p.add_argument("--data", help=f"decoyed data dir (or ${DATA_DIR_ENV})")
    p.add_argument("--masks", help="annotation masks file (default: masks in data dir)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-checkpoint", required=True, dest="out_checkpoint")
    p.add_argument("--explanation-weight", type=float, dest="explanation_weight")
    _add_train_flags(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("audit", help="sweep curves, identify spurious cells, emit report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help=f"decoyed data dir (or ${DATA_DIR_ENV})")
    p.add_argument("--source-class", type=int, default=7, dest="source_class")
    p.add_argument("--target-class", type=int, default=6, dest="target_class")
    p.add_argument("--n-targets", type=int, default=50, dest="n_targets")
    p.add_argument("--mc-passes", type=int, default=100, dest="mc_passes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-sources", type=int, default=20, dest="n_sources")
    p.add_argument("--n-plots", type=int, default=4, dest="n_plots")
    p.add_argument("--dropout-rate", type=float, dest="dropout_rate",
                   help="default: checkpoint metadata, else 0.5")
    p.add_argument("--appendix", action="store_true",
                   help="also write per-target certainties at the identified cells")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("compare", help="before/after metric deltas of two reports")
    p.add_argument("--report-a", required=True, dest="report_a")
    p.add_argument("--report-b", required=True, dest="report_b")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("eval", help="test accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help=f"decoyed data dir (or ${DATA_DIR_ENV})")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, CheckpointError, KeyError) as exc:
        print(f"decoyaudit {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
