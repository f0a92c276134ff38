"""Command-line entry point: gen-data, train, eval, ablate, grad-check."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import data as datamod
from .config import Config, ConfigError, config_from_dict, load_config
from .data import DataError, build_splits, generate, multi_session_identities, verify_no_leak
from .decision import AblationFlags
from .evaluation import ablation_ladder, eval_matrix, format_ladder
from .gradcheck import module_checks
from .model import TrimodalNet
from .params import CheckpointError, config_hash, load_checkpoint
from .trainer import train


def _split_fractions(cfg: Config) -> tuple[float, float]:
    total = (cfg.data.train_per_identity + cfg.data.val_per_identity
             + cfg.data.test_per_identity)
    return cfg.data.val_per_identity / total, cfg.data.test_per_identity / total


def _load_dataset(data_dir: str, split: str):
    meta = datamod.read_manifest(data_dir)
    return datamod.ingest(data_dir, split, meta), meta


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    dataset = generate(cfg.data)
    vf, tf = _split_fractions(cfg)
    manifest = build_splits(dataset, val_fraction=vf, test_fraction=tf)
    verify_no_leak(dataset, manifest)
    datamod.write_dataset(dataset, manifest, args.out,
                          extra_meta={"config": cfg.to_dict()})
    counts = {s: len(manifest.indices(s)) for s in ("train", "val", "test")}
    print(f"wrote {counts['train']} train / {counts['val']} val / "
          f"{counts['test']} test samples to {args.out}")
    return 0


def _config_for_data(args_config: str | None, meta: dict) -> Config:
    if args_config is not None:
        cfg = load_config(args_config)
    elif "config" in meta:
        cfg = config_from_dict(meta["config"])
    else:
        cfg = load_config(None)
    if cfg.model.num_classes != meta["num_identities"]:
        cfg.model.num_classes = meta["num_identities"]
    return cfg


def cmd_train(args) -> int:
    train_set, meta = _load_dataset(args.data, "train")
    val_set, _ = _load_dataset(args.data, "val")
    cfg = _config_for_data(args.config, meta)
    ablation = AblationFlags.from_names(args.ablate.split(",")) if args.ablate \
        else AblationFlags()
    # splits are already materialized on disk; rebuild a manifest view over
    # the concatenation so the trainer sees one dataset
    combined, manifest = _concat_as_manifest(train_set, val_set)
    model = TrimodalNet(cfg.model, seed=cfg.seed)
    result = train(model, combined, manifest, cfg, out_dir=args.out,
                   ablation=ablation, quiet=args.quiet)
    print(f"best val trimodal top1 {result.best_val_top1:.4f} "
          f"(epoch {result.best_epoch}); checkpoint: {result.checkpoint_path}")
    return 0


def _concat_as_manifest(train_set, val_set):
    combined = datamod.Dataset(
        face=np.concatenate([train_set.face, val_set.face]),
        gesture=np.concatenate([train_set.gesture, val_set.gesture]),
        voice=np.concatenate([train_set.voice, val_set.voice]),
        identity=np.concatenate([train_set.identity, val_set.identity]),
        session=np.concatenate([train_set.session, val_set.session]),
        num_identities=train_set.num_identities, dims=train_set.dims,
    )
    n_train = len(train_set)
    manifest = datamod.SplitManifest(
        train={0: list(range(n_train))},
        val={0: list(range(n_train, len(combined)))},
        test={}, sessions={},
    )
    return combined, manifest


def cmd_eval(args) -> int:
    test_set, meta = _load_dataset(args.data, args.split)
    model, cfg = _model_from_checkpoint(args.checkpoint, meta)
    ablation = AblationFlags.from_names(args.ablate.split(",")) if args.ablate \
        else AblationFlags()
    masks = datamod.ALL_MASKS
    if args.mask:
        masks = (datamod.ModalityMask.from_names(args.mask.split(",")),)
    report = eval_matrix(model, test_set, multi_session_identities(meta),
                         ablation=ablation, masks=masks,
                         config_hash=config_hash(cfg.to_dict()))
    print(report.format_table())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "report.json")
        with open(path, "w") as fh:
            fh.write(report.to_json())
        print(f"report written to {path}")
    return 0


def _model_from_checkpoint(path: str, meta: dict) -> tuple[TrimodalNet, Config]:
    from .params import read_checkpoint

    state, config_json = read_checkpoint(path)
    if config_json is None:
        raise CheckpointError(f"{path} carries no embedded config")
    cfg = config_from_dict(json.loads(config_json))
    if cfg.model.num_classes != meta["num_identities"]:
        raise CheckpointError(
            f"checkpoint was trained for {cfg.model.num_classes} identities, "
            f"dataset has {meta['num_identities']}")
    model = TrimodalNet(cfg.model, seed=cfg.seed)
    model.store.load_state_dict(state)
    return model, cfg


def cmd_ablate(args) -> int:
    train_set, meta = _load_dataset(args.data, "train")
    val_set, _ = _load_dataset(args.data, "val")
    test_set, _ = _load_dataset(args.data, "test")
    cfg = _config_for_data(args.config, meta)
    combined, manifest = _concat_as_manifest(train_set, val_set)
    multi = multi_session_identities(meta)
    chash = config_hash(cfg.to_dict())

    def run_fn(flags: AblationFlags):
        model = TrimodalNet(cfg.model, seed=cfg.seed)
        train(model, combined, manifest, cfg, out_dir=None, ablation=flags,
              quiet=True)
        return eval_matrix(model, test_set, multi, ablation=flags,
                           config_hash=chash)

    rows = ablation_ladder(run_fn, mode=args.mode)
    print(f"ablation ladder (mode={args.mode})")
    print(format_ladder(rows))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "ablation.json")
        with open(path, "w") as fh:
            json.dump({"mode": args.mode,
                       "rows": [{"setting": label, "report": r.to_dict()}
                                for label, r in rows]}, fh, indent=2)
        print(f"table written to {path}")
    return 0


def cmd_grad_check(args) -> int:
    results = module_checks(args.module, seeds=args.seeds)
    worst = 0.0
    ok = True
    for label, res in results:
        line_ok = res.passed(args.tol)
        ok = ok and line_ok
        worst = max(worst, res.max_rel_error)
        print(f"{'PASS' if line_ok else 'FAIL'}  {label:36s} "
              f"max rel err {res.max_rel_error:.3e}  ({res.checked} coords)")
    print(f"worst relative error: {worst:.3e} (tolerance {args.tol:.1e})")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trifuse",
        description="Trimodal person identification on embedding vectors")
    parser.add_argument("--print-config", action="store_true",
                        help="print the default config as JSON and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train on a generated dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ablate", default="",
                   help="comma-separated ablation flags, e.g. no_confidence")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--mask", default="", help="e.g. face,voice (default: all 7)")
    p.add_argument("--ablate", default="")
    p.add_argument("--out", default="")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation ladder")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", default="cumulative", choices=("cumulative", "single"))
    p.add_argument("--out", default="")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("grad-check", help="verify gradients by finite differences")
    p.add_argument("--module", default="all")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(fn=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        print(Config().to_json())
        return 0
    if not getattr(args, "command", None):
        parser.print_help()
        return 2
    try:
        return args.fn(args)
    except (ConfigError, DataError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
