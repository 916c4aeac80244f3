"""``rigidreg`` command line: gen, train, eval, register, chain, cdf."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from ..data import DatasetFormatError, gen_synthetic, read_dataset, write_dataset
from ..estimators import (EstimationError, icp, procrustes, ransac_full, threshold_classify,
                          umeyama)
from ..geom3d import GeometryError, RigidTransform
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, load_config
from .evaluate import EvalOptions, EvaluationError, evaluate, network_predictor, thread_count
from .export import ExportError, cdf_export, chain_export, read_transforms
from .train import EpochLog, TrainingError, train

REGISTER_METHODS = ("procrustes", "umeyama", "ransac", "ransac+umeyama", "icp",
                    "regnet", "regnet+umeyama", "regnet+icp")

log = logging.getLogger("rigidreg")


class CliError(Exception):
    pass


def _require(value, flag: str):
    if value is None:
        raise CliError(f"{flag} is required")
    return value


def cmd_gen(args, cfg) -> None:
    pairs = gen_synthetic(cfg.gen)
    write_dataset(_require(args.out, "--out"), pairs)
    print(f"wrote {len(pairs)} pairs to {args.out}")


def cmd_train(args, cfg) -> None:
    pairs = read_dataset(_require(args.dataset, "--dataset"))
    tc = replace(cfg.train, checkpoint=_require(args.checkpoint, "--checkpoint"))
    writer = None
    fh = None
    if args.out:
        fh = open(args.out, "w", newline="", encoding="utf-8")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EpochLog.FIELDS)

    def on_epoch(e: EpochLog):
        print("epoch {} train_loss {:.6f} val_loss {:.6f} val_acc {:.4f} val_rot {:.3f} val_trans {:.4f}"
              .format(*e.row()), flush=True)
        if writer is not None:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in e.row()])
            fh.flush()

    try:
        result = train(tc, pairs, on_epoch=on_epoch)
    finally:
        if fh is not None:
            fh.close()
    print(f"best epoch {result.best_epoch}; checkpoint {tc.checkpoint}")


def _methods(args, default: Sequence[str]) -> list[str]:
    if args.method:
        return [m.strip() for m in args.method.split(",") if m.strip()]
    return list(default)


def cmd_eval(args, cfg) -> None:
    pairs = read_dataset(_require(args.dataset, "--dataset"))
    methods = _methods(args, cfg.methods)
    net = load_checkpoint(args.checkpoint)[0] if args.checkpoint else None
    opts = replace(cfg.eval, workers=thread_count())
    report = evaluate(pairs, methods, net, opts)
    print(f"{'method':16s} {'rot_mean':>9s} {'rot_med':>9s} {'trans_mean':>10s} {'trans_med':>10s} "
          f"{'time':>9s} {'acc':>6s}")
    for r in report.rows:
        print(f"{r.method:16s} {r.rot_mean:9.4f} {r.rot_median:9.4f} {r.trans_mean:10.5f} "
              f"{r.trans_median:10.5f} {r.time_mean:9.5f} {r.accuracy:6.4f}")
    if args.out:
        report.write_csv(args.out)
    if args.pairs_out:
        report.write_pairs_csv(args.pairs_out)


def _print_transform(T: RigidTransform) -> None:
    print("R " + " ".join(repr(float(v)) for v in T.R.ravel()))
    print("t " + " ".join(repr(float(v)) for v in T.t))


def cmd_register(args, cfg) -> None:
    path = args.input or args.dataset
    pairs = read_dataset(_require(path, "--input"))
    if not 0 <= args.index < len(pairs):
        raise CliError(f"pair index {args.index} out of range (file holds {len(pairs)})")
    pair = pairs[args.index]
    method = args.method or "ransac+umeyama"
    if method not in REGISTER_METHODS:
        raise CliError(f"unknown method {method!r}; choose from {REGISTER_METHODS}")
    opts: EvalOptions = cfg.eval
    weights: Optional[np.ndarray] = None
    diag: list[str] = []

    if method in ("procrustes", "umeyama"):
        if pair.labels is None:
            raise CliError(f"{method} needs labels in the pair file")
        if method == "procrustes":
            # labels as weights; the scale is irrelevant to the fit and keeps w < 1
            weights = 0.5 * pair.labels.astype(float)
            T = procrustes(pair, weights)
        else:
            T = umeyama(pair, pair.labels.astype(bool))
        diag.append(f"selected {int(pair.labels.sum())}")
    elif method.startswith("ransac"):
        res = ransac_full(pair, opts.ransac_threshold, opts.ransac_iters, opts.seed)
        T = res.transform
        if method == "ransac+umeyama":
            T = umeyama(pair, res.inliers)
        weights = res.inliers.astype(float)
        diag.append(f"inliers {int(res.inliers.sum())}")
    elif method == "icp":
        T = icp(pair.P, pair.Q, None, opts.icp_iters)
    else:
        net = load_checkpoint(_require(args.checkpoint, "--checkpoint"))[0]
        weights, T = network_predictor(net)(pair)
        mask = threshold_classify(weights, opts.tau)
        diag.append(f"selected {int(mask.sum())}")
        if method == "regnet+umeyama":
            T = umeyama(pair, mask)
        elif method == "regnet+icp":
            T = icp(pair.P, pair.Q, T, opts.icp_iters)

    _print_transform(T)
    if pair.gt is not None:
        from ..geom3d import rot_error, trans_error
        diag.append(f"rot_error {rot_error(T.R, pair.gt.R):.6g} trans_error {trans_error(T.t, pair.gt.t):.6g}")
    for d in diag:
        print(d)
    if args.out and weights is not None:
        with open(args.out, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["index", "weight"])
            for i, v in enumerate(weights):
                w.writerow([i, repr(float(v))])


def cmd_chain(args, cfg) -> None:
    transforms = read_transforms(_require(args.input, "--input"))
    poses = chain_export(transforms, _require(args.out, "--out"))
    print(f"wrote {len(poses)} poses to {args.out}")


def _read_errors(path: str, method: Optional[str]) -> list[float]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        fields = reader.fieldnames or []
        col = "rot_error" if "rot_error" in fields else (fields[0] if len(fields) == 1 else None)
        if col is None:
            raise CliError(f"{path}: expected a rot_error column")
        out = []
        for row in reader:
            if method and "method" in row and row["method"] != method:
                continue
            out.append(float(row[col]))
    return out


def cmd_cdf(args, cfg) -> None:
    errors = _read_errors(_require(args.input, "--input"), args.method)
    table = cdf_export(errors, _require(args.out, "--out"), cfg.grid)
    print(f"wrote {len(table)} thresholds to {args.out}")


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "register": cmd_register,
            "chain": cmd_chain, "cdf": cmd_cdf}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rigidreg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--dataset", help="dataset file")
        p.add_argument("--checkpoint", help="checkpoint file")
        p.add_argument("--method", help="method name (comma-separated list for eval)")
        p.add_argument("--out", help="output file")
        if name in ("register", "chain", "cdf"):
            p.add_argument("--input", help="input file")
        if name == "register":
            p.add_argument("--index", type=int, default=0, help="pair index within the input file")
        if name == "eval":
            p.add_argument("--pairs-out", help="per-pair CSV")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed)
        COMMANDS[args.command](args, cfg)
    except (CliError, ConfigError, DatasetFormatError, CheckpointError, EvaluationError,
            EstimationError, ExportError, GeometryError, TrainingError, OSError) as e:
        print(f"rigidreg {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
