"""Long-running training experiments behind the acceptance suite.

Each experiment writes a JSON record to ``results/``. The acceptance tests
reuse a record when its protocol matches the current one and otherwise run
the experiment in-process, which takes minutes (ablations) to hours (desk).

    python tests/experiments.py desk
    python tests/experiments.py ablations
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from rigidreg.cli import EvalOptions, TrainConfig, evaluate, save_checkpoint, train
from rigidreg.data import GenConfig, augment_pair, gen_synthetic
from rigidreg.estimators import CorrespondenceSet
from rigidreg.regnet import LossConfig, Network, RegNetConfig

RESULTS = Path(__file__).resolve().parent.parent / "results"
SEEDS = (0, 1, 2)

log = logging.getLogger("experiments")

# ------------------------------------------------------------------ desk run

DESK_TRAIN = GenConfig(pairs=2000, n=256, outlier_fraction=0.5, max_rotation_deg=30,
                       max_translation=0.5, noise_sigma=0.005, seed=0)
DESK_TEST = replace(DESK_TRAIN, pairs=300, seed=1)
DESK_CONFIG = TrainConfig(networks=(RegNetConfig(blocks=8), RegNetConfig(blocks=4)),
                          loss=LossConfig(alpha=0.5, beta=1e-3, metric="l1"), lr=1e-4, batch=16,
                          epochs=100, seed=0)

# ------------------------------------------------------------- ablation runs

ABL_TRAIN = GenConfig(pairs=1000, n=128, seed=100)
ABL_TEST = GenConfig(pairs=200, n=128, seed=200)
ABL_BASE = TrainConfig(networks=(RegNetConfig(blocks=3),), loss=LossConfig(beta=1.0, metric="l1"),
                       lr=1e-3, batch=16, epochs=60)
VARIANTS = {
    "l1": ABL_BASE,
    "l2": replace(ABL_BASE, loss=replace(ABL_BASE.loss, metric="l2")),
    "linear": replace(ABL_BASE, networks=(RegNetConfig(blocks=3, rotation="linear"),)),
    "cascade": replace(ABL_BASE, networks=(RegNetConfig(blocks=3), RegNetConfig(blocks=2))),
    "curriculum": replace(ABL_BASE, curriculum=True, theta_max=50.0),
}
FRACTIONS = (0.1, 0.25, 0.5, 0.75, 0.9, 1.0)
PERTURBATIONS = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def protocol(*parts) -> dict:
    return _jsonable({"parts": [asdict(p) if hasattr(p, "__dataclass_fields__") else p for p in parts]})


def _load(name: str, key: dict):
    path = RESULTS / f"{name}.json"
    if not path.exists():
        return None
    rec = json.loads(path.read_text())
    return rec if rec.get("protocol") == key else None


def _save(name: str, rec: dict) -> None:
    RESULTS.mkdir(exist_ok=True)
    rec["machine"] = {"python": platform.python_version(), "numpy": np.__version__,
                      "cpus": os.cpu_count(), "threads": os.environ.get("RIGIDREG_THREADS")}
    (RESULTS / f"{name}.json").write_text(json.dumps(_jsonable(rec), indent=1, sort_keys=True))


def row_dict(row) -> dict:
    return {k: getattr(row, k) for k in row.FIELDS}


# ------------------------------------------------------------------ desk

def run_desk(force: bool = False) -> dict:
    key = protocol(DESK_TRAIN, DESK_TEST, replace(DESK_CONFIG, checkpoint=None))
    if not force and (rec := _load("desk", key)) is not None:
        return rec
    train_set = gen_synthetic(DESK_TRAIN)
    test_set = gen_synthetic(DESK_TEST)
    t0 = time.perf_counter()
    result = train(DESK_CONFIG, train_set)
    train_seconds = time.perf_counter() - t0
    RESULTS.mkdir(exist_ok=True)
    save_checkpoint(RESULTS / "desk.ckpt", result.network, {"best_epoch": result.best_epoch})
    opts = EvalOptions(ransac_iters=1000)
    t1 = time.perf_counter()
    trained = evaluate(test_set, ["regnet", "regnet+umeyama", "ransac", "ransac+umeyama"],
                       result.network, opts)
    untrained = evaluate(test_set, ["regnet", "regnet+umeyama"],
                         Network.create(DESK_CONFIG.networks, seed=DESK_CONFIG.seed), opts)
    eval_seconds = time.perf_counter() - t1
    rec = {
        "protocol": key,
        "train_seconds": train_seconds,
        "eval_seconds": eval_seconds,
        "best_epoch": result.best_epoch,
        "log": [e.row() for e in result.log],
        "trained": [row_dict(r) for r in trained.rows],
        "untrained": [row_dict(r) for r in untrained.rows],
    }
    _save("desk", rec)
    return rec


# -------------------------------------------------------------- ablations

def subsample(pair: CorrespondenceSet, fraction: float, seed: int) -> CorrespondenceSet:
    """Keep a seeded random ``fraction`` of the correspondences (at least 3)."""
    k = max(3, int(round(fraction * len(pair))))
    idx = np.sort(np.random.default_rng([seed, pair.pair_id]).permutation(len(pair))[:k])
    labels = None if pair.labels is None else pair.labels[idx]
    return CorrespondenceSet(pair.P[idx], pair.Q[idx], labels, pair.gt, pair.pair_id)


def perturb(pair: CorrespondenceSet, theta: float, seed: int) -> CorrespondenceSet:
    return augment_pair(pair, theta, int(np.random.SeedSequence([seed, pair.pair_id, 99]).generate_state(1)[0]))


def _regnet_rows(net, pairs) -> dict:
    rep = evaluate(pairs, ["regnet", "regnet+umeyama"], net)
    return {r.method: row_dict(r) for r in rep.rows}


def run_variant(name: str, seed: int, force: bool = False) -> dict:
    cfg = replace(VARIANTS[name], seed=seed)
    gtrain = replace(ABL_TRAIN, seed=ABL_TRAIN.seed + seed)
    gtest = replace(ABL_TEST, seed=ABL_TEST.seed + seed)
    key = protocol(gtrain, gtest, cfg, list(FRACTIONS), list(PERTURBATIONS))
    tag = f"ablation_{name}_s{seed}"
    if not force and (rec := _load(tag, key)) is not None:
        return rec
    test_set = gen_synthetic(gtest)
    t0 = time.perf_counter()
    result = train(cfg, gen_synthetic(gtrain))
    rec = {"protocol": key, "variant": name, "seed": seed,
           "train_seconds": time.perf_counter() - t0, "best_epoch": result.best_epoch,
           "log": [e.row() for e in result.log], "test": _regnet_rows(result.network, test_set)}
    if name == "l1":
        rec["fractions"] = {str(f): _regnet_rows(result.network, [subsample(p, f, seed) for p in test_set])
                            for f in FRACTIONS}
    if name in ("l1", "curriculum"):
        rec["perturbations"] = {str(th): _regnet_rows(result.network, [perturb(p, th, seed) for p in test_set])
                                for th in PERTURBATIONS}
    _save(tag, rec)
    return rec


def run_ablations(force: bool = False, names=None) -> dict:
    return {(n, s): run_variant(n, s, force) for n in (names or VARIANTS) for s in SEEDS}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("which", choices=["desk", "ablations"])
    ap.add_argument("--force", action="store_true", help="ignore cached records")
    ap.add_argument("--variant", action="append", help="restrict ablations to these variants")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    if args.which == "desk":
        rec = run_desk(args.force)
        print(json.dumps({k: rec[k] for k in ("train_seconds", "trained", "untrained")}, indent=1))
    else:
        for (n, s), rec in run_ablations(args.force, args.variant).items():
            print(n, s, rec["test"]["regnet"]["rot_mean"], flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
