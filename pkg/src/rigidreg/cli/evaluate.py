"""Evaluation harness: per-method rotation/translation error, timing and accuracy."""

from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..estimators import (CorrespondenceSet, EstimationError, icp, ransac, threshold_classify,
                          umeyama)
from ..geom3d import RigidTransform, rot_error, trans_error
from ..regnet import Network

METHODS = ("regnet", "regnet+icp", "regnet+umeyama", "ransac", "ransac+umeyama", "icp")
NETWORK_METHODS = ("regnet", "regnet+icp", "regnet+umeyama")

# pair -> (last-stage weights, transform)
Predictor = Callable[[CorrespondenceSet], tuple[np.ndarray, RigidTransform]]


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class EvalOptions:
    ransac_threshold: float = 0.014
    ransac_iters: int = 1000
    icp_iters: int = 50
    tau: float = 0.5
    seed: int = 0
    workers: int = 1


@dataclass
class PairResult:
    method: str
    pair_id: int
    rot_error: float
    trans_error: float
    seconds: float
    accuracy: float = float("nan")
    failed: bool = False

    FIELDS = ("method", "pair_id", "rot_error", "trans_error", "seconds", "accuracy", "failed")


@dataclass
class MethodRow:
    method: str
    rot_mean: float
    rot_median: float
    trans_mean: float
    trans_median: float
    time_mean: float
    accuracy: float  # nan where not applicable
    pairs: int
    failures: int

    FIELDS = ("method", "rot_mean", "rot_median", "trans_mean", "trans_median", "time_mean",
              "accuracy", "pairs", "failures")

    @classmethod
    def from_pairs(cls, method: str, results: Sequence[PairResult]) -> MethodRow:
        rot = np.array([r.rot_error for r in results])
        trans = np.array([r.trans_error for r in results])
        acc = np.array([r.accuracy for r in results])
        acc = acc[~np.isnan(acc)]
        return cls(method, float(rot.mean()), float(np.median(rot)), float(trans.mean()),
                   float(np.median(trans)), float(np.mean([r.seconds for r in results])),
                   float(acc.mean()) if len(acc) else float("nan"), len(results),
                   sum(r.failed for r in results))


@dataclass
class EvalReport:
    rows: list[MethodRow] = field(default_factory=list)
    pairs: list[PairResult] = field(default_factory=list)

    def row(self, method: str) -> MethodRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def errors(self, method: str) -> list[float]:
        return [p.rot_error for p in self.pairs if p.method == method]

    def write_csv(self, path) -> None:
        _write_rows(path, MethodRow.FIELDS, [[getattr(r, f) for f in MethodRow.FIELDS] for r in self.rows])

    def write_pairs_csv(self, path) -> None:
        _write_rows(path, PairResult.FIELDS, [[getattr(p, f) for f in PairResult.FIELDS] for p in self.pairs])


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def thread_count() -> int:
    env = os.environ.get("RIGIDREG_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("RIGIDREG_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def network_predictor(net: Network) -> Predictor:
    def predict(pair: CorrespondenceSet):
        ws, T = net.predict([pair])[0]
        return ws[-1], T
    return predict


def _accuracy(mask: np.ndarray, labels: Optional[np.ndarray]) -> float:
    if labels is None:
        return float("nan")
    return float(np.mean(np.asarray(mask, dtype=bool) == labels.astype(bool)))


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def _evaluate_pair(pair: CorrespondenceSet, index: int, methods: Sequence[str],
                   predictor: Optional[Predictor], opts: EvalOptions) -> list[PairResult]:
    gt = pair.gt
    out: dict[str, PairResult] = {}

    def record(method, T, seconds, acc=float("nan"), failed=False):
        out[method] = PairResult(method, pair.pair_id, rot_error(T.R, gt.R), trans_error(T.t, gt.t),
                                 seconds, acc, failed)

    if any(m in NETWORK_METHODS for m in methods):
        (w, T_net), dt = _timed(lambda: predictor(pair))
        mask = threshold_classify(w, opts.tau)
        acc = _accuracy(mask, pair.labels)
        record("regnet", T_net, dt, acc)
        if "regnet+umeyama" in methods:
            try:
                T, du = _timed(lambda: umeyama(pair, mask))
                record("regnet+umeyama", T, dt + du, acc)
            except EstimationError:
                record("regnet+umeyama", T_net, dt, acc, failed=True)
        if "regnet+icp" in methods:
            T, di = _timed(lambda: icp(pair.P, pair.Q, T_net, opts.icp_iters))
            record("regnet+icp", T, dt + di, acc)

    if "ransac" in methods or "ransac+umeyama" in methods:
        seed = int(np.random.SeedSequence([opts.seed, index]).generate_state(1)[0])
        try:
            (T_r, mask_r), dr = _timed(lambda: ransac(pair, opts.ransac_threshold, opts.ransac_iters, seed))
            acc = _accuracy(mask_r, pair.labels)
            record("ransac", T_r, dr, acc)
            T, du = _timed(lambda: umeyama(pair, mask_r))
            record("ransac+umeyama", T, dr + du, acc)
        except EstimationError:
            for m in ("ransac", "ransac+umeyama"):
                record(m, RigidTransform.identity(), 0.0, failed=True)

    if "icp" in methods:
        T, di = _timed(lambda: icp(pair.P, pair.Q, None, opts.icp_iters))
        record("icp", T, di)

    return [out[m] for m in methods]


def evaluate(pairs: Sequence[CorrespondenceSet], methods: Sequence[str],
             net: Optional[Network] = None, opts: EvalOptions = EvalOptions(),
             predictor: Optional[Predictor] = None) -> EvalReport:
    """Run every method on every pair; rows follow the order of ``methods``.

    Network methods use ``predictor`` if given, else the network. A failed
    Umeyama refit falls back to the unrefined transform; a failed RANSAC
    reports the identity. Both are counted in ``failures``.
    """
    methods = list(dict.fromkeys(methods))
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise EvaluationError(f"unknown methods {unknown}; choose from {METHODS}")
    if not pairs:
        raise EvaluationError("empty dataset")
    missing = [p.pair_id for p in pairs if p.gt is None]
    if missing:
        raise EvaluationError(f"pairs without ground truth: {missing[:5]}")
    if any(m in NETWORK_METHODS for m in methods) and predictor is None:
        if net is None:
            raise EvaluationError("network methods need a checkpoint")
        predictor = network_predictor(net)

    def job(i):
        return _evaluate_pair(pairs[i], i, methods, predictor, opts)

    if opts.workers > 1:
        with ThreadPoolExecutor(opts.workers) as ex:
            per_pair = list(ex.map(job, range(len(pairs))))
    else:
        per_pair = [job(i) for i in range(len(pairs))]

    report = EvalReport()
    for k, m in enumerate(methods):
        results = [r[k] for r in per_pair]
        report.pairs.extend(results)
        report.rows.append(MethodRow.from_pairs(m, results))
    return report


def mean_rot_error(report: EvalReport, method: str) -> float:
    v = report.row(method).rot_mean
    return v if math.isfinite(v) else float("inf")
