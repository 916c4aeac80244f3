"""Training, evaluation, checkpoints, exports and the ``rigidreg`` command line."""

import os as _os

# cap BLAS pools before numpy loads them
_threads = _os.environ.get("RIGIDREG_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint  # noqa: E402
from .evaluate import (METHODS, EvalOptions, EvalReport, EvaluationError, MethodRow,  # noqa: E402
                       PairResult, evaluate, network_predictor)
from .export import (ExportError, cdf_export, cdf_table, chain_export, read_transforms,  # noqa: E402
                     write_transforms)
from .train import EpochLog, TrainConfig, TrainingError, TrainResult, train  # noqa: E402

__all__ = [
    "METHODS", "CheckpointError", "EpochLog", "EvalOptions", "EvalReport", "EvaluationError",
    "ExportError", "MethodRow", "PairResult", "TrainConfig", "TrainResult", "TrainingError",
    "cdf_export", "cdf_table", "chain_export", "evaluate", "load_checkpoint", "network_predictor",
    "read_transforms", "save_checkpoint", "train", "write_transforms",
]
