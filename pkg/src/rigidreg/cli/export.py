"""CSV exports: rotation-error CDFs, trajectories and transform files."""

from __future__ import annotations

import csv
from typing import Optional, Sequence

import numpy as np

from ..geom3d import RigidTransform, chain

TRANSFORM_FIELDS = ("index", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22",
                    "t0", "t1", "t2")


class ExportError(ValueError):
    pass


def cdf_table(errors: Sequence[float], grid: Optional[Sequence[float]] = None) -> list[tuple[float, float]]:
    """(threshold, fraction of errors <= threshold) at every distinct error and grid point."""
    e = np.sort(np.asarray(errors, dtype=float))
    if e.size == 0:
        raise ExportError("no errors to export")
    if not np.all(np.isfinite(e)):
        raise ExportError("errors must be finite")
    thresholds = np.unique(np.concatenate([e, np.asarray(grid if grid is not None else [], dtype=float)]))
    counts = np.searchsorted(e, thresholds, side="right")
    return [(float(t), float(c / e.size)) for t, c in zip(thresholds, counts)]


def cdf_export(errors: Sequence[float], path, grid: Optional[Sequence[float]] = None) -> list[tuple[float, float]]:
    table = cdf_table(errors, grid)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["threshold", "fraction"])
        for t, frac in table:
            w.writerow([repr(t), repr(frac)])
    return table


def transform_row(i: int, T: RigidTransform) -> list:
    return [i] + [repr(float(v)) for v in T.R.ravel()] + [repr(float(v)) for v in T.t]


def write_transforms(path, transforms: Sequence[RigidTransform]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRANSFORM_FIELDS)
        for i, T in enumerate(transforms):
            w.writerow(transform_row(i, T))


def read_transforms(path) -> list[RigidTransform]:
    """Inverse of :func:`write_transforms`; rows are taken in file order."""
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = set(TRANSFORM_FIELDS[1:]) - set(reader.fieldnames or [])
        if missing:
            raise ExportError(f"transform file lacks columns {sorted(missing)}")
        for line, row in enumerate(reader, start=2):
            try:
                R = np.array([float(row[k]) for k in TRANSFORM_FIELDS[1:10]]).reshape(3, 3)
                t = np.array([float(row[k]) for k in TRANSFORM_FIELDS[10:]])
                out.append(RigidTransform(R, t))
            except ValueError as e:
                raise ExportError(f"line {line}: {e}") from e
    return out


def chain_export(transforms: Sequence[RigidTransform], path) -> list[RigidTransform]:
    """Row i is the pose of scan i+1 in the frame of scan 1."""
    if not transforms:
        raise ExportError("no transforms to chain")
    poses = chain(transforms)
    write_transforms(path, poses)
    return poses
