"""Field snapshots for external viewers and loss-curve logs."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud
from .network import ModelParams, forward, load_checkpoint
from .physics import LOG_COLUMNS, TERM_NAMES, LossBreakdown

log = logging.getLogger(__name__)


@dataclass
class FieldSnapshot:
    points: np.ndarray
    velocity: np.ndarray
    pressure: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        self.velocity = np.asarray(self.velocity, dtype=np.float64).reshape(n, 3)
        self.pressure = np.asarray(self.pressure, dtype=np.float64).reshape(n)

    def __len__(self):
        return len(self.points)

    @property
    def finite(self) -> np.ndarray:
        """Per-point flag: all predicted values finite."""
        return np.isfinite(self.velocity).all(axis=1) & np.isfinite(self.pressure)


def infer(checkpoint, cloud: PointCloud) -> FieldSnapshot:
    """Predict (v, p) at every cloud point. ``checkpoint`` is a path or ModelParams."""
    params = checkpoint if isinstance(checkpoint, ModelParams) else load_checkpoint(checkpoint)
    out = np.asarray(forward(params, cloud.points)) if len(cloud) else np.zeros((0, 4))
    snap = FieldSnapshot(cloud.points.copy(), out[:, :3], out[:, 3])
    bad = int(np.count_nonzero(~snap.finite))
    if bad:
        log.warning("%d of %d predicted points are non-finite", bad, len(snap))
    return snap


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_vtk(snapshot: FieldSnapshot, path, title: str = "qpinn field snapshot") -> None:
    """Legacy ASCII VTK unstructured grid of vertex cells with velocity and pressure."""
    n = len(snapshot)
    lines = [
        "# vtk DataFile Version 3.0",
        title.replace("\n", " ")[:255],
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
    ]
    lines += [" ".join(_fmt(c) for c in p) for p in snapshot.points]
    lines.append(f"CELLS {n} {2 * n}")
    lines += [f"1 {i}" for i in range(n)]
    lines.append(f"CELL_TYPES {n}")
    lines += ["1"] * n
    lines.append(f"POINT_DATA {n}")
    lines.append("VECTORS velocity double")
    lines += [" ".join(_fmt(c) for c in v) for v in snapshot.velocity]
    lines.append("SCALARS pressure double 1")
    lines.append("LOOKUP_TABLE default")
    lines += [_fmt(p) for p in snapshot.pressure]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_loss_csv(history, path, start_epoch: int = 0) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for i, b in enumerate(history):
            w.writerow([start_epoch + i] + [repr(float(t)) for t in b.terms()] + [repr(float(b.total))])


def read_loss_csv(path) -> list:
    history = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != LOG_COLUMNS:
            raise ValueError(f"{path}: unexpected loss log columns {reader.fieldnames}")
        for row in reader:
            history.append(
                LossBreakdown(*(float(row[n]) for n in TERM_NAMES), total=float(row["total"]))
            )
    return history
