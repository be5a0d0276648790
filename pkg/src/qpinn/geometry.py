"""Y-shaped mixer geometry on a static lattice.

Two inlet pipes rise from a junction at the origin in the x-z plane, the
right one at angle ``alpha`` to the +x axis and the left one mirrored; the
outlet pipe runs straight down the -z axis. A ball of pipe radius at the
origin closes the junction. Lattice points inside the closed solid are
tagged fluid, wall, inlet or outlet.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Region",
    "MixerSpec",
    "Pipe",
    "PointCloud",
    "CloudFormatError",
    "mixer_pipes",
    "generate_mixer",
    "inlet_profile",
    "save_csv",
    "load_csv",
]

CSV_HEADER = ["x", "y", "z", "region", "vx", "vy", "vz", "p"]


class Region(enum.IntEnum):
    FLUID = 0
    WALL = 1
    INLET = 2
    OUTLET = 3

    @property
    def label(self) -> str:
        return self.name.lower()


class CloudFormatError(ValueError):
    pass


@dataclass(frozen=True)
class MixerSpec:
    alpha: float = 30.0
    radius: float = 0.5
    inlet_length: float = 2.0
    outlet_length: float = 2.0
    grid_step: float = 0.1
    v_max: float = 1.0
    p_out: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 90.0:
            raise ValueError(f"alpha must lie in (0, 90) degrees, got {self.alpha}")
        for name in ("radius", "inlet_length", "outlet_length", "grid_step"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class Pipe:
    """Cylinder from ``start`` along unit ``direction`` for ``length``."""

    start: tuple
    direction: tuple
    length: float
    radius: float

    @property
    def end(self) -> np.ndarray:
        return np.asarray(self.start) + self.length * np.asarray(self.direction)

    def axial_radial(self, pts: np.ndarray):
        d = np.asarray(self.direction)
        rel = pts - np.asarray(self.start)
        t = rel @ d
        radial = np.linalg.norm(rel - t[:, None] * d, axis=1)
        return t, radial

    def sdf(self, pts: np.ndarray) -> np.ndarray:
        t, r = self.axial_radial(pts)
        dr = r - self.radius
        dt = np.abs(t - 0.5 * self.length) - 0.5 * self.length
        outside = np.hypot(np.maximum(dr, 0.0), np.maximum(dt, 0.0))
        return np.minimum(np.maximum(dr, dt), 0.0) + outside


def mixer_pipes(spec: MixerSpec) -> dict:
    a = math.radians(spec.alpha)
    ca, sa = math.cos(a), math.sin(a)
    origin = (0.0, 0.0, 0.0)
    return {
        "inlet_right": Pipe(origin, (ca, 0.0, sa), spec.inlet_length, spec.radius),
        "inlet_left": Pipe(origin, (-ca, 0.0, sa), spec.inlet_length, spec.radius),
        "outlet": Pipe(origin, (0.0, 0.0, -1.0), spec.outlet_length, spec.radius),
    }


@dataclass
class PointCloud:
    """Tagged points. ``bc_velocity`` / ``bc_pressure`` are NaN where unused."""

    points: np.ndarray
    region: np.ndarray
    bc_velocity: np.ndarray = None
    bc_pressure: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        self.region = np.asarray(self.region, dtype=np.int8).reshape(n)
        if self.bc_velocity is None:
            self.bc_velocity = np.full((n, 3), np.nan)
        if self.bc_pressure is None:
            self.bc_pressure = np.full(n, np.nan)
        self.bc_velocity = np.asarray(self.bc_velocity, dtype=np.float64).reshape(n, 3)
        self.bc_pressure = np.asarray(self.bc_pressure, dtype=np.float64).reshape(n)
        if not np.isin(self.region, [r.value for r in Region]).all():
            raise ValueError("unknown region code in point cloud")
        inlet = self.region == Region.INLET
        outlet = self.region == Region.OUTLET
        if np.isnan(self.bc_velocity[inlet]).any():
            raise ValueError("every inlet point needs a velocity payload")
        if np.isnan(self.bc_pressure[outlet]).any():
            raise ValueError("every outlet point needs a pressure payload")
        if not np.isnan(self.bc_velocity[~inlet]).all() or not np.isnan(self.bc_pressure[~outlet]).all():
            raise ValueError("boundary payloads are only allowed on inlet/outlet points")

    def __len__(self) -> int:
        return len(self.points)

    def mask(self, region: Region) -> np.ndarray:
        return self.region == region

    def count(self, region: Region) -> int:
        return int(np.count_nonzero(self.region == region))

    def subset(self, index) -> "PointCloud":
        return PointCloud(
            self.points[index], self.region[index], self.bc_velocity[index], self.bc_pressure[index], dict(self.meta)
        )

    def equals(self, other: "PointCloud") -> bool:
        return (
            np.array_equal(self.points, other.points)
            and np.array_equal(self.region, other.region)
            and np.array_equal(self.bc_velocity, other.bc_velocity, equal_nan=True)
            and np.array_equal(self.bc_pressure, other.bc_pressure, equal_nan=True)
        )


def inlet_profile(point, pipe: Pipe, v_max: float) -> np.ndarray:
    """Parabolic inflow v_max * (1 - (d/R)^2) pointing down the pipe toward the junction."""
    pts = np.atleast_2d(np.asarray(point, dtype=np.float64))
    _, d = pipe.axial_radial(pts)
    if np.any(d > pipe.radius * (1.0 + 1e-9)):
        raise ValueError(f"point lies outside the inlet disk (d={d.max():.6g} > R={pipe.radius})")
    mag = v_max * (1.0 - (np.minimum(d, pipe.radius) / pipe.radius) ** 2)
    v = -mag[:, None] * np.asarray(pipe.direction)
    return v[0] if np.ndim(point) == 1 else v


def _lattice(spec: MixerSpec, pipes: dict) -> np.ndarray:
    h = spec.grid_step
    ends = np.array([p.end for p in pipes.values()] + [[0.0, 0.0, 0.0]])
    lo = ends.min(axis=0) - spec.radius
    hi = ends.max(axis=0) + spec.radius
    xmax = max(abs(lo[0]), abs(hi[0]))
    ix = np.arange(-math.ceil(xmax / h), math.ceil(xmax / h) + 1)
    iy = np.arange(-math.ceil(spec.radius / h), math.ceil(spec.radius / h) + 1)
    iz = np.arange(math.floor(lo[2] / h), math.ceil(hi[2] / h) + 1)
    grid = np.stack(np.meshgrid(ix, iy, iz, indexing="ij"), axis=-1).reshape(-1, 3)
    # integer multiples keep the lattice exactly mirror-symmetric
    return grid.astype(np.float64) * h


def generate_mixer(spec: MixerSpec = MixerSpec()) -> PointCloud:
    pipes = mixer_pipes(spec)
    h = spec.grid_step
    pts = _lattice(spec, pipes)
    sdf = np.minimum.reduce([p.sdf(pts) for p in pipes.values()] + [np.linalg.norm(pts, axis=1) - spec.radius])
    inside = sdf <= 1e-9 * h
    pts, sdf = pts[inside], sdf[inside]

    region = np.full(len(pts), Region.FLUID, dtype=np.int8)
    region[sdf > -0.5 * h] = Region.WALL
    bc_v = np.full((len(pts), 3), np.nan)
    bc_p = np.full(len(pts), np.nan)
    # caps take one full lattice step so every lattice column crossing the disk contributes
    for name, pipe in pipes.items():
        t, r = pipe.axial_radial(pts)
        cap = (t > pipe.length - h) & (r <= pipe.radius * (1.0 + 1e-9))
        if name.startswith("inlet"):
            region[cap] = Region.INLET
            bc_v[cap] = inlet_profile(pts[cap], pipe, spec.v_max)
        else:
            region[cap] = Region.OUTLET
            bc_p[cap] = spec.p_out
    if not np.any(region == Region.FLUID):
        raise ValueError(
            f"grid_step {h} is too coarse for radius {spec.radius}: no interior fluid points"
        )
    return PointCloud(pts, region, bc_v, bc_p, meta={"alpha": spec.alpha})


def save_csv(cloud: PointCloud, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for pt, reg, v, p in zip(cloud.points, cloud.region, cloud.bc_velocity, cloud.bc_pressure):
            reg = Region(int(reg))
            vel = [repr(float(c)) for c in v] if reg == Region.INLET else ["", "", ""]
            pres = repr(float(p)) if reg == Region.OUTLET else ""
            w.writerow([repr(float(c)) for c in pt] + [reg.label] + vel + [pres])


def load_csv(path) -> PointCloud:
    labels = {r.label: r for r in Region}
    pts, regs, vels, pres = [], [], [], []
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CloudFormatError(f"{path}: no points")
        if [h.strip() for h in header] != CSV_HEADER:
            raise CloudFormatError(f"{path}: expected header {','.join(CSV_HEADER)}, got {','.join(header)}")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise CloudFormatError(f"row {line}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                xyz = [float(c) for c in row[:3]]
            except ValueError:
                raise CloudFormatError(f"row {line}: malformed coordinate") from None
            reg = labels.get(row[3].strip())
            if reg is None:
                raise CloudFormatError(f"row {line}: unknown region {row[3]!r}")
            v = [np.nan] * 3
            p = np.nan
            try:
                if reg == Region.INLET:
                    if any(c.strip() == "" for c in row[4:7]):
                        raise CloudFormatError(f"row {line}: inlet row is missing vx,vy,vz")
                    v = [float(c) for c in row[4:7]]
                if reg == Region.OUTLET:
                    if row[7].strip() == "":
                        raise CloudFormatError(f"row {line}: outlet row is missing p")
                    p = float(row[7])
            except ValueError as exc:
                if isinstance(exc, CloudFormatError):
                    raise
                raise CloudFormatError(f"row {line}: malformed boundary value") from None
            pts.append(xyz)
            regs.append(reg.value)
            vels.append(v)
            pres.append(p)
    if not pts:
        raise CloudFormatError(f"{path}: no points")
    return PointCloud(np.array(pts), np.array(regs), np.array(vels), np.array(pres))
