"""Steady incompressible Navier-Stokes residuals and the composite PINN loss."""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import DiffScalar
from .geometry import PointCloud, Region
from .network import ModelParams, forward

TERM_NAMES = (
    "momentum_x",
    "momentum_y",
    "momentum_z",
    "continuity",
    "bc_wall",
    "bc_inlet",
    "bc_outlet",
)
LOG_COLUMNS = ("epoch",) + TERM_NAMES + ("total",)


@dataclass(frozen=True)
class FluidParams:
    nu: float = 1.0
    rho: float = 1.0

    def __post_init__(self):
        if not (self.nu > 0 and self.rho > 0):
            raise ValueError(f"viscosity and density must be positive, got nu={self.nu}, rho={self.rho}")


@dataclass(frozen=True)
class LossBreakdown:
    momentum_x: float
    momentum_y: float
    momentum_z: float
    continuity: float
    bc_wall: float
    bc_inlet: float
    bc_outlet: float
    total: float

    @property
    def momentum(self) -> tuple:
        return (self.momentum_x, self.momentum_y, self.momentum_z)

    def terms(self) -> tuple:
        return tuple(getattr(self, n) for n in TERM_NAMES)

    def as_dict(self) -> dict:
        return asdict(self)

    def is_finite(self) -> bool:
        return all(np.isfinite(getattr(self, f.name)) for f in fields(self))

    @classmethod
    def from_terms(cls, terms, weights=None) -> "LossBreakdown":
        terms = [float(t) for t in terms]
        w = np.ones(len(TERM_NAMES)) if weights is None else np.asarray(weights, dtype=float)
        return cls(*terms, total=float(np.dot(w, terms)))


def _require_payloads(*xs):
    for x in xs:
        if not isinstance(x, DiffScalar) or x.grad is None or x.hess is None:
            raise TypeError("residuals need DiffScalar inputs carrying gradient and Hessian payloads")


def ns_residual(v, p, params: FluidParams = FluidParams()):
    """Momentum residual -(v.grad)v + nu*lap(v) - grad(p)/rho, one entry per component.

    ``v`` is a sequence of three DiffScalars, ``p`` a DiffScalar.
    """
    _require_payloads(*v, p)
    out = []
    for i in range(3):
        vi = v[i]
        conv = v[0].value * vi.grad[0] + v[1].value * vi.grad[1] + v[2].value * vi.grad[2]
        lap = vi.hess[0] + vi.hess[1] + vi.hess[2]
        out.append(-conv + params.nu * lap - p.grad[i] * (1.0 / params.rho))
    return out


def continuity_residual(v):
    _require_payloads(*v)
    return v[0].grad[0] + v[1].grad[1] + v[2].grad[2]


def _mean_square(x):
    return (x * x).mean()


def _group_mean(x, label):
    if ad.value_of(x).shape[0] == 0:
        warnings.warn(f"no {label} points; term contributes 0", stacklevel=3)
        return 0.0
    return x.mean()


def bc_terms(pred, cloud: PointCloud):
    """(wall, inlet, outlet) mean-square mismatches from predictions on ``cloud`` points.

    ``pred`` has shape (N, 4) aligned with the cloud; only boundary rows are read.
    """
    wall = np.flatnonzero(cloud.mask(Region.WALL))
    inlet = np.flatnonzero(cloud.mask(Region.INLET))
    outlet = np.flatnonzero(cloud.mask(Region.OUTLET))
    vw = pred[wall, 0:3]
    dv = pred[inlet, 0:3] - cloud.bc_velocity[inlet]
    dp = pred[outlet, 3] - cloud.bc_pressure[outlet]
    return (
        _group_mean((vw * vw).sum(axis=1), "wall"),
        _group_mean((dv * dv).sum(axis=1), "inlet"),
        _group_mean(dp * dp, "outlet"),
    )


def bc_loss(pred, cloud: PointCloud):
    """Plain-float version of :func:`bc_terms`."""
    return tuple(float(ad.value_of(t)) for t in bc_terms(pred, cloud))


def pde_terms(out: DiffScalar, params: FluidParams):
    """Mean-square momentum (x, y, z) and continuity residuals from model output derivatives."""
    if out.shape[0] == 0:
        warnings.warn("no fluid points; PDE terms contribute 0", stacklevel=2)
        return (0.0, 0.0, 0.0, 0.0)
    v = [out[:, i] for i in range(3)]
    p = out[:, 3]
    mom = ns_residual(v, p, params)
    cont = continuity_residual(v)
    return tuple(_mean_square(r) for r in mom) + (_mean_square(cont),)


def loss_terms(model, params, cloud: PointCloud, fluid: FluidParams = FluidParams()):
    """All seven loss terms, each a float or a tape node.

    ``model(params, x)`` maps coordinates to (vx, vy, vz, p); PDE terms use
    fluid points only, boundary terms use their own groups.
    """
    fluid_mask = cloud.mask(Region.FLUID)
    out = model(params, ad.seed_spatial(cloud.points[fluid_mask]))
    pde = pde_terms(out, fluid)
    boundary = np.flatnonzero(~fluid_mask)
    bpred = model(params, cloud.points[boundary])
    return pde + bc_terms(bpred, cloud.subset(boundary))


def weighted_total(terms, weights=None):
    w = [1.0] * len(terms) if weights is None else list(weights)
    total = 0.0
    for wi, t in zip(w, terms):
        total = total + wi * t
    return total


def total_loss(
    cloud: PointCloud,
    model=forward,
    params: ModelParams = None,
    fluid: FluidParams = FluidParams(),
    weights=None,
) -> LossBreakdown:
    """Evaluate every term and fill a :class:`LossBreakdown` (no gradients)."""
    terms = loss_terms(model, params, cloud, fluid)
    return LossBreakdown.from_terms([ad.value_of(t) for t in terms], weights)


def loss_and_grad(params: ModelParams, cloud: PointCloud, fluid: FluidParams = FluidParams(), weights=None, model=forward):
    """Weighted total loss breakdown and its flat gradient w.r.t. ``params``."""
    tape = ad.Tape()
    bound = params.bind(tape)
    terms = loss_terms(model, bound, cloud, fluid)
    total = weighted_total(terms, weights)
    breakdown = LossBreakdown.from_terms([ad.value_of(t) for t in terms], weights)
    if not isinstance(total, ad.Node):
        return breakdown, np.zeros(params.size)
    return breakdown, tape.backward(total)
