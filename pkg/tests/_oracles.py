"""Independent reference loss for finite-difference checks.

Evaluates the PINN loss for a whole batch of flat parameter vectors at once
(one leading axis per candidate vector). The residuals are assembled here
from raw value/gradient/Hessian arrays rather than through the library's
physics module, so a bug there cannot cancel against the same bug here.
"""
import numpy as np

from qpinn import autodiff as ad
from qpinn.geometry import Region
from qpinn.quantum import run_circuit


def unpack(arch, flat_batch):
    flat_batch = np.atleast_2d(flat_batch)
    out, pos = {}, 0
    for name, shape in arch.param_shapes().items():
        n = int(np.prod(shape))
        out[name] = flat_batch[:, pos : pos + n].reshape((len(flat_batch),) + tuple(shape))
        pos += n
    return out


def _forward(arch, P, x):
    n_layers = len(arch.widths) - 1
    h = x
    for i in range(n_layers):
        h = h @ np.swapaxes(P[f"mlp.{i}.weight"], 1, 2) + P[f"mlp.{i}.bias"][:, None, :]
        if i < n_layers - 1:
            h = h * (1.0 / (1.0 + np.exp(-h))) if not isinstance(h, ad.DiffScalar) else ad.silu(h)
    if arch.variant == "classical":
        return h
    feats = ad.tanh(h) * np.pi
    q = run_circuit(arch.circuit, feats, P["vqc.theta"][:, None, :])
    return q @ np.swapaxes(P["head.weight"], 1, 2) + P["head.bias"][:, None, :]


def batched_loss(arch, flat_batch, cloud, nu=1.0, rho=1.0):
    """Total loss (unit weights) for every row of ``flat_batch``."""
    P = unpack(arch, flat_batch)
    fluid = cloud.mask(Region.FLUID)
    x = ad.seed_spatial(cloud.points[fluid])
    x = ad.DiffScalar(x.value[None], x.grad[:, None], x.hess[:, None])
    out = _forward(arch, P, x)
    V, G, H = out.value, out.grad, out.hess  # (B,N,4), (3,B,N,4), (3,B,N,4)
    total = 0.0
    for i in range(3):
        conv = sum(V[..., j] * G[j, ..., i] for j in range(3))
        lap = H[0, ..., i] + H[1, ..., i] + H[2, ..., i]
        r = -conv + nu * lap - G[i, ..., 3] / rho
        total = total + np.mean(r * r, axis=-1)
    div = G[0, ..., 0] + G[1, ..., 1] + G[2, ..., 2]
    total = total + np.mean(div * div, axis=-1)

    for region in (Region.WALL, Region.INLET, Region.OUTLET):
        m = cloud.mask(region)
        if not m.any():
            continue
        pred = _forward(arch, P, cloud.points[m][None])
        if region == Region.WALL:
            e = np.sum(pred[..., :3] ** 2, axis=-1)
        elif region == Region.INLET:
            e = np.sum((pred[..., :3] - cloud.bc_velocity[m]) ** 2, axis=-1)
        else:
            e = (pred[..., 3] - cloud.bc_pressure[m]) ** 2
        total = total + np.mean(e, axis=-1)
    return total


def fd_gradient(arch, flat, cloud, indices, h=1e-5, chunk=512):
    """Central differences of :func:`batched_loss` for the chosen coordinates."""
    indices = np.asarray(indices)
    out = np.empty(len(indices))
    for start in range(0, len(indices), chunk):
        idx = indices[start : start + chunk]
        plus = np.repeat(flat[None], len(idx), axis=0)
        minus = plus.copy()
        plus[np.arange(len(idx)), idx] += h
        minus[np.arange(len(idx)), idx] -= h
        out[start : start + len(idx)] = (batched_loss(arch, plus, cloud) - batched_loss(arch, minus, cloud)) / (2 * h)
    return out
