# %% [markdown]
# # Spatial derivatives and the Navier-Stokes residual
# Inputs are seeded as DiffScalars: value, gradient, and the diagonal of the
# Hessian ride through the network together.

# %%
import numpy as np

from qpinn import autodiff as ad
from qpinn.network import forward, init_params
from qpinn.physics import FluidParams, continuity_residual, ns_residual

x = ad.seed_spatial([[0.2, -0.1, 0.4]])
y = ad.silu(x[:, 0] * 3.0)
print("silu(3x) at x=0.2:", y.value, "d/dx", y.grad[0], "d2/dx2", y.hess[0])

# %% [markdown]
# Finite differences agree.

# %%
f = lambda t: (3 * t) / (1 + np.exp(-3 * t))
h = 1e-4
print("FD d1", (f(0.2 + h) - f(0.2 - h)) / (2 * h))
print("FD d2", (f(0.2 + h) - 2 * f(0.2) + f(0.2 - h)) / h**2)

# %% [markdown]
# Poiseuille flow through a pipe of radius R is an exact steady solution
# when the pressure gradient is G = 4 nu v_c / R^2. The residual vanishes.

# %%
vc, R, nu = 1.0, 0.5, 1.0
G = 4 * nu * vc / R**2
pts = ad.seed_spatial(np.random.default_rng(0).uniform(-R, R, size=(200, 3)))
X, Y, Z = pts[:, 0], pts[:, 1], pts[:, 2]
v = [vc * (1 - (Y * Y + Z * Z) / R**2), X * 0.0, X * 0.0]
p = X * -G
res = ns_residual(v, p, FluidParams(nu=nu))
print("max |momentum residual|", max(np.abs(r).max() for r in res))
print("max |divergence|", np.abs(continuity_residual(v)).max())

# %% [markdown]
# The same machinery runs through the full 3 -> 64x5 -> 16 -> 4 network.

# %%
params = init_params(0)
out = forward(params, ad.seed_spatial(np.zeros((1, 3))))
print("outputs", out.value, "\nLaplacian of each output", out.hess.sum(axis=0))
