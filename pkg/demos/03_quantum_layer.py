# %% [markdown]
# # The variational quantum layer
# Four qubits, four re-uploading blocks. Each block encodes four trunk
# features with Ry, applies four trainable Ry, then a CNOT ring.

# %%
import numpy as np

from qpinn.quantum import CircuitSpec, adjoint_gradient, parameter_shift_gradient, run_circuit

spec = CircuitSpec.reuploading()
print(spec.n_qubits, "qubits,", spec.n_features, "features,", spec.n_params, "angles")
print("first block:", spec.gates[:12])

# %%
rng = np.random.default_rng(1)
feats = rng.uniform(-np.pi, np.pi, 16)
theta = rng.uniform(-0.1, 0.1, 16)
print("<Z> readout", run_circuit(spec, feats, theta))
print("all zero angles ->", run_circuit(spec, np.zeros(16), np.zeros(16)))

# %% [markdown]
# Adjoint differentiation gives every angle derivative from one forward and
# one backward sweep. The parameter-shift rule needs two circuit runs per
# angle, and it agrees.

# %%
adj = adjoint_gradient(spec, feats, theta)
ps = parameter_shift_gradient(spec, feats, theta)
print("gradient shape", adj.shape, "max |adjoint - shift|", np.abs(adj - ps).max())
