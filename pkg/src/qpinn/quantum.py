"""Statevector simulation of the variational quantum layer.

Amplitudes live on the last axis of an array of length ``2**n``; qubit 0 is
the most significant bit of the basis index. Gate functions are generic over
the scalar type: plain (complex or real) numpy arrays, tape
:class:`~qpinn.autodiff.Node` objects, or :class:`~qpinn.autodiff.DiffScalar`
payloads. Ry and CNOT have real matrices, so starting from ``|0...0>`` the
state stays real and the differentiable path runs on real amplitudes.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import DiffScalar, Node

__all__ = [
    "CircuitSpec",
    "zero_state",
    "apply_ry",
    "apply_cnot",
    "expectation_z",
    "expectations_z",
    "run_circuit",
    "adjoint_gradient",
    "parameter_shift_gradient",
    "encode_features",
]


def _n_qubits(state) -> int:
    dim = ad.value_of(state).shape[-1]
    n = int(dim).bit_length() - 1
    if dim < 2 or 1 << n != dim:
        raise ValueError(f"state length {dim} is not a power of two")
    return n


def _check_qubit(q: int, n: int) -> None:
    if not 0 <= q < n:
        raise ValueError(f"qubit {q} out of range for {n}-qubit register")


@lru_cache(maxsize=None)
def _ry_indices(n: int, q: int):
    k = np.arange(1 << n)
    bit = (k >> (n - 1 - q)) & 1
    idx0, idx1 = k[bit == 0], k[bit == 1]
    inverse = np.argsort(np.concatenate([idx0, idx1]))
    return idx0, idx1, inverse


@lru_cache(maxsize=None)
def _cnot_perm(n: int, control: int, target: int) -> np.ndarray:
    k = np.arange(1 << n)
    flip = (k >> (n - 1 - control)) & 1
    return k ^ (flip << (n - 1 - target))


@lru_cache(maxsize=None)
def _z_signs(n: int, qubits: tuple) -> np.ndarray:
    k = np.arange(1 << n)
    cols = [1.0 - 2.0 * ((k >> (n - 1 - q)) & 1) for q in qubits]
    return np.stack(cols, axis=1)


def zero_state(n_qubits: int, batch_shape=(), dtype=complex) -> np.ndarray:
    state = np.zeros(tuple(batch_shape) + (1 << n_qubits,), dtype=dtype)
    state[..., 0] = 1.0
    return state


def apply_ry(state, qubit: int, angle):
    """Rotate ``qubit`` about the y axis: [[c, -s], [s, c]] with c, s of angle/2.

    ``angle`` must broadcast against the half-register shape ``(..., 2**(n-1))``,
    e.g. a scalar or an array of shape ``(batch, 1)``.
    """
    n = _n_qubits(state)
    _check_qubit(qubit, n)
    idx0, idx1, inverse = _ry_indices(n, qubit)
    half = angle * 0.5
    c, s = ad.cos(half), ad.sin(half)
    a0 = ad.take_last(state, idx0)
    a1 = ad.take_last(state, idx1)
    new = ad.concatenate([c * a0 - s * a1, s * a0 + c * a1], axis=-1)
    return ad.take_last(new, inverse)


def apply_cnot(state, control: int, target: int):
    n = _n_qubits(state)
    _check_qubit(control, n)
    _check_qubit(target, n)
    if control == target:
        raise ValueError("CNOT control and target must differ")
    return ad.take_last(state, _cnot_perm(n, control, target))


def _probabilities(state):
    if isinstance(state, (DiffScalar, Node)):
        return state * state  # real amplitudes on the differentiable path
    state = np.asarray(state)
    if np.iscomplexobj(state):
        return state.real**2 + state.imag**2
    return state * state


def expectations_z(state, qubits):
    """<Z_q> for each q in ``qubits``; result has trailing axis len(qubits)."""
    n = _n_qubits(state)
    for q in qubits:
        _check_qubit(q, n)
    return _probabilities(state) @ _z_signs(n, tuple(qubits))


def expectation_z(state, qubit: int):
    return expectations_z(state, (qubit,))[..., 0]


def encode_features(h):
    """Squash unbounded trunk features into rotation angles in (-pi, pi)."""
    return ad.tanh(h) * np.pi


@dataclass(frozen=True)
class CircuitSpec:
    """Gate list of a variational circuit.

    Gates are tuples ``("ry", qubit, source, index)`` with source ``"feature"``
    or ``"param"``, and ``("cnot", control, target)``.
    """

    n_qubits: int
    gates: tuple
    readout: tuple

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(tuple(g) for g in self.gates))
        object.__setattr__(self, "readout", tuple(self.readout))
        feats, params = [], []
        for g in self.gates:
            if g[0] == "ry":
                _, q, src, idx = g
                _check_qubit(q, self.n_qubits)
                if src == "feature":
                    feats.append(idx)
                elif src == "param":
                    params.append(idx)
                else:
                    raise ValueError(f"unknown angle source {src!r}")
            elif g[0] == "cnot":
                _, c, t = g
                _check_qubit(c, self.n_qubits)
                _check_qubit(t, self.n_qubits)
                if c == t:
                    raise ValueError("CNOT control and target must differ")
            else:
                raise ValueError(f"unknown gate {g[0]!r}")
        if sorted(feats) != list(range(len(feats))):
            raise ValueError("feature indices must each appear exactly once, 0..F-1")
        if sorted(params) != list(range(len(params))):
            raise ValueError("parameter indices must be unique and contiguous from 0")
        for q in self.readout:
            _check_qubit(q, self.n_qubits)

    @property
    def n_features(self) -> int:
        return sum(1 for g in self.gates if g[0] == "ry" and g[2] == "feature")

    @property
    def n_params(self) -> int:
        return sum(1 for g in self.gates if g[0] == "ry" and g[2] == "param")

    @classmethod
    def reuploading(cls, n_qubits: int = 4, n_blocks: int = 4) -> "CircuitSpec":
        """Blocks of (feature Ry per qubit, trainable Ry per qubit, CNOT ring)."""
        gates = []
        for b in range(n_blocks):
            for q in range(n_qubits):
                gates.append(("ry", q, "feature", b * n_qubits + q))
            for q in range(n_qubits):
                gates.append(("ry", q, "param", b * n_qubits + q))
            if n_qubits > 1:
                for q in range(n_qubits):
                    gates.append(("cnot", q, (q + 1) % n_qubits))
        return cls(n_qubits, tuple(gates), tuple(range(n_qubits)))

    def to_dict(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "gates": [list(g) for g in self.gates],
            "readout": list(self.readout),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CircuitSpec":
        return cls(int(d["n_qubits"]), tuple(tuple(g) for g in d["gates"]), tuple(d["readout"]))


def _check_sizes(spec: CircuitSpec, features, params) -> None:
    nf = ad.value_of(features).shape[-1] if spec.n_features else 0
    npar = ad.value_of(params).shape[-1] if spec.n_params else 0
    if nf != spec.n_features:
        raise ValueError(f"expected {spec.n_features} features, got {nf}")
    if npar != spec.n_params:
        raise ValueError(f"expected {spec.n_params} parameters, got {npar}")


def run_circuit(spec: CircuitSpec, features, params, dtype=float):
    """Prepare |0...0>, apply the gate list and return Z expectations on the readout.

    ``features`` has shape ``(..., n_features)``; any leading batch axes are
    carried through. Works with DiffScalar features (spatial derivatives
    propagate) and tape-node parameters.
    """
    _check_sizes(spec, features, params)
    batch = ad.value_of(features).shape[:-1] if spec.n_features else ()
    state = zero_state(spec.n_qubits, batch, dtype=dtype)
    for g in spec.gates:
        if g[0] == "ry":
            _, q, src, idx = g
            source = features if src == "feature" else params
            angle = ad.take_last(source, [idx])
            state = apply_ry(state, q, angle)
        else:
            state = apply_cnot(state, g[1], g[2])
    return expectations_z(state, spec.readout)


def _as_real_inputs(spec, features, params):
    features = np.asarray(features, dtype=np.float64)
    params = np.asarray(params, dtype=np.float64)
    if features.ndim != 1 and spec.n_features:
        raise ValueError("adjoint_gradient takes a single (unbatched) feature vector")
    if not spec.n_features:
        features = np.zeros(0)
    _check_sizes(spec, features, params)
    return features, params


def adjoint_gradient(spec: CircuitSpec, features, params) -> np.ndarray:
    """d<Z_k>/d theta_j for all readout qubits k and parameters j.

    One forward pass, then a single backward sweep that un-applies gates to
    both the state and the observable-projected bra states.
    """
    features, params = _as_real_inputs(spec, features, params)
    psi = zero_state(spec.n_qubits)
    angles = []
    for g in spec.gates:
        if g[0] == "ry":
            theta = features[g[3]] if g[2] == "feature" else params[g[3]]
            angles.append(theta)
            psi = apply_ry(psi, g[1], theta)
        else:
            angles.append(None)
            psi = apply_cnot(psi, g[1], g[2])
    signs = _z_signs(spec.n_qubits, spec.readout).T  # (K, 2^n)
    lam = signs * psi[None, :]
    grads = np.zeros((len(spec.readout), spec.n_params))
    for g, theta in zip(reversed(spec.gates), reversed(angles)):
        if g[0] == "ry":
            q = g[1]
            psi = apply_ry(psi, q, -theta)
            if g[2] == "param":
                # dRy(t)/dt = Ry(t + pi) / 2
                mu = 0.5 * apply_ry(psi, q, theta + np.pi)
                grads[:, g[3]] = 2.0 * np.real(lam.conj() @ mu)
            lam = apply_ry(lam, q, -theta)
        else:
            psi = apply_cnot(psi, g[1], g[2])
            lam = apply_cnot(lam, g[1], g[2])
    return grads


def parameter_shift_gradient(spec: CircuitSpec, features, params) -> np.ndarray:
    """Two-term shift rule (E(t + pi/2) - E(t - pi/2)) / 2 for every parameter."""
    features, params = _as_real_inputs(spec, features, params)
    grads = np.zeros((len(spec.readout), spec.n_params))
    for j in range(spec.n_params):
        shift = np.zeros_like(params)
        shift[j] = np.pi / 2
        plus = run_circuit(spec, features, params + shift, dtype=complex)
        minus = run_circuit(spec, features, params - shift, dtype=complex)
        grads[:, j] = 0.5 * (plus - minus)
    return grads
