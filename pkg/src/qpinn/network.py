"""PINN architectures: the classical MLP and the hybrid trunk/VQC/head stack.

Parameters are kept in :class:`ModelParams`, an ordered name -> array map
plus the architecture it belongs to. The same forward code runs on numpy
arrays (inference), on tape nodes (training) and on DiffScalar inputs
(spatial derivatives for the PDE residual).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .quantum import CircuitSpec, encode_features, run_circuit

CLASSICAL_WIDTHS = (3, 64, 64, 64, 64, 64, 16, 4)
HYBRID_TRUNK_WIDTHS = (3, 64, 64, 64, 64, 64, 16)
VQC_INIT_RANGE = 0.1


@dataclass(frozen=True)
class Architecture:
    """``widths`` is the full MLP for the classical variant, the trunk for hybrid."""

    variant: str = "classical"
    widths: tuple = CLASSICAL_WIDTHS
    circuit: Optional[CircuitSpec] = None

    def __post_init__(self):
        if self.variant not in ("classical", "hybrid"):
            raise ValueError(f"unknown variant {self.variant!r}")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2 or self.widths[0] != 3:
            raise ValueError(f"widths must start at 3 inputs, got {self.widths}")
        if self.variant == "classical":
            if self.widths[-1] != 4:
                raise ValueError("classical network must end in 4 outputs (vx, vy, vz, p)")
        else:
            if self.circuit is None:
                object.__setattr__(self, "circuit", CircuitSpec.reuploading())
            if self.circuit.n_features != self.widths[-1]:
                raise ValueError(
                    f"trunk emits {self.widths[-1]} features, circuit encodes {self.circuit.n_features}"
                )

    @classmethod
    def classical(cls, widths=CLASSICAL_WIDTHS) -> "Architecture":
        return cls("classical", widths)

    @classmethod
    def hybrid(cls, widths=HYBRID_TRUNK_WIDTHS, circuit: Optional[CircuitSpec] = None) -> "Architecture":
        return cls("hybrid", widths, circuit or CircuitSpec.reuploading())

    def param_shapes(self) -> dict:
        shapes = {}
        for i, (fan_in, fan_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            shapes[f"mlp.{i}.weight"] = (fan_out, fan_in)
            shapes[f"mlp.{i}.bias"] = (fan_out,)
        if self.variant == "hybrid":
            k = len(self.circuit.readout)
            shapes["vqc.theta"] = (self.circuit.n_params,)
            shapes["head.weight"] = (4, k)
            shapes["head.bias"] = (4,)
        return shapes

    def to_dict(self) -> dict:
        d = {"variant": self.variant, "widths": list(self.widths)}
        if self.circuit is not None:
            d["circuit"] = self.circuit.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        circuit = CircuitSpec.from_dict(d["circuit"]) if d.get("circuit") else None
        return cls(d["variant"], tuple(d["widths"]), circuit)


@dataclass
class ModelParams:
    arch: Architecture
    arrays: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.arch.param_shapes()
        if list(self.arrays) != list(shapes):
            raise ValueError(
                f"parameter names {list(self.arrays)} do not match architecture {list(shapes)}"
            )
        for name, shape in shapes.items():
            got = tuple(ad.value_of(self.arrays[name]).shape)
            if got != tuple(shape):
                raise ValueError(f"{name}: expected shape {shape}, got {got}")

    def __getitem__(self, name):
        return self.arrays[name]

    @property
    def size(self) -> int:
        return sum(ad.value_of(a).size for a in self.arrays.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(ad.value_of(a)) for a in self.arrays.values()])

    def with_flat(self, vec) -> "ModelParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ValueError(f"flat vector has shape {vec.shape}, expected ({self.size},)")
        out, pos = {}, 0
        for name, shape in self.arch.param_shapes().items():
            n = int(np.prod(shape))
            out[name] = vec[pos : pos + n].reshape(shape).copy()
            pos += n
        return ModelParams(self.arch, out)

    def bind(self, tape: ad.Tape) -> "ModelParams":
        """Register every array on ``tape``; the flat gradient follows :meth:`flat` order."""
        return ModelParams(self.arch, {k: tape.param(ad.value_of(v)) for k, v in self.arrays.items()})

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, {k: np.array(ad.value_of(v)) for k, v in self.arrays.items()})


def _glorot(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_params(seed: int, variant="classical") -> ModelParams:
    """Glorot-uniform weights, zero biases, VQC angles uniform in +-0.1.

    ``variant`` is ``"classical"``, ``"hybrid"`` or an :class:`Architecture`.
    """
    arch = variant if isinstance(variant, Architecture) else Architecture(variant, _default_widths(variant))
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in arch.param_shapes().items():
        if name.endswith(".bias"):
            arrays[name] = np.zeros(shape)
        elif name == "vqc.theta":
            arrays[name] = rng.uniform(-VQC_INIT_RANGE, VQC_INIT_RANGE, size=shape)
        else:
            arrays[name] = _glorot(rng, *shape)
    return ModelParams(arch, arrays)


def _default_widths(variant: str):
    return CLASSICAL_WIDTHS if variant == "classical" else HYBRID_TRUNK_WIDTHS


def mlp_forward(params: ModelParams, x):
    """Affine layers with SiLU between them and no activation after the last.

    Returns the 4 field outputs for the classical variant and the trunk
    features for the hybrid one.
    """
    n_layers = len(params.arch.widths) - 1
    if ad.value_of(x).shape[-1] != params.arch.widths[0]:
        raise ValueError("input width does not match architecture")
    h = x
    for i in range(n_layers):
        h = h @ params[f"mlp.{i}.weight"].T + params[f"mlp.{i}.bias"]
        if i < n_layers - 1:
            h = ad.silu(h)
    return h


def forward(params: ModelParams, x):
    """Map coordinates ``(..., 3)`` to ``(..., 4)`` = (vx, vy, vz, p)."""
    h = mlp_forward(params, x)
    if params.arch.variant == "classical":
        return h
    q = run_circuit(params.arch.circuit, encode_features(h), params["vqc.theta"])
    return q @ params["head.weight"].T + params["head.bias"]


def hybrid_from_classical(classical: ModelParams, seed: int, circuit: Optional[CircuitSpec] = None) -> ModelParams:
    """Hybrid model whose trunk copies all but the last layer of a trained classical MLP."""
    if classical.arch.variant != "classical":
        raise ValueError("pretrained trunk must come from a classical model")
    arch = Architecture.hybrid(classical.arch.widths[:-1], circuit)
    fresh = init_params(seed, arch)
    arrays = dict(fresh.arrays)
    for name in arrays:
        if name.startswith("mlp."):
            arrays[name] = np.array(ad.value_of(classical[name]))
    return ModelParams(arch, arrays)


CHECKPOINT_FORMAT = "qpinn-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(params: ModelParams, path, meta: Optional[dict] = None) -> None:
    """Write architecture + flat parameter vector as JSON.

    Floats are written with Python's shortest round-trip repr, so loading
    restores the vector bit for bit.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "architecture": params.arch.to_dict(),
        "param_order": list(params.arch.param_shapes()),
        "params": params.flat().tolist(),
        "meta": meta or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> ModelParams:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    arch = Architecture.from_dict(doc["architecture"])
    if doc.get("param_order") and doc["param_order"] != list(arch.param_shapes()):
        raise ValueError(f"{path}: parameter layout does not match architecture")
    template = init_params(0, arch)
    return template.with_flat(np.array(doc["params"], dtype=np.float64))
