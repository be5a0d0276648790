"""Hybrid quantum physics-informed neural networks for steady Navier-Stokes flow
in Y-shaped mixers."""
from .geometry import MixerSpec, PointCloud, Region, generate_mixer, load_csv, save_csv
from .network import Architecture, ModelParams, forward, init_params, load_checkpoint, save_checkpoint
from .physics import FluidParams, LossBreakdown, total_loss
from .quantum import CircuitSpec, run_circuit
from .trainer import TrainConfig, compare, train_classical, train_hybrid, transfer_learn

__version__ = "0.1.0"
