"""Training protocols: classical, transfer across mixer angles, hybrid, and comparison."""
from __future__ import annotations

import contextlib
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import yaml

from .export import read_loss_csv, write_loss_csv
from .geometry import MixerSpec, PointCloud, generate_mixer, load_csv
from .network import (
    Architecture,
    ModelParams,
    hybrid_from_classical,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .optim import AdamState, LbfgsState, adam_step, lbfgs_step
from .physics import TERM_NAMES, FluidParams, LossBreakdown, loss_and_grad, total_loss

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Loss became NaN/Inf; ``report`` holds the run up to the last finite epoch."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class TrainConfig:
    variant: str = "classical"
    adam_epochs: int = 1000
    lbfgs_epochs: int = 100
    batch_size: Optional[int] = None  # None = full batch
    seed: int = 0
    geometry: Union[MixerSpec, str] = field(default_factory=MixerSpec)
    fluid: FluidParams = field(default_factory=FluidParams)
    loss_weights: tuple = (1.0,) * 7
    lr: float = 1e-3
    lr_decay: float = 1.0
    lbfgs_history: int = 10
    deterministic: bool = False
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.variant not in ("classical", "hybrid"):
            raise ValueError(f"variant must be 'classical' or 'hybrid', got {self.variant!r}")
        if self.adam_epochs < 0 or self.lbfgs_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("mini-batch size must be at least 1")
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        if len(self.loss_weights) != len(TERM_NAMES):
            raise ValueError(f"expected {len(TERM_NAMES)} loss weights, got {len(self.loss_weights)}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["loss_weights"] = list(self.loss_weights)
        if isinstance(self.geometry, str):
            d["geometry"] = {"csv": self.geometry}
        return d


@dataclass
class RunReport:
    history: list = field(default_factory=list)
    phases: list = field(default_factory=list)
    initial: Optional[LossBreakdown] = None
    final: Optional[LossBreakdown] = None
    params: Optional[ModelParams] = None
    checkpoint_path: Optional[str] = None
    duration: float = 0.0
    config: dict = field(default_factory=dict)
    diverged: bool = False
    message: str = ""
    lbfgs_failures: int = 0

    @property
    def epochs(self) -> int:
        return len(self.history)

    def summary(self) -> dict:
        return {
            "epochs": self.epochs,
            "phases": self.phases,
            "initial": self.initial.as_dict() if self.initial else None,
            "final": self.final.as_dict() if self.final else None,
            "checkpoint": self.checkpoint_path,
            "duration_s": self.duration,
            "diverged": self.diverged,
            "message": self.message,
            "lbfgs_failures": self.lbfgs_failures,
            "config": self.config,
        }


def resolve_geometry(geometry) -> PointCloud:
    if isinstance(geometry, PointCloud):
        return geometry
    if isinstance(geometry, (str, Path)):
        return load_csv(geometry)
    return generate_mixer(geometry)


@contextlib.contextmanager
def _thread_limit(deterministic: bool):
    if not deterministic:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        yield
        return
    with threadpool_limits(limits=1):
        yield


class _Run:
    """Mutable bookkeeping shared by the optimizer loops of one training run."""

    def __init__(self, params: ModelParams, cloud: PointCloud, config: TrainConfig, out_dir):
        self.template = params
        self.cloud = cloud
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.x = params.flat()
        self.last_good = self.x.copy()
        self.report = RunReport(config=config.to_dict())

    def lossgrad(self, x, cloud=None):
        b, g = loss_and_grad(
            self.template.with_flat(x), cloud if cloud is not None else self.cloud,
            self.config.fluid, self.config.loss_weights,
        )
        return b, g

    def evaluate(self, x) -> LossBreakdown:
        return total_loss(self.cloud, params=self.template.with_flat(x), fluid=self.config.fluid,
                          weights=self.config.loss_weights)

    def record(self, breakdown: LossBreakdown, phase: str) -> None:
        if not breakdown.is_finite():
            raise DivergenceError(f"non-finite loss at epoch {self.report.epochs} ({phase})")
        self.last_good = self.x.copy()
        self.report.history.append(breakdown)
        self.report.phases.append(phase)
        every = self.config.checkpoint_every
        if self.out_dir is not None and every and self.report.epochs % every == 0:
            save_checkpoint(self.template.with_flat(self.x), self.out_dir / f"checkpoint_{self.report.epochs}.json")

    def adam_full(self, epochs: int, state: AdamState) -> None:
        for _ in range(epochs):
            b, g = self.lossgrad(self.x)
            self.record(b, "adam")
            self.x = adam_step(state, self.x, g)

    def adam_minibatch(self, epochs: int, state: AdamState, batch_size: int) -> None:
        rng = np.random.default_rng(self.config.seed)
        n = len(self.cloud)
        for _ in range(epochs):
            self.record(self.evaluate(self.x), "adam-minibatch")
            order = rng.permutation(n)
            for start in range(0, n, batch_size):
                batch = self.cloud.subset(np.sort(order[start : start + batch_size]))
                with _quiet_empty_groups():
                    b, g = self.lossgrad(self.x, batch)
                if not b.is_finite():
                    raise DivergenceError(f"non-finite mini-batch loss in epoch {self.report.epochs}")
                self.x = adam_step(state, self.x, g)

    def lbfgs(self, epochs: int, state: LbfgsState) -> None:
        seen = {}

        def fn(x):
            b, g = self.lossgrad(x)
            seen[x.tobytes()] = (b, g)
            return b.total, g

        for _ in range(epochs):
            key = self.x.tobytes()
            if key not in seen:
                fn(self.x)
                state.n_evals += 1
            b, g = seen[key]
            self.record(b, "lbfgs")
            # hand the known loss/gradient to the optimizer so it is not recomputed
            state.x, state.f, state.g = self.x.copy(), b.total, g
            self.x = lbfgs_step(state, self.x, fn)
            key = self.x.tobytes()
            seen = {key: seen[key]} if key in seen else {}
        self.report.lbfgs_failures += state.failures


@contextlib.contextmanager
def _quiet_empty_groups():
    import warnings

    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="no .* points")
        yield


def _finish(run: _Run, start_time: float, out_dir) -> RunReport:
    report = run.report
    params = run.template.with_flat(run.last_good if report.diverged else run.x)
    report.params = params
    if not report.diverged:
        report.final = run.evaluate(run.x)
        if not report.final.is_finite():
            report.diverged = True
            report.message = "non-finite loss after the last step"
            params = run.template.with_flat(run.last_good)
            report.params = params
    report.initial = report.history[0] if report.history else report.final
    report.duration = time.perf_counter() - start_time
    if out_dir is not None:
        out = Path(out_dir)
        ckpt = out / f"checkpoint_{report.epochs}.json"
        save_checkpoint(params, ckpt, meta={"epochs": report.epochs, "diverged": report.diverged})
        report.checkpoint_path = str(ckpt)
        write_loss_csv(report.history, out / "loss.csv")
        with open(out / "report.json", "w") as fh:
            json.dump(report.summary(), fh, indent=2)
    return report


def _prepare_out(out_dir, config: TrainConfig):
    if out_dir is None:
        return None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.yaml", "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)
    return out


def _train(params: ModelParams, config: TrainConfig, out_dir=None, cloud=None) -> RunReport:
    start = time.perf_counter()
    out = _prepare_out(out_dir, config)
    cloud = cloud if cloud is not None else resolve_geometry(config.geometry)
    run = _Run(params, cloud, config, out)
    adam = AdamState(lr=config.lr, lr_decay=config.lr_decay)
    with _thread_limit(config.deterministic):
        try:
            if config.batch_size is None or config.batch_size >= len(cloud):
                run.adam_full(config.adam_epochs, adam)
            else:
                run.adam_minibatch(config.adam_epochs, adam, config.batch_size)
            run.lbfgs(config.lbfgs_epochs, LbfgsState(history_size=config.lbfgs_history))
        except DivergenceError as exc:
            run.report.diverged = True
            run.report.message = str(exc)
            log.error("training diverged: %s", exc)
        report = _finish(run, start, out)
    if report.diverged:
        raise DivergenceError(report.message, report)
    return report


def _check_arch(params: ModelParams, variant: str) -> None:
    if params.arch.variant != variant:
        raise ValueError(f"checkpoint holds a {params.arch.variant} model, config asks for {variant}")


def train_classical(config: TrainConfig, out_dir=None, init: Optional[ModelParams] = None, cloud=None) -> RunReport:
    """Full-batch Adam then L-BFGS (mini-batch Adam when ``batch_size`` is set)."""
    if config.variant != "classical":
        raise ValueError("train_classical needs variant='classical'")
    params = init if init is not None else init_params(config.seed, "classical")
    _check_arch(params, "classical")
    return _train(params.copy(), config, out_dir, cloud)


def train_hybrid(config: TrainConfig, pretrained_trunk: ModelParams, out_dir=None, cloud=None) -> RunReport:
    """Trunk from a classical model + VQC + 4->4 head, all trained jointly with Adam.

    A hybrid checkpoint is accepted too and resumes as is.
    """
    if config.variant != "hybrid":
        raise ValueError("train_hybrid needs variant='hybrid'")
    if pretrained_trunk.arch.variant == "hybrid":
        params = pretrained_trunk.copy()
    else:
        params = hybrid_from_classical(pretrained_trunk, config.seed)
    return _train(params, config, out_dir, cloud)


def transfer_learn(base: Union[ModelParams, str, Path], alphas, epochs_per_step: int,
                   config: Optional[TrainConfig] = None, out_dir=None) -> list:
    """Chain L-BFGS fine-tuning over a sequence of mixer angles.

    Each step regenerates the mixer at the next angle and starts from the
    previous step's parameters.
    """
    config = config or TrainConfig()
    params = base if isinstance(base, ModelParams) else load_checkpoint(base)
    _check_arch(params, config.variant)
    expected = Architecture(config.variant, params.arch.widths, params.arch.circuit)
    if params.arch != expected:
        raise ValueError("base checkpoint architecture does not match the configured variant")
    geom = config.geometry if isinstance(config.geometry, MixerSpec) else MixerSpec()
    reports = []
    for alpha in alphas:
        step_cfg = dataclasses.replace(
            config, geometry=dataclasses.replace(geom, alpha=float(alpha)),
            adam_epochs=0, lbfgs_epochs=int(epochs_per_step), batch_size=None,
        )
        step_dir = None if out_dir is None else Path(out_dir) / f"alpha_{_alpha_tag(alpha)}"
        report = _train(params.copy(), step_cfg, step_dir)
        report.config["initialized_from"] = "base" if not reports else reports[-1].checkpoint_path
        reports.append(report)
        params = report.params
    return reports


def _alpha_tag(alpha) -> str:
    a = float(alpha)
    return str(int(a)) if a.is_integer() else str(a).replace(".", "p")


@dataclass
class ComparisonReport:
    epochs: list
    loss_a: list
    loss_b: list
    final_a: float
    final_b: float
    relative_difference: float  # (a - b) / a
    truncated_a: bool = False
    truncated_b: bool = False

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _final_total(report: RunReport):
    totals = [b.total for b in report.history]
    if report.final is not None and math.isfinite(report.final.total) and not report.diverged:
        return report.final.total, False
    finite = [t for t in totals if math.isfinite(t)]
    if not finite:
        return float("nan"), True
    return finite[-1], True


def compare(report_a: RunReport, report_b: RunReport) -> ComparisonReport:
    """Align two loss curves and give the relative final-loss difference (a - b) / a."""
    fa, ta = _final_total(report_a)
    fb, tb = _final_total(report_b)
    n = min(report_a.epochs, report_b.epochs)
    rel = (fa - fb) / fa if fa not in (0.0,) and math.isfinite(fa) else float("nan")
    if fa == fb:
        rel = 0.0
    return ComparisonReport(
        epochs=list(range(n)),
        loss_a=[b.total for b in report_a.history[:n]],
        loss_b=[b.total for b in report_b.history[:n]],
        final_a=fa,
        final_b=fb,
        relative_difference=rel,
        truncated_a=ta,
        truncated_b=tb,
    )


def load_run(run_dir) -> RunReport:
    """Rebuild a report (without parameters) from a run directory."""
    run_dir = Path(run_dir)
    history = read_loss_csv(run_dir / "loss.csv")
    with open(run_dir / "report.json") as fh:
        summary = json.load(fh)
    final = LossBreakdown(**summary["final"]) if summary.get("final") else None
    initial = LossBreakdown(**summary["initial"]) if summary.get("initial") else None
    return RunReport(
        history=history,
        phases=summary.get("phases", []),
        initial=initial,
        final=final,
        checkpoint_path=summary.get("checkpoint"),
        duration=summary.get("duration_s", 0.0),
        config=summary.get("config", {}),
        diverged=summary.get("diverged", False),
        message=summary.get("message", ""),
    )
