"""Adam and L-BFGS over flat parameter vectors."""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

log = logging.getLogger(__name__)

__all__ = ["AdamState", "adam_step", "LbfgsState", "lbfgs_step", "strong_wolfe"]


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_decay: float = 1.0  # per-step exponential factor; 1.0 disables the schedule
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    step_count: int = 0

    def current_lr(self) -> float:
        return self.lr * self.lr_decay**self.step_count

    def reset(self) -> None:
        self.m = self.v = None
        self.step_count = 0


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise ValueError(f"parameter shape {params.shape} does not match gradient shape {grad.shape}")
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    elif state.m.shape != params.shape:
        raise ValueError("optimizer state was built for a different parameter vector")
    lr = state.current_lr()
    state.step_count += 1
    t = state.step_count
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**t)
    v_hat = state.v / (1.0 - state.beta2**t)
    return params - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def _cubic_min(x1, f1, g1, x2, f2, g2, lo, hi):
    """Minimizer of the cubic through two points with slopes, clipped to [lo, hi]."""
    d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2)
    sq = d1 * d1 - g1 * g2
    if sq >= 0.0:
        d2 = np.sqrt(sq) * np.sign(x2 - x1)
        denom = g2 - g1 + 2.0 * d2
        if denom != 0.0:
            x = x2 - (x2 - x1) * (g2 + d2 - d1) / denom
            if np.isfinite(x):
                return min(max(x, lo), hi)
    return 0.5 * (lo + hi)


@dataclass
class _LineResult:
    t: float
    f: float
    g: np.ndarray
    evals: int
    wolfe: bool


def strong_wolfe(phi: Callable, f0: float, g0: np.ndarray, d: np.ndarray, t_init: float = 1.0,
                 c1: float = 1e-4, c2: float = 0.9, max_evals: int = 25) -> Optional[_LineResult]:
    """Bracketing + zoom line search for the strong Wolfe conditions.

    ``phi(t)`` returns ``(f, grad)`` at ``x + t d``. Returns None when no trial
    achieved sufficient decrease within ``max_evals`` evaluations.
    """
    dphi0 = float(g0 @ d)
    evals = 0
    best: Optional[_LineResult] = None

    def evaluate(t):
        nonlocal evals, best
        f, g = phi(t)
        evals += 1
        f = float(f)
        dphi = float(g @ d)
        if np.isfinite(f) and f <= f0 + c1 * t * dphi0 and (best is None or f < best.f):
            best = _LineResult(t, f, g, evals, False)
        return f, g, dphi

    def armijo_fallback():
        if best is None:
            return None
        best.evals = evals
        return best

    t_prev, f_prev, dphi_prev = 0.0, f0, dphi0
    t = t_init
    lo = hi = None
    while evals < max_evals:
        f, g, dphi = evaluate(t)
        if not np.isfinite(f) or f > f0 + c1 * t * dphi0 or (t_prev > 0 and f >= f_prev):
            lo, hi = (t_prev, f_prev, dphi_prev), (t, f, dphi)
            break
        if abs(dphi) <= -c2 * dphi0:
            return _LineResult(t, f, g, evals, True)
        if dphi >= 0:
            lo, hi = (t, f, dphi), (t_prev, f_prev, dphi_prev)
            break
        t_next = _cubic_min(t_prev, f_prev, dphi_prev, t, f, dphi, t + 0.01 * (t - t_prev), 10.0 * t)
        t_prev, f_prev, dphi_prev = t, f, dphi
        t = t_next
    else:
        return armijo_fallback()

    # zoom phase: lo always satisfies sufficient decrease and has the lowest f so far
    while evals < max_evals:
        (tl, fl, gl), (th, fh, gh) = lo, hi
        width = abs(th - tl)
        if width < 1e-16 * max(1.0, abs(tl)):
            break
        a, b = min(tl, th), max(tl, th)
        if np.isfinite(fh):
            t = _cubic_min(tl, fl, gl, th, fh, gh, a + 0.1 * width, b - 0.1 * width)
        else:
            t = 0.5 * (a + b)
        f, g, dphi = evaluate(t)
        if not np.isfinite(f) or f > f0 + c1 * t * dphi0 or f >= fl:
            hi = (t, f, dphi)
        else:
            if abs(dphi) <= -c2 * dphi0:
                return _LineResult(t, f, g, evals, True)
            if dphi * (th - tl) >= 0:
                hi = lo
            lo = (t, f, dphi)
    return armijo_fallback()


@dataclass
class LbfgsState:
    history_size: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    max_evals: int = 25
    s_hist: deque = field(default_factory=deque)
    y_hist: deque = field(default_factory=deque)
    x: Optional[np.ndarray] = None
    f: Optional[float] = None
    g: Optional[np.ndarray] = None
    n_iter: int = 0
    n_evals: int = 0
    failures: int = 0
    last_direction: Optional[np.ndarray] = None

    def clear_history(self) -> None:
        self.s_hist.clear()
        self.y_hist.clear()


def _two_loop(g: np.ndarray, s_hist, y_hist) -> np.ndarray:
    q = g.copy()
    alphas = []
    rhos = [1.0 / float(y @ s) for s, y in zip(s_hist, y_hist)]
    for s, y, rho in reversed(list(zip(s_hist, y_hist, rhos))):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rhos), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def lbfgs_step(state: LbfgsState, params: np.ndarray, loss_fn: Callable) -> np.ndarray:
    """One L-BFGS iteration. ``loss_fn(x)`` returns ``(loss, grad)``.

    The loss/gradient at the incoming point is reused from the previous call
    when ``params`` is unchanged.
    """
    x = np.asarray(params, dtype=np.float64)
    if state.x is None or state.g is None or not np.array_equal(state.x, x):
        f, g = loss_fn(x)
        state.n_evals += 1
        state.x, state.f, state.g = x.copy(), float(f), np.asarray(g, dtype=np.float64)
    f, g = state.f, state.g
    state.n_iter += 1
    if not np.any(g):
        state.last_direction = np.zeros_like(g)
        return x

    d = _two_loop(g, state.s_hist, state.y_hist)
    if not float(g @ d) < 0.0:
        state.clear_history()
        d = -g
    if state.s_hist:
        t0 = 1.0
    else:
        t0 = min(1.0, 1.0 / max(float(np.linalg.norm(g)), 1e-300))
    state.last_direction = d

    res = strong_wolfe(lambda t: loss_fn(x + t * d), f, g, d, t0, state.c1, state.c2, state.max_evals)
    if res is None:
        state.n_evals += state.max_evals
        state.failures += 1
        state.clear_history()
        log.warning("L-BFGS line search failed after %d evaluations; step skipped", state.max_evals)
        return x
    state.n_evals += res.evals
    x_new = x + res.t * d
    g_new = np.asarray(res.g, dtype=np.float64)
    s, y = x_new - x, g_new - g
    if float(s @ y) > 1e-10 * float(np.linalg.norm(s) * np.linalg.norm(y)):
        state.s_hist.append(s)
        state.y_hist.append(y)
        while len(state.s_hist) > state.history_size:
            state.s_hist.popleft()
            state.y_hist.popleft()
    state.x, state.f, state.g = x_new.copy(), res.f, g_new
    return x_new
