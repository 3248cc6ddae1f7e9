"""Batch training drivers: steepest descent and quasi-Newton (BFGS).

Both drivers work on any objective over a flat parameter vector; the
``*_train`` wrappers plug in the structural error of a pattern set.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import CurvatureViolation, DivergenceDetected, NotDescentDirection
from .gradients import Batch, SupervisedPattern
from .network import NetworkParams

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class LineSearchConfig:
    c_armijo: float = 1e-4
    rho: float = 0.5
    max_backtracks: int = 30
    initial_step: float = 1.0

    def __post_init__(self):
        if not 0 < self.c_armijo < 1 or not 0 < self.rho < 1:
            raise ValueError("c_armijo and rho must lie in (0, 1)")
        if self.max_backtracks < 0 or self.initial_step <= 0:
            raise ValueError("max_backtracks >= 0 and initial_step > 0 required")


@dataclass
class EpochRecord:
    epoch: int
    error: float
    step: float
    grad_norm: float
    update: str  # "accepted", "skipped", "reset", "none"


@dataclass
class TrainReport:
    records: list[EpochRecord] = field(default_factory=list)
    stop_reason: str = ""
    optimizer: str = ""
    wall_time_s: float = 0.0

    @property
    def epochs(self) -> int:
        return self.records[-1].epoch if self.records else 0

    @property
    def final_error(self) -> float:
        return self.records[-1].error

    def to_records(self) -> list[dict]:
        out = [{"kind": "epoch", **asdict(r)} for r in self.records]
        out.append({
            "kind": "summary",
            "optimizer": self.optimizer,
            "epochs": self.epochs,
            "final_error": self.final_error if self.records else None,
            "stop_reason": self.stop_reason,
        })
        return out


@dataclass
class QntsState:
    H_inv: np.ndarray
    W_prev: np.ndarray
    G_prev: np.ndarray
    t: int = 0


class LineSearchResult(NamedTuple):
    step: float
    value: float
    backtracks: int
    exhausted: bool


def bfgs_update(H_inv: np.ndarray, dW: np.ndarray, dG: np.ndarray) -> np.ndarray:
    """BFGS inverse-Hessian update from a parameter step and gradient change.

    Written as the DFP update plus the rank-one correction
    ``(dG' H dG) u u'``.  The result is symmetrized and satisfies the secant
    condition ``H' dG = dW`` to round-off.
    """
    dW = np.asarray(dW, dtype=np.float64)
    dG = np.asarray(dG, dtype=np.float64)
    curvature = float(dW @ dG)
    if not curvature > 1e-10 * np.linalg.norm(dW) * np.linalg.norm(dG):
        raise CurvatureViolation(f"dW'dG = {curvature:.3e} fails the curvature condition")
    HdG = H_inv @ dG
    gHg = float(dG @ HdG)
    u = dW / curvature - HdG / gHg
    H = (H_inv + np.outer(dW, dW) / curvature - np.outer(HdG, HdG) / gHg
         + gHg * np.outer(u, u))
    return 0.5 * (H + H.T)


def backtracking_search(objective: Callable[[np.ndarray], float], W, direction, gradient,
                        config: LineSearchConfig = LineSearchConfig(),
                        f0: float | None = None) -> LineSearchResult:
    """Largest ``eta0 * rho**j`` meeting the Armijo sufficient-decrease test.

    Returns step 0 with ``exhausted=True`` when no trial step is accepted.
    """
    W = np.asarray(W, dtype=np.float64)
    slope = float(np.dot(gradient, direction))
    if not slope < 0:
        raise NotDescentDirection(f"directional derivative {slope:.3e} is not negative")
    if f0 is None:
        f0 = objective(W)
    eta = config.initial_step
    for j in range(config.max_backtracks + 1):
        value = objective(W + eta * direction)
        if math.isfinite(value) and value <= f0 + config.c_armijo * eta * slope:
            return LineSearchResult(eta, value, j, False)
        eta *= config.rho
    log.warning("line search exhausted after %d backtracks", config.max_backtracks)
    return LineSearchResult(0.0, f0, config.max_backtracks, True)


Objective = Callable[[np.ndarray], float]
ObjectiveGrad = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


def quasi_newton(fun: Objective, fun_grad: ObjectiveGrad, w0, max_epochs: int,
                 tolerance: float = 0.0, gtol: float = 0.0,
                 config: LineSearchConfig = LineSearchConfig(),
                 callback=None, fixed_step: float | None = None,
                 update_hessian: bool = True) -> tuple[np.ndarray, TrainReport, QntsState]:
    """BFGS with backtracking line search, starting from H = I.

    The first step is plain steepest descent.  After each step the gradient
    change updates the inverse Hessian (skipped when the curvature condition
    fails) and the next direction is ``-H G``.  If the line search cannot
    make progress along ``-H G`` the approximation is reset to I once before
    giving up.

    ``fixed_step`` replaces the line search and ``update_hessian=False``
    freezes H = I; together they degenerate to plain steepest descent.
    """
    start = time.perf_counter()
    W = np.array(w0, dtype=np.float64)
    f, G = fun_grad(W)
    report = TrainReport(optimizer="qnts")
    report.records.append(EpochRecord(0, f, 0.0, float(np.linalg.norm(G)), "none"))
    state = QntsState(np.eye(W.size), W.copy(), G.copy(), 0)
    if _done(f, G, tolerance, gtol, report):
        report.wall_time_s = time.perf_counter() - start
        return W, report, state

    H = state.H_inv
    d = -G
    report.stop_reason = "max_epochs"
    for t in range(1, max_epochs + 1):
        if fixed_step is not None:
            ls = LineSearchResult(fixed_step, math.nan, 0, False)
        else:
            ls = backtracking_search(fun, W, d, G, config, f0=f)
        update = "accepted" if update_hessian else "none"
        if ls.exhausted and not _is_identity(H):
            H = np.eye(W.size)
            d = -G
            update = "reset"
            ls = backtracking_search(fun, W, d, G, config, f0=f)
        if ls.exhausted:
            report.stop_reason = "line_search_failed"
            break
        W_new = W + ls.step * d
        f_new, G_new = fun_grad(W_new)
        if not math.isfinite(f_new):
            raise DivergenceDetected("objective became non-finite")
        dW, dG = W_new - W, G_new - G
        if update_hessian:
            try:
                H = bfgs_update(H, dW, dG)
            except CurvatureViolation:
                update = "skipped"
        W, f, G = W_new, f_new, G_new
        state = QntsState(H, W - dW, G - dG, t)
        d = -H @ G
        if not float(d @ G) < 0:
            H = np.eye(W.size)
            d = -G
            update = "reset"
        report.records.append(EpochRecord(t, f, ls.step, float(np.linalg.norm(G)), update))
        if callback is not None:
            callback(t, W, f)
        if _done(f, G, tolerance, gtol, report):
            break
    state.H_inv = H
    report.wall_time_s = time.perf_counter() - start
    return W, report, state


def gradient_descent(fun_grad: ObjectiveGrad, w0, max_epochs: int, learning_rate: float,
                     tolerance: float = 0.0, gtol: float = 0.0,
                     callback=None) -> tuple[np.ndarray, TrainReport]:
    """Fixed-step batch steepest descent ``W <- W - eta G``."""
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    start = time.perf_counter()
    W = np.array(w0, dtype=np.float64)
    f, G = fun_grad(W)
    report = TrainReport(optimizer="bpts")
    report.records.append(EpochRecord(0, f, 0.0, float(np.linalg.norm(G)), "none"))
    report.stop_reason = "max_epochs"
    if not _done(f, G, tolerance, gtol, report):
        for t in range(1, max_epochs + 1):
            W = W - learning_rate * G
            f, G = fun_grad(W)
            if not math.isfinite(f) or f > DIVERGENCE_LIMIT:
                raise DivergenceDetected(f"error {f:.3e} at epoch {t}")
            report.records.append(
                EpochRecord(t, f, learning_rate, float(np.linalg.norm(G)), "accepted"))
            if callback is not None:
                callback(t, W, f)
            if _done(f, G, tolerance, gtol, report):
                break
    report.wall_time_s = time.perf_counter() - start
    return W, report


def _done(f, G, tolerance, gtol, report) -> bool:
    if f <= tolerance:
        report.stop_reason = "tolerance"
        return True
    if np.linalg.norm(G) <= gtol:
        report.stop_reason = "gradient"
        return True
    return False


def _is_identity(H) -> bool:
    return bool(np.array_equal(H, np.eye(H.shape[0])))


def qnts_train(dataset: Sequence[SupervisedPattern], params: NetworkParams, max_epochs: int,
               tolerance: float = 0.0, config: LineSearchConfig = LineSearchConfig(),
               callback=None) -> tuple[NetworkParams, TrainReport]:
    batch = Batch(dataset, params.arch)
    W, report, _ = quasi_newton(batch.error, batch.error_and_gradient, params.vector,
                                max_epochs, tolerance, config=config, callback=callback)
    return params.with_vector(W), report


def bpts_train(dataset: Sequence[SupervisedPattern], params: NetworkParams, max_epochs: int,
               learning_rate: float, tolerance: float = 0.0,
               callback=None) -> tuple[NetworkParams, TrainReport]:
    batch = Batch(dataset, params.arch)
    W, report = gradient_descent(batch.error_and_gradient, params.vector, max_epochs,
                                 learning_rate, tolerance, callback=callback)
    return params.with_vector(W), report
