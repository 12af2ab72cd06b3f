"""
Approximate EM baseline.

Dropping the one-to-one constraint makes the match indicators independent
Bernoulli variables given the pose, so the E-step is p_jk = w_jk / (1 + w_jk)
and the M-step maximises
    log[|A|^n p(A) p(tau) p(sigma)] + sum_jk p_jk log w_jk(A, tau, sigma)
numerically. The quantity that EM climbs is the pose marginal
    log[|A|^n p(A) p(tau) p(sigma)] + sum_jk log(1 + w_jk).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from . import geometry, model
from .errors import InputValidationError
from .model import Configuration, Hyperparams, PoseParams

logger = logging.getLogger(__name__)

EM_TOLERANCE = 1e-8
ASCENT_TOLERANCE = 1e-10
_P_LOW = np.finfo(float).tiny
_P_HIGH = np.nextafter(1.0, 0.0)
_THETA13_BOUND = geometry.HALF_PI - 1e-9


@dataclass(eq=False)
class SoftMatchTable:
    """Soft match responsibilities; no row or column constraint."""
    p: np.ndarray

    def hard(self, threshold: float = 0.5) -> List[tuple]:
        j, k = np.nonzero(self.p > threshold)
        return list(zip(j.tolist(), k.tolist()))


@dataclass
class MStepResult:
    pose: PoseParams
    objective: float
    # True when the optimiser stopped without converging or found no improvement
    warning: bool = False


@dataclass
class EMResult:
    pose: PoseParams
    table: SoftMatchTable
    objective_trace: List[float]
    iterations: int
    converged: bool
    warnings: int = 0
    ascent_violations: List[int] = field(default_factory=list)


def em_e_step(pose: PoseParams, x: Configuration, y: Configuration, hyper: Hyperparams) -> SoftMatchTable:
    log_w = model.pair_log_weight_matrix(x, y, pose, hyper)
    return SoftMatchTable(np.clip(expit(log_w), _P_LOW, _P_HIGH))


def em_objective(
    table: SoftMatchTable,
    pose: PoseParams,
    x: Configuration,
    y: Configuration,
    hyper: Hyperparams,
    sample_rotation: bool = False,
) -> float:
    log_w = model.pair_log_weight_matrix(x, y, pose, hyper)
    return model.log_pose_prior(pose, y.size, hyper, sample_rotation) + float(np.sum(table.p * log_w))


def em_marginal(
    pose: PoseParams,
    x: Configuration,
    y: Configuration,
    hyper: Hyperparams,
    sample_rotation: bool = False,
) -> float:
    log_w = model.pair_log_weight_matrix(x, y, pose, hyper)
    return model.log_pose_prior(pose, y.size, hyper, sample_rotation) + float(np.sum(np.logaddexp(0.0, log_w)))


class _PoseVector:
    """Flat parameter vector (tau, [log sigma], [angles]) for the optimiser."""

    def __init__(self, pose: PoseParams, sample_rotation: bool, fix_sigma: bool):
        self.d = pose.dim
        self.sample_rotation = sample_rotation
        self.fix_sigma = fix_sigma
        self.fixed_A = pose.A.copy()
        self.fixed_sigma = pose.sigma

    def pack(self, pose: PoseParams) -> np.ndarray:
        parts = [pose.tau]
        if not self.fix_sigma:
            parts.append([math.log(pose.sigma)])
        if self.sample_rotation:
            if self.d == 2:
                parts.append([math.atan2(pose.A[1, 0], pose.A[0, 0])])
            else:
                parts.append(geometry.euler_angles_from_matrix(pose.A).as_tuple())
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])

    def unpack(self, v: np.ndarray) -> PoseParams:
        d = self.d
        tau = v[:d]
        i = d
        if self.fix_sigma:
            sigma = self.fixed_sigma
        else:
            sigma = math.exp(v[i])
            i += 1
        if not self.sample_rotation:
            A = self.fixed_A
        elif d == 2:
            A = geometry.rotation_matrix_2d(v[i])
        else:
            A = geometry.EulerAngles3(v[i], v[i + 1], v[i + 2]).matrix()
        return PoseParams(A, tau, sigma)

    def bounds(self) -> list:
        bounds = [(None, None)] * self.d
        if not self.fix_sigma:
            bounds.append((-30.0, 30.0))
        if self.sample_rotation:
            if self.d == 2:
                bounds.append((None, None))
            else:
                bounds += [(None, None), (-_THETA13_BOUND, _THETA13_BOUND), (None, None)]
        return bounds


def em_m_step(
    table: SoftMatchTable,
    x: Configuration,
    y: Configuration,
    hyper: Hyperparams,
    pose: PoseParams,
    sample_rotation: bool = False,
    fix_sigma: bool = False,
    max_iter: int = 500,
) -> MStepResult:
    """
    L-BFGS-B over tau, log sigma and (when sampled) the rotation angles. A
    result worse than the starting pose is discarded and flagged.
    """
    vec = _PoseVector(pose, sample_rotation, fix_sigma)
    start = vec.pack(pose)
    start_value = em_objective(table, pose, x, y, hyper, sample_rotation)

    def negative(v: np.ndarray) -> float:
        return -em_objective(table, vec.unpack(v), x, y, hyper, sample_rotation)

    result = minimize(
        negative, start, method="L-BFGS-B", bounds=vec.bounds(),
        options={"maxiter": max_iter, "ftol": 1e-14, "gtol": 1e-9},
    )
    value = -float(result.fun)
    if not np.isfinite(value) or value < start_value:
        logger.warning("EM M-step found no improvement (%s); keeping the current pose", result.message)
        return MStepResult(pose.copy(), start_value, warning=True)

    return MStepResult(vec.unpack(result.x), value, warning=not result.success)


def run_em(
    x: Configuration,
    y: Configuration,
    hyper: Hyperparams,
    init_pose: PoseParams,
    max_iters: int = 100,
    sample_rotation: bool = False,
    fix_sigma: bool = False,
    tol: float = EM_TOLERANCE,
) -> EMResult:
    if x.dim != y.dim:
        raise InputValidationError(f"configurations differ in dimension: x is {x.dim}D, y is {y.dim}D")
    if max_iters < 0:
        raise InputValidationError("max_iters must be non-negative")

    pose = init_pose.copy()
    trace = [em_marginal(pose, x, y, hyper, sample_rotation)]
    table = em_e_step(pose, x, y, hyper)
    warnings = 0
    violations: List[int] = []
    converged = False
    iterations = 0

    for it in range(1, max_iters + 1):
        step = em_m_step(table, x, y, hyper, pose, sample_rotation, fix_sigma)
        warnings += int(step.warning)
        pose = step.pose
        table = em_e_step(pose, x, y, hyper)
        trace.append(em_marginal(pose, x, y, hyper, sample_rotation))
        iterations = it

        change = trace[-1] - trace[-2]
        if change < -ASCENT_TOLERANCE * max(1.0, abs(trace[-2])):
            violations.append(it)
            logger.warning("EM objective decreased by %.3g at iteration %d", -change, it)
        if abs(change) < tol:
            converged = True
            break

    logger.info(
        "EM finished after %d iterations (converged=%s), objective %.6f",
        iterations, converged, trace[-1],
    )
    return EMResult(pose, table, trace, iterations, converged, warnings, violations)
