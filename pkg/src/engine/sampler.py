"""
MCMC over (M, tau, sigma, A).

One sweep makes several Metropolis-Hastings updates of the matching matrix
(add / delete / switch a match), then Gibbs draws of tau and sigma, then, when
the rotation is sampled, a von Mises Gibbs draw (2D) or the Euler-angle
update (3D: Gibbs for theta12 and theta23, random-walk Metropolis for theta13).

A ChainState is owned by a single chain and is updated in place; every update
function also returns it so calls can be chained.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from . import geometry, model
from .errors import InputValidationError
from .geometry import EulerAngles3
from .model import UNMATCHED, Configuration, Hyperparams, MatchingMatrix, PoseParams

logger = logging.getLogger(__name__)

MOVE_TYPES = ("add", "delete", "switch", "theta13")

# tolerance for the periodic cached-vs-recomputed log-joint check
LOG_JOINT_TOLERANCE = 1e-6


@dataclass
class SweepSchedule:
    """
    sweeps counts every sweep including burn-in; samples are retained at
    burn_in + thin, burn_in + 2 thin, ... <= sweeps.
    """
    sweeps: int
    burn_in: int = 0
    thin: int = 1
    m_updates_per_sweep: int = 1
    sample_rotation: bool = False
    seed: int = 0
    theta13_half_width: float = 0.1
    check_every: int = 10_000

    def __post_init__(self):
        if self.m_updates_per_sweep < 1:
            raise InputValidationError("m_updates_per_sweep must be at least 1")
        if self.thin < 1:
            raise InputValidationError("thin must be at least 1")
        if self.burn_in < 0:
            raise InputValidationError("burn_in must be non-negative")
        if self.sweeps < self.burn_in:
            raise InputValidationError(f"sweeps ({self.sweeps}) must not be less than burn_in ({self.burn_in})")
        if not self.theta13_half_width > 0:
            raise InputValidationError("theta13_half_width must be positive")
        if self.check_every < 1:
            raise InputValidationError("check_every must be at least 1")

    @property
    def retained_count(self) -> int:
        return (self.sweeps - self.burn_in) // self.thin


@dataclass
class MoveStats:
    proposed: Dict[str, int] = field(default_factory=lambda: {t: 0 for t in MOVE_TYPES})
    accepted: Dict[str, int] = field(default_factory=lambda: {t: 0 for t in MOVE_TYPES})
    # proposals that could not be formed (no free point on the other side)
    null: Dict[str, int] = field(default_factory=lambda: {t: 0 for t in MOVE_TYPES})
    # selections of a pinned point; not proposals
    pinned: int = 0

    def record(self, move: str, accepted: bool, null: bool = False) -> None:
        self.proposed[move] += 1
        if null:
            self.null[move] += 1
        elif accepted:
            self.accepted[move] += 1

    def rates(self) -> Dict[str, Optional[float]]:
        return {
            t: (self.accepted[t] / self.proposed[t] if self.proposed[t] else None)
            for t in MOVE_TYPES
        }

    def as_dict(self) -> Dict[str, object]:
        return {
            "proposed": dict(self.proposed),
            "accepted": dict(self.accepted),
            "null": dict(self.null),
            "pinned_selections": self.pinned,
            "rates": self.rates(),
        }

    def copy(self) -> "MoveStats":
        return MoveStats(dict(self.proposed), dict(self.accepted), dict(self.null), self.pinned)


class _FreeSet:
    """Unmatched indices on one side, with O(1) insert, delete and uniform choice."""
    __slots__ = ("items", "pos")

    def __init__(self, size: int, members: Sequence[int]):
        self.items = list(members)
        self.pos = [-1] * size
        for i, v in enumerate(self.items):
            self.pos[v] = i

    def __len__(self) -> int:
        return len(self.items)

    def add(self, v: int) -> None:
        self.pos[v] = len(self.items)
        self.items.append(v)

    def remove(self, v: int) -> None:
        i = self.pos[v]
        last = self.items.pop()
        if last != v:
            self.items[i] = last
            self.pos[last] = i
        self.pos[v] = -1

    def choice(self, u: float) -> int:
        return self.items[min(int(u * len(self.items)), len(self.items) - 1)]

    def copy(self) -> "_FreeSet":
        clone = _FreeSet.__new__(_FreeSet)
        clone.items = list(self.items)
        clone.pos = list(self.pos)
        return clone


class _MatchSums:
    """
    Sufficient statistics of the matched pairs: with them the squared residual
    sum for any (A, tau) costs O(d^3) instead of O(L d).
    """
    __slots__ = ("L", "sx", "sy", "sxx", "syy", "sxy", "colour")

    def __init__(self, d: int):
        self.L = 0
        self.sx = np.zeros(d)
        self.sy = np.zeros(d)
        self.sxx = 0.0
        self.syy = np.zeros((d, d))
        self.sxy = np.zeros((d, d))
        self.colour = 0.0

    @classmethod
    def from_pairs(cls, pairs, x: Configuration, y: Configuration, colour) -> "_MatchSums":
        sums = cls(x.dim)
        for j, k in pairs:
            sums.update(x.points[j], y.points[k], 1.0, colour[j][k] if colour else 0.0)
        return sums

    def update(self, xj: np.ndarray, yk: np.ndarray, sign: float, colour: float) -> None:
        self.L += int(sign)
        if self.L == 0:
            # drop the rounding residue so an empty matching sees the prior exactly
            self.clear()
            return
        self.sx += sign * xj
        self.sy += sign * yk
        self.sxx += sign * float(xj @ xj)
        self.syy += sign * np.outer(yk, yk)
        self.sxy += sign * np.outer(xj, yk)
        self.colour += sign * colour

    def clear(self) -> None:
        self.L = 0
        self.sx[:] = 0.0
        self.sy[:] = 0.0
        self.sxx = 0.0
        self.syy[:] = 0.0
        self.sxy[:] = 0.0
        self.colour = 0.0

    def residual_sum(self, A: np.ndarray) -> np.ndarray:
        """sum over matches of (x_j - A y_k)."""
        return self.sx - A @ self.sy

    def squared_residual(self, A: np.ndarray, tau: np.ndarray) -> float:
        """sum over matches of ||x_j - A y_k - tau||^2."""
        if self.L == 0:
            return 0.0
        r1 = self.residual_sum(A)
        s2 = (
            self.sxx
            - 2.0 * float(np.sum(A * self.sxy))
            + float(np.sum((A.T @ A) * self.syy))
            - 2.0 * float(tau @ r1)
            + self.L * float(tau @ tau)
        )
        return max(s2, 0.0)

    def cross(self, tau: np.ndarray) -> np.ndarray:
        """sum over matches of (x_j - tau) y_k^T."""
        return self.sxy - np.outer(tau, self.sy)

    def copy(self) -> "_MatchSums":
        clone = _MatchSums.__new__(_MatchSums)
        clone.L = self.L
        clone.sx = self.sx.copy()
        clone.sy = self.sy.copy()
        clone.sxx = self.sxx
        clone.syy = self.syy.copy()
        clone.sxy = self.sxy.copy()
        clone.colour = self.colour
        return clone


class _PairWeights:
    """Per-pair log weights at the current pose, evaluated lazily in plain Python."""

    def __init__(self, x: Configuration, y: Configuration, hyper: Hyperparams):
        self.key = (id(x), id(y), id(hyper))
        self.hyper = hyper
        self.d = x.dim
        self.x_rows = x.points.tolist()
        self.y_points = y.points
        self.colour = (
            model.colour_affinity_matrix(x, y, hyper).tolist()
            if (x.has_colours and y.has_colours and hyper.has_colour_effect)
            else None
        )
        self.shifted: List[List[float]] = []
        self.const = 0.0
        self.inv_four_var = 0.0
        self.fresh = False

    def refresh(self, pose: PoseParams) -> None:
        self.shifted = (self.y_points @ pose.A.T + pose.tau).tolist()
        self.const = model.pair_log_constant(self.d, pose.sigma, self.hyper)
        self.inv_four_var = 1.0 / (4.0 * pose.sigma ** 2)
        self.fresh = True

    def __call__(self, j: int, k: int) -> float:
        sq = 0.0
        for a, b in zip(self.x_rows[j], self.shifted[k]):
            sq += (a - b) * (a - b)
        lw = self.const - sq * self.inv_four_var
        if self.colour is not None:
            lw += self.colour[j][k]
        return lw


@dataclass(eq=False)
class ChainState:
    """
    Current state of one chain. rotation is None when A is held fixed, the
    angle theta in 2D, or the EulerAngles3 in 3D. n_u = number of unmatched y points.
    """
    match_of_x: List[int]
    match_of_y: List[int]
    pose: PoseParams
    rotation: Optional[Union[float, EulerAngles3]]
    pinned_x: FrozenSet[int] = frozenset()
    pinned_y: FrozenSet[int] = frozenset()
    log_joint: float = float("nan")
    stats: MoveStats = field(default_factory=MoveStats)
    _free_x: Optional[_FreeSet] = None
    _free_y: Optional[_FreeSet] = None
    _sums: Optional[_MatchSums] = None
    _weights: Optional[_PairWeights] = None
    # n log|det A|; constant along a chain since sampled A are rotations
    _n_logdet: float = 0.0

    @property
    def rotation_sampled(self) -> bool:
        return self.rotation is not None

    @property
    def n_u(self) -> int:
        return len(self._free_y)

    @property
    def L(self) -> int:
        return self._sums.L

    @property
    def matching(self) -> MatchingMatrix:
        return MatchingMatrix(tuple(self.match_of_x), len(self.match_of_y))

    def pairs(self) -> List[Tuple[int, int]]:
        return [(j, k) for j, k in enumerate(self.match_of_x) if k != UNMATCHED]

    def angles(self) -> Tuple[float, ...]:
        if self.rotation is None:
            return ()
        if isinstance(self.rotation, EulerAngles3):
            return self.rotation.as_tuple()
        return (float(self.rotation),)

    def copy(self) -> "ChainState":
        return ChainState(
            match_of_x=list(self.match_of_x),
            match_of_y=list(self.match_of_y),
            pose=self.pose.copy(),
            rotation=self.rotation,
            pinned_x=self.pinned_x,
            pinned_y=self.pinned_y,
            log_joint=self.log_joint,
            stats=self.stats.copy(),
            _free_x=self._free_x.copy() if self._free_x is not None else None,
            _free_y=self._free_y.copy() if self._free_y is not None else None,
            _sums=self._sums.copy() if self._sums is not None else None,
            _n_logdet=self._n_logdet,
        )


# ---------- CACHES ----------

def _weights(state: ChainState, x: Configuration, y: Configuration, hyper: Hyperparams) -> _PairWeights:
    w = state._weights
    if w is None or w.key != (id(x), id(y), id(hyper)):
        w = state._weights = _PairWeights(x, y, hyper)
    if not w.fresh:
        w.refresh(state.pose)
    return w


def _pose_changed(state: ChainState) -> None:
    if state._weights is not None:
        state._weights.fresh = False


def resync(state: ChainState, x: Configuration, y: Configuration, hyper: Hyperparams) -> ChainState:
    """Rebuilds every cache of the state from scratch, including log_joint."""
    m, n = x.size, y.size
    state._free_x = _FreeSet(m, [j for j in range(m) if state.match_of_x[j] == UNMATCHED])
    state._free_y = _FreeSet(n, [k for k in range(n) if state.match_of_y[k] == UNMATCHED])
    state._weights = None
    colour = _weights(state, x, y, hyper).colour
    state._sums = _MatchSums.from_pairs(state.pairs(), x, y, colour)
    state._n_logdet = y.size * float(np.linalg.slogdet(state.pose.A)[1])
    state.log_joint = model.log_joint(state.matching, state.pose, x, y, hyper, state.rotation_sampled)
    return state


def _refresh_log_joint(state: ChainState, y: Configuration, hyper: Hyperparams) -> None:
    pose = state.pose
    sums = state._sums
    total = state._n_logdet + model.log_prior_tau(pose.tau, hyper) + model.log_prior_sigma(pose.sigma, hyper)
    if state.rotation_sampled:
        total += model.log_prior_rotation(pose.A, hyper)
    if sums.L:
        total += (
            sums.L * model.pair_log_constant(pose.dim, pose.sigma, hyper)
            - sums.squared_residual(pose.A, pose.tau) / (4.0 * pose.sigma ** 2)
            + sums.colour
        )
    state.log_joint = total


def _link(state: ChainState, x: Configuration, y: Configuration, j: int, k: int, lw: float, colour) -> None:
    assert state.match_of_x[j] == UNMATCHED and state.match_of_y[k] == UNMATCHED
    state.match_of_x[j] = k
    state.match_of_y[k] = j
    state._free_x.remove(j)
    state._free_y.remove(k)
    state._sums.update(x.points[j], y.points[k], 1.0, colour[j][k] if colour else 0.0)
    state.log_joint += lw


def _unlink(state: ChainState, x: Configuration, y: Configuration, j: int, k: int, lw: float, colour) -> None:
    assert state.match_of_x[j] == k and state.match_of_y[k] == j
    state.match_of_x[j] = UNMATCHED
    state.match_of_y[k] = UNMATCHED
    state._free_x.add(j)
    state._free_y.add(k)
    state._sums.update(x.points[j], y.points[k], -1.0, colour[j][k] if colour else 0.0)
    state.log_joint -= lw


# ---------- ACCEPTANCE RATIOS ----------

def log_accept_add(log_weight: float, p_star: float, n_free_other: int) -> float:
    """Adding a match proposed from one side, with n_free_other unmatched points on the other side."""
    return log_weight + math.log(p_star * n_free_other)


def log_accept_delete(log_weight: float, p_star: float, n_free_other_after: int) -> float:
    """Deleting a match; n_free_other_after counts the other side's unmatched points after deletion."""
    return -log_weight - math.log(p_star * n_free_other_after)


def log_accept_switch(log_weight_new: float, log_weight_old: float) -> float:
    return log_weight_new - log_weight_old


def _accept(log_ratio: float, rng: np.random.Generator) -> bool:
    return log_ratio >= 0.0 or rng.random() < math.exp(log_ratio)


# ---------- UPDATES ----------

def update_matching(
    state: ChainState,
    x: Configuration,
    y: Configuration,
    hyper: Hyperparams,
    rng: np.random.Generator,
) -> ChainState:
    """
    One Metropolis-Hastings proposal on M. A data point is chosen uniformly
    from all m + n; an unmatched point proposes a match to a uniformly chosen
    unmatched point on the other side, a matched point proposes deletion with
    probability p_star and otherwise a switch of its partner.
    """
    m, n = x.size, y.size
    if m + n == 0:
        return state
    w = _weights(state, x, y, hyper)
    colour = w.colour
    p_star = hyper.p_star

    i = min(int(rng.random() * (m + n)), m + n - 1)
    from_x = i < m
    point = i if from_x else i - m

    if (state.pinned_x if from_x else state.pinned_y).__contains__(point):
        state.stats.pinned += 1
        return state

    partner = state.match_of_x[point] if from_x else state.match_of_y[point]
    free_other = state._free_y if from_x else state._free_x

    def weight(p: int, q: int) -> float:
        # p on the chosen side, q on the other
        return w(p, q) if from_x else w(q, p)

    def pair(p: int, q: int) -> Tuple[int, int]:
        return (p, q) if from_x else (q, p)

    if partner == UNMATCHED:
        if len(free_other) == 0:
            state.stats.record("add", False, null=True)
            return state
        new = free_other.choice(rng.random())
        lw = weight(point, new)
        accepted = _accept(log_accept_add(lw, p_star, len(free_other)), rng)
        if accepted:
            _link(state, x, y, *pair(point, new), lw, colour)
        state.stats.record("add", accepted)
        return state

    if rng.random() < p_star:
        lw = weight(point, partner)
        accepted = _accept(log_accept_delete(lw, p_star, len(free_other) + 1), rng)
        if accepted:
            _unlink(state, x, y, *pair(point, partner), lw, colour)
        state.stats.record("delete", accepted)
        return state

    if len(free_other) == 0 or (state.pinned_y if from_x else state.pinned_x).__contains__(partner):
        state.stats.record("switch", False, null=True)
        return state
    new = free_other.choice(rng.random())
    lw_old = weight(point, partner)
    lw_new = weight(point, new)
    accepted = _accept(log_accept_switch(lw_new, lw_old), rng)
    if accepted:
        _unlink(state, x, y, *pair(point, partner), lw_old, colour)
        _link(state, x, y, *pair(point, new), lw_new, colour)
    state.stats.record("switch", accepted)
    return state


def gibbs_update_tau(
    state: ChainState,
    x: Configuration,
    y: Configuration,
    hyper: Hyperparams,
    rng: np.random.Generator,
) -> ChainState:
    """tau | rest ~ N_d(mean, var I), precision 1/sigma_tau^2 + L/(2 sigma^2)."""
    pose = state.pose
    sums = state._sums
    d = pose.dim
    two_var = 2.0 * pose.sigma ** 2
    prior_prec = 1.0 / hyper.sigma_tau ** 2
    precision = prior_prec + sums.L / two_var
    mean = (hyper.mu_tau_for(d) * prior_prec + sums.residual_sum(pose.A) / two_var) / precision
    pose.tau = mean + rng.standard_normal(d) / math.sqrt(precision)
    _pose_changed(state)
    _refresh_log_joint(state, y, hyper)
    return state


def gibbs_update_sigma(
    state: ChainState,
    x: Configuration,
    y: Configuration,
    hyper: Hyperparams,
    rng: np.random.Generator,
) -> ChainState:
    """sigma^-2 | rest ~ Gamma(alpha + d L / 2, rate beta + sum ||x_j - A y_k - tau||^2 / 4)."""
    pose = state.pose
    sums = state._sums
    shape = hyper.alpha + 0.5 * pose.dim * sums.L
    rate = hyper.beta + 0.25 * sums.squared_residual(pose.A, pose.tau)
    omega = rng.gamma(shape, 1.0 / rate)
    pose.sigma = float(omega ** -0.5)
    _pose_changed(state)
    _refresh_log_joint(state, y, hyper)
    return state


def _posterior_fisher(state: ChainState, hyper: Hyperparams) -> np.ndarray:
    """F = F0 + (1 / 2 sigma^2) sum over matches of (x_j - tau) y_k^T."""
    pose = state.pose
    return hyper.F0_for(pose.dim) + state._sums.cross(pose.tau) / (2.0 * pose.sigma ** 2)


def update_rotation_2d(
    state: ChainState,
    x: Configuration,
    y: Configuration,
    hyper: Hyperparams,
    rng: np.random.Generator,
) -> ChainState:
    if state.pose.dim != 2 or not state.rotation_sampled:
        raise InputValidationError("update_rotation_2d needs d = 2 with rotation sampling enabled")
    a, b = geometry.fisher_coeffs_2d(_posterior_fisher(state, hyper))
    theta = geometry.sample_von_mises(geometry.coeffs_to_von_mises(a, b), rng)
    state.rotation = theta
    state.pose.A = geometry.rotation_matrix_2d(theta)
    _pose_changed(state)
    _refresh_log_joint(state, y, hyper)
    return state


def theta13_log_target(theta: float, a: float, b: float) -> float:
    """log of exp(a cos t + b sin t) cos t on (-pi/2, pi/2); -inf outside."""
    if abs(theta) >= geometry.HALF_PI:
        return -math.inf
    return a * math.cos(theta) + b * math.sin(theta) + math.log(math.cos(theta))


def theta13_metropolis_step(
    theta: float,
    a: float,
    b: float,
    half_width: float,
    rng: np.random.Generator,
) -> Tuple[float, bool]:
    """Random-walk Metropolis with a uniform(-half_width, half_width) perturbation."""
    proposal = theta + rng.uniform(-half_width, half_width)
    if abs(proposal) >= geometry.HALF_PI:
        return theta, False
    log_ratio = theta13_log_target(proposal, a, b) - theta13_log_target(theta, a, b)
    if _accept(log_ratio, rng):
        return proposal, True
    return theta, False


def update_rotation_3d(
    state: ChainState,
    x: Configuration,
    y: Configuration,
    hyper: Hyperparams,
    rng: np.random.Generator,
    half_width: float = 0.1,
) -> ChainState:
    if state.pose.dim != 3 or not isinstance(state.rotation, EulerAngles3):
        raise InputValidationError("update_rotation_3d needs d = 3 with rotation sampling enabled")
    F = _posterior_fisher(state, hyper)
    angles = state.rotation

    a, b = geometry.euler_conditional_coeffs(F, angles, 12)
    angles = angles.replace_axis(12, geometry.sample_von_mises(geometry.coeffs_to_von_mises(a, b), rng))

    a, b = geometry.euler_conditional_coeffs(F, angles, 13)
    theta13, accepted = theta13_metropolis_step(angles.theta13, a, b, half_width, rng)
    state.stats.record("theta13", accepted)
    angles = angles.replace_axis(13, theta13)

    a, b = geometry.euler_conditional_coeffs(F, angles, 23)
    angles = angles.replace_axis(23, geometry.sample_von_mises(geometry.coeffs_to_von_mises(a, b), rng))

    state.rotation = angles
    state.pose.A = angles.matrix()
    _pose_changed(state)
    _refresh_log_joint(state, y, hyper)
    return state


def sweep(
    state: ChainState,
    x: Configuration,
    y: Configuration,
    hyper: Hyperparams,
    schedule: SweepSchedule,
    rng: np.random.Generator,
) -> ChainState:
    """M updates, then tau, then sigma, then the rotation when it is sampled."""
    for _ in range(schedule.m_updates_per_sweep):
        update_matching(state, x, y, hyper, rng)
    gibbs_update_tau(state, x, y, hyper, rng)
    gibbs_update_sigma(state, x, y, hyper, rng)
    if schedule.sample_rotation:
        if state.pose.dim == 2:
            update_rotation_2d(state, x, y, hyper, rng)
        else:
            update_rotation_3d(state, x, y, hyper, rng, schedule.theta13_half_width)
    return state


# ---------- INITIALISATION AND DRIVER ----------

def initial_state(
    x: Configuration,
    y: Configuration,
    hyper: Hyperparams,
    schedule: SweepSchedule,
    rng: np.random.Generator,
    fixed_transform: Optional[np.ndarray] = None,
    rotation: Optional[Union[float, EulerAngles3]] = None,
    pinned_pairs: Sequence[Tuple[int, int]] = (),
) -> ChainState:
    """
    M holds only the pinned pairs, tau is the centroid difference after the
    initial A, sigma the prior median, and a sampled rotation starts
    Haar-uniform unless one is supplied.
    """
    d = x.dim
    if schedule.sample_rotation:
        if rotation is None:
            rotation = (
                geometry.sample_uniform_rotation_2d(rng) if d == 2
                else geometry.sample_uniform_rotation_3d(rng)
            )
        A = geometry.rotation_matrix_2d(rotation) if d == 2 else rotation.matrix()
    else:
        rotation = None
        A = np.eye(d) if fixed_transform is None else np.asarray(fixed_transform, dtype=float)
        if A.shape != (d, d):
            raise InputValidationError(f"fixed transformation must be {d}x{d}, got {A.shape}")

    if x.size and y.size:
        tau = x.centroid() - A @ y.centroid()
    else:
        tau = hyper.mu_tau_for(d).copy()

    M = MatchingMatrix.from_pairs(list(pinned_pairs), x.size, y.size)
    state = ChainState(
        match_of_x=list(M.match_of_x),
        match_of_y=list(M.match_of_y()),
        pose=PoseParams(A, tau, model.sigma_prior_median(hyper)),
        rotation=rotation,
        pinned_x=frozenset(j for j, _ in pinned_pairs),
        pinned_y=frozenset(k for _, k in pinned_pairs),
    )
    return resync(state, x, y, hyper)


@dataclass(eq=False)
class Trace:
    """Retained samples of one chain. Match pairs are 0-based (j, k) arrays."""
    m: int
    n: int
    d: int
    rotation_sampled: bool
    sweeps: np.ndarray
    log_joint: np.ndarray
    tau: np.ndarray
    sigma: np.ndarray
    angles: np.ndarray
    rotations: Optional[np.ndarray]
    matches: List[np.ndarray]
    acceptance: Dict[str, object]
    seed: int
    final_state: Optional[ChainState] = None

    @property
    def size(self) -> int:
        return len(self.sweeps)

    @property
    def is_empty(self) -> bool:
        return self.size == 0

    def match_counts(self) -> np.ndarray:
        return np.array([len(p) for p in self.matches], dtype=int)

    def match_frame(self) -> pd.DataFrame:
        """Long format: one row per (sample, j, k) match, 0-based indices."""
        if not self.matches or not any(len(p) for p in self.matches):
            return pd.DataFrame({"sample": [], "j": [], "k": []}, dtype=int)
        samples = np.concatenate([np.full(len(p), s) for s, p in enumerate(self.matches)])
        stacked = np.concatenate([p.reshape(-1, 2) for p in self.matches])
        return pd.DataFrame({"sample": samples, "j": stacked[:, 0], "k": stacked[:, 1]})

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"sweep": self.sweeps, "log_joint": self.log_joint})
        for i in range(self.d):
            frame[f"tau_{i + 1}"] = self.tau[:, i] if self.size else []
        frame["sigma"] = self.sigma
        frame["L"] = self.match_counts()
        names = ["theta"] if self.d == 2 else ["theta12", "theta13", "theta23"]
        if self.rotation_sampled:
            for i, name in enumerate(names):
                frame[name] = self.angles[:, i] if self.size else []
        return frame


def run_chain(
    x: Configuration,
    y: Configuration,
    hyper: Hyperparams,
    schedule: SweepSchedule,
    init: Optional[ChainState] = None,
    fixed_transform: Optional[np.ndarray] = None,
    pinned_pairs: Sequence[Tuple[int, int]] = (),
    initial_rotation: Optional[Union[float, EulerAngles3]] = None,
) -> Trace:
    if x.dim != y.dim:
        raise InputValidationError(f"configurations differ in dimension: x is {x.dim}D, y is {y.dim}D")

    rng = np.random.default_rng(schedule.seed)
    if init is None:
        state = initial_state(
            x, y, hyper, schedule, rng, fixed_transform, rotation=initial_rotation, pinned_pairs=pinned_pairs,
        )
    else:
        if schedule.sample_rotation != init.rotation_sampled:
            raise InputValidationError("initial state and schedule disagree on rotation sampling")
        state = resync(init.copy(), x, y, hyper)

    d = x.dim
    n_keep = schedule.retained_count
    n_angles = 0 if not schedule.sample_rotation else (1 if d == 2 else 3)
    kept_sweeps = np.zeros(n_keep, dtype=int)
    kept_log_joint = np.zeros(n_keep)
    kept_tau = np.zeros((n_keep, d))
    kept_sigma = np.zeros(n_keep)
    kept_angles = np.zeros((n_keep, n_angles))
    kept_rotations = np.zeros((n_keep, d, d)) if schedule.sample_rotation else None
    kept_matches: List[np.ndarray] = []

    logger.info(
        "Running chain: m=%d n=%d d=%d rotation=%s sweeps=%d burn_in=%d thin=%d seed=%d",
        x.size, y.size, d, schedule.sample_rotation, schedule.sweeps,
        schedule.burn_in, schedule.thin, schedule.seed,
    )
    started = time.perf_counter()
    progress_every = max(1, schedule.sweeps // 10)
    slot = 0

    for s in range(1, schedule.sweeps + 1):
        sweep(state, x, y, hyper, schedule, rng)

        if s % schedule.check_every == 0:
            _check_cache(state, x, y, hyper, s)

        if s > schedule.burn_in and (s - schedule.burn_in) % schedule.thin == 0:
            kept_sweeps[slot] = s
            kept_log_joint[slot] = state.log_joint
            kept_tau[slot] = state.pose.tau
            kept_sigma[slot] = state.pose.sigma
            if n_angles:
                kept_angles[slot] = state.angles()
                kept_rotations[slot] = state.pose.A
            kept_matches.append(np.array(state.pairs(), dtype=int).reshape(-1, 2))
            slot += 1

        if s % progress_every == 0:
            logger.debug(
                "sweep %d: log_joint=%.4f L=%d sigma=%.4f",
                s, state.log_joint, state.L, state.pose.sigma,
            )

    logger.info("Chain finished in %.2fs, %d samples retained", time.perf_counter() - started, slot)
    return Trace(
        m=x.size,
        n=y.size,
        d=d,
        rotation_sampled=schedule.sample_rotation,
        sweeps=kept_sweeps,
        log_joint=kept_log_joint,
        tau=kept_tau,
        sigma=kept_sigma,
        angles=kept_angles,
        rotations=kept_rotations,
        matches=kept_matches,
        acceptance=state.stats.as_dict(),
        seed=schedule.seed,
        final_state=state,
    )


def _check_cache(state: ChainState, x: Configuration, y: Configuration, hyper: Hyperparams, s: int) -> None:
    cached = state.log_joint
    resync(state, x, y, hyper)
    drift = abs(cached - state.log_joint)
    if drift > LOG_JOINT_TOLERANCE:
        logger.warning("Cached log-joint drifted by %.3g at sweep %d; resynchronised", drift, s)
