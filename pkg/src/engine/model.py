"""
The hidden-point probability model.

Observed configurations x (m points) and y (n points) are noisy views of a
thinned homogeneous Poisson process of hidden locations. Integrating the
hidden points out leaves a joint density over the matching matrix M and the
pose (A, tau, sigma) in which every matched pair contributes one factor

    kappa_match * phi_d((x_j - A y_k - tau) / (sigma sqrt 2)) / (sigma sqrt 2)^d

with kappa_match = rho / lambda. All densities here are log densities and are
defined up to one additive constant per dataset and run mode.
"""
import math
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp

from .errors import InputValidationError

LOG_2PI = math.log(2.0 * math.pi)

UNMATCHED = -1


@dataclass(frozen=True, eq=False)
class Configuration:
    """
    An ordered list of d-dimensional points (d = 2 or 3), with optional colour
    labels and the identifiers they were read with.
    """
    points: np.ndarray
    colours: Optional[Tuple[Optional[str], ...]] = None
    ids: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.ndim != 2:
            raise InputValidationError("points must be a 2D array of shape (count, d)")
        if points.shape[1] not in (2, 3):
            raise InputValidationError(f"points must be 2- or 3-dimensional, got d={points.shape[1]}")
        if not np.all(np.isfinite(points)):
            raise InputValidationError("points must be finite")
        object.__setattr__(self, "points", points)

        if self.colours is not None:
            colours = tuple(None if c is None else str(c) for c in self.colours)
            if len(colours) != len(points):
                raise InputValidationError(
                    f"{len(colours)} colour labels given for {len(points)} points"
                )
            object.__setattr__(self, "colours", colours)
        if self.ids is not None:
            ids = tuple(str(i) for i in self.ids)
            if len(ids) != len(points):
                raise InputValidationError(f"{len(ids)} ids given for {len(points)} points")
            object.__setattr__(self, "ids", ids)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def has_colours(self) -> bool:
        return self.colours is not None and any(c is not None for c in self.colours)

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


@dataclass(frozen=True)
class MatchingMatrix:
    """
    One-to-one partial correspondence between x-indices and y-indices, stored
    as match_of_x[j] = k (0-based) or UNMATCHED.
    """
    match_of_x: Tuple[int, ...]
    n: int

    def __post_init__(self):
        match_of_x = tuple(int(k) for k in self.match_of_x)
        object.__setattr__(self, "match_of_x", match_of_x)
        used = [k for k in match_of_x if k != UNMATCHED]
        if any(k < 0 or k >= self.n for k in used):
            raise InputValidationError(f"y-index out of range for n={self.n}")
        if len(set(used)) != len(used):
            raise InputValidationError("matching is not one-to-one: a y point is matched twice")

    @classmethod
    def empty(cls, m: int, n: int) -> "MatchingMatrix":
        return cls((UNMATCHED,) * m, n)

    @classmethod
    def from_pairs(cls, pairs: Sequence[Tuple[int, int]], m: int, n: int) -> "MatchingMatrix":
        match_of_x = [UNMATCHED] * m
        for j, k in pairs:
            if not 0 <= j < m:
                raise InputValidationError(f"x-index {j} out of range for m={m}")
            if match_of_x[j] != UNMATCHED:
                raise InputValidationError("matching is not one-to-one: an x point is matched twice")
            match_of_x[j] = k
        return cls(tuple(match_of_x), n)

    @property
    def m(self) -> int:
        return len(self.match_of_x)

    @property
    def L(self) -> int:
        return sum(1 for k in self.match_of_x if k != UNMATCHED)

    def pairs(self) -> List[Tuple[int, int]]:
        return [(j, k) for j, k in enumerate(self.match_of_x) if k != UNMATCHED]

    def match_of_y(self) -> Tuple[int, ...]:
        out = [UNMATCHED] * self.n
        for j, k in self.pairs():
            out[k] = j
        return tuple(out)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.m, self.n), dtype=int)
        for j, k in self.pairs():
            dense[j, k] = 1
        return dense

    def with_pair(self, j: int, k: int) -> "MatchingMatrix":
        match_of_x = list(self.match_of_x)
        match_of_x[j] = k
        return MatchingMatrix(tuple(match_of_x), self.n)

    def without_x(self, j: int) -> "MatchingMatrix":
        match_of_x = list(self.match_of_x)
        match_of_x[j] = UNMATCHED
        return MatchingMatrix(tuple(match_of_x), self.n)


@dataclass(eq=False)
class PoseParams:
    A: np.ndarray
    tau: np.ndarray
    sigma: float

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.tau = np.asarray(self.tau, dtype=float)
        self.sigma = float(self.sigma)
        d = self.tau.shape[0]
        if self.A.shape != (d, d):
            raise InputValidationError(f"A must be {d}x{d}, got shape {self.A.shape}")
        if not self.sigma > 0:
            raise InputValidationError(f"sigma must be positive, got {self.sigma}")

    @property
    def dim(self) -> int:
        return self.tau.shape[0]

    def copy(self) -> "PoseParams":
        return PoseParams(self.A.copy(), self.tau.copy(), self.sigma)


@dataclass(frozen=True, eq=False)
class Hyperparams:
    """
    kappa_match = rho/lambda is the per-match weight that enters the posterior
    (units of volume). prior_count_ratio = rho/(lambda v) is dimensionless and
    only used by the standalone prior analysis of M and L.
    """
    kappa_match: float
    prior_count_ratio: Optional[float] = None
    F0: Optional[np.ndarray] = None
    mu_tau: Optional[np.ndarray] = None
    sigma_tau: float = 20.0
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.0
    delta: float = 0.0
    p_star: float = 0.5

    def __post_init__(self):
        if not self.kappa_match > 0:
            raise InputValidationError(f"kappa_match must be positive, got {self.kappa_match}")
        if self.prior_count_ratio is not None and not self.prior_count_ratio > 0:
            raise InputValidationError("prior_count_ratio must be positive")
        for name in ("sigma_tau", "alpha", "beta"):
            if not getattr(self, name) > 0:
                raise InputValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 < self.p_star < 1.0:
            raise InputValidationError(f"p_star must lie in (0, 1), got {self.p_star}")
        if self.F0 is not None:
            object.__setattr__(self, "F0", np.asarray(self.F0, dtype=float))
        if self.mu_tau is not None:
            object.__setattr__(self, "mu_tau", np.asarray(self.mu_tau, dtype=float))

    def mu_tau_for(self, d: int) -> np.ndarray:
        return np.zeros(d) if self.mu_tau is None else self.mu_tau

    def F0_for(self, d: int) -> np.ndarray:
        return np.zeros((d, d)) if self.F0 is None else self.F0

    @property
    def has_colour_effect(self) -> bool:
        return self.gamma != 0.0 or self.delta != 0.0


@dataclass(frozen=True)
class LossSpec:
    """
    Additive pairwise loss. Only the cost ratio
    K = (l01 - l00) / (l10 + l01 - l11 - l00) matters for the optimal match.
    """
    K: float
    losses: Optional[Tuple[float, float, float, float]] = field(default=None)

    def __post_init__(self):
        if not 0.0 < self.K <= 1.0:
            raise InputValidationError(f"cost ratio K must lie in (0, 1], got {self.K}")

    @classmethod
    def from_losses(cls, l00: float, l01: float, l10: float, l11: float) -> "LossSpec":
        scale = l10 + l01 - l11 - l00
        if not scale > 0:
            raise InputValidationError("losses must satisfy l10 + l01 - l11 - l00 > 0")
        if not l01 - l00 > 0:
            raise InputValidationError("losses must satisfy l01 - l00 > 0")
        return cls(K=(l01 - l00) / scale, losses=(l00, l01, l10, l11))


# ---------- PRIORS ON L AND M ----------

def _log_match_count_terms(m: int, n: int, d_ratio: float) -> np.ndarray:
    L = np.arange(min(m, n) + 1)
    return L * math.log(d_ratio) - gammaln(m - L + 1) - gammaln(n - L + 1) - gammaln(L + 1)


def prior_match_count_pmf(m: int, n: int, d_ratio: float) -> np.ndarray:
    """p(L) proportional to d_ratio^L / ((m-L)! (n-L)! L!), for L = 0..min(m, n)."""
    if m < 0 or n < 0:
        raise ValueError("configuration sizes must be non-negative")
    if not d_ratio > 0:
        raise ValueError(f"d_ratio must be positive, got {d_ratio}")
    terms = _log_match_count_terms(m, n, d_ratio)
    return np.exp(terms - logsumexp(terms))


def elicit_d_ratio(m: int, n: int, L_bar: float) -> float:
    """rho/(lambda v) that puts the prior mode of L within 1 of the guess L_bar."""
    if not 0 < L_bar < min(m, n):
        raise InputValidationError(
            f"expected match count must lie strictly between 0 and min(m, n)={min(m, n)}, got {L_bar}"
        )
    return L_bar / ((m - L_bar) * (n - L_bar))


def _log_binomial(a: int, b: np.ndarray) -> np.ndarray:
    return gammaln(a + 1) - gammaln(b + 1) - gammaln(a - b + 1)


def log_prior_matching(M: MatchingMatrix, hyper: Hyperparams) -> float:
    """log p(M) with p(M) proportional to (rho/(lambda v))^L, normalised over all matchings."""
    if hyper.prior_count_ratio is None:
        raise InputValidationError("log_prior_matching needs hyper.prior_count_ratio")
    m, n = M.m, M.n
    log_d = math.log(hyper.prior_count_ratio)
    ell = np.arange(min(m, n) + 1)
    log_counts = gammaln(ell + 1) + _log_binomial(m, ell) + _log_binomial(n, ell)
    return M.L * log_d - float(logsumexp(log_counts + ell * log_d))


# ---------- PAIR WEIGHTS ----------

def colour_log_affinity(colour_x: Optional[str], colour_y: Optional[str], hyper: Hyperparams) -> float:
    if colour_x is None or colour_y is None:
        return 0.0
    return hyper.gamma if colour_x == colour_y else hyper.delta


def colour_affinity_matrix(x: Configuration, y: Configuration, hyper: Hyperparams) -> np.ndarray:
    affinity = np.zeros((x.size, y.size))
    if not (x.has_colours and y.has_colours):
        return affinity
    for j, cx in enumerate(x.colours):
        for k, cy in enumerate(y.colours):
            affinity[j, k] = colour_log_affinity(cx, cy, hyper)
    return affinity


def pair_log_constant(d: int, sigma: float, hyper: Hyperparams) -> float:
    """log[kappa_match (2 pi)^(-d/2) / (sigma sqrt 2)^d]: the z-free part of every pair weight."""
    return math.log(hyper.kappa_match) - 0.5 * d * LOG_2PI - d * math.log(sigma * math.sqrt(2.0))


def pair_log_weight(
    x_j: np.ndarray,
    y_k: np.ndarray,
    pose: PoseParams,
    hyper: Hyperparams,
    colour_x: Optional[str] = None,
    colour_y: Optional[str] = None,
) -> float:
    z = np.asarray(x_j, dtype=float) - pose.A @ np.asarray(y_k, dtype=float) - pose.tau
    sq = float(z @ z)
    return (
        pair_log_constant(pose.dim, pose.sigma, hyper)
        - sq / (4.0 * pose.sigma ** 2)
        + colour_log_affinity(colour_x, colour_y, hyper)
    )


def pair_log_weight_matrix(x: Configuration, y: Configuration, pose: PoseParams, hyper: Hyperparams) -> np.ndarray:
    """All m x n pair log weights at once."""
    shifted = y.points @ pose.A.T + pose.tau
    diff = x.points[:, None, :] - shifted[None, :, :]
    sq = np.einsum("jkd,jkd->jk", diff, diff)
    logw = pair_log_constant(pose.dim, pose.sigma, hyper) - sq / (4.0 * pose.sigma ** 2)
    return logw + colour_affinity_matrix(x, y, hyper)


# ---------- POSE PRIORS ----------

def log_prior_tau(tau: np.ndarray, hyper: Hyperparams) -> float:
    d = tau.shape[0]
    resid = tau - hyper.mu_tau_for(d)
    var = hyper.sigma_tau ** 2
    return -0.5 * d * (LOG_2PI + math.log(var)) - float(resid @ resid) / (2.0 * var)


def log_prior_sigma(sigma: float, hyper: Hyperparams) -> float:
    """
    Density of sigma (w.r.t. d sigma) when sigma^-2 ~ Gamma(alpha, rate beta):
    the Gamma density at omega = sigma^-2 times the Jacobian |d omega / d sigma| = 2 sigma^-3.
    """
    omega = sigma ** -2
    return (
        hyper.alpha * math.log(hyper.beta)
        - float(gammaln(hyper.alpha))
        + (hyper.alpha - 1.0) * math.log(omega)
        - hyper.beta * omega
        + math.log(2.0)
        - 3.0 * math.log(sigma)
    )


def log_prior_rotation(A: np.ndarray, hyper: Hyperparams) -> float:
    """Matrix Fisher log density up to its normalising constant: tr(F0^T A)."""
    F0 = hyper.F0_for(A.shape[0])
    return float(np.sum(F0 * A))


def sigma_prior_median(hyper: Hyperparams) -> float:
    omega_median = stats.gamma.ppf(0.5, a=hyper.alpha, scale=1.0 / hyper.beta)
    return float(omega_median ** -0.5)


def log_pose_prior(pose: PoseParams, n: int, hyper: Hyperparams, rotation: bool = False) -> float:
    """log[|A|^n p(A) p(tau) p(sigma)]. p(A) only enters when A is sampled."""
    sign, logdet = np.linalg.slogdet(pose.A)
    if sign == 0:
        raise InputValidationError("transformation A is singular")
    total = n * logdet + log_prior_tau(pose.tau, hyper) + log_prior_sigma(pose.sigma, hyper)
    if rotation:
        total += log_prior_rotation(pose.A, hyper)
    return total


def log_joint(
    M: MatchingMatrix,
    pose: PoseParams,
    x: Configuration,
    y: Configuration,
    hyper: Hyperparams,
    rotation: bool = False,
) -> float:
    """
    log p(M, A, tau, sigma, x, y) up to a constant fixed by the data and run mode.
    Does not depend on v or prior_count_ratio.
    """
    if M.m != x.size or M.n != y.size:
        raise InputValidationError(f"matching is {M.m}x{M.n} but data are {x.size}x{y.size}")
    total = log_pose_prior(pose, y.size, hyper, rotation)
    pairs = M.pairs()
    if not pairs:
        return total

    js = np.fromiter((j for j, _ in pairs), dtype=int, count=len(pairs))
    ks = np.fromiter((k for _, k in pairs), dtype=int, count=len(pairs))
    z = x.points[js] - y.points[ks] @ pose.A.T - pose.tau
    sq = float(np.einsum("ld,ld->", z, z))
    total += len(pairs) * pair_log_constant(pose.dim, pose.sigma, hyper) - sq / (4.0 * pose.sigma ** 2)
    if x.has_colours and y.has_colours and hyper.has_colour_effect:
        total += sum(colour_log_affinity(x.colours[j], y.colours[k], hyper) for j, k in pairs)
    return total


# ---------- EXHAUSTIVE ENUMERATION (small instances) ----------

def enumerate_matchings(m: int, n: int) -> Iterator[MatchingMatrix]:
    """Every valid matching of an m x n problem; there are sum_l l! C(m,l) C(n,l) of them."""
    match_of_x = [UNMATCHED] * m
    used = [False] * n

    def extend(j: int) -> Iterator[MatchingMatrix]:
        if j == m:
            yield MatchingMatrix(tuple(match_of_x), n)
            return
        match_of_x[j] = UNMATCHED
        yield from extend(j + 1)
        for k in range(n):
            if not used[k]:
                used[k] = True
                match_of_x[j] = k
                yield from extend(j + 1)
                used[k] = False
        match_of_x[j] = UNMATCHED

    yield from extend(0)


def exact_matching_posterior(
    pose: PoseParams,
    x: Configuration,
    y: Configuration,
    hyper: Hyperparams,
) -> Tuple[List[MatchingMatrix], np.ndarray]:
    """p(M | pose, x, y) by enumeration. Only feasible for a handful of points per side."""
    logw = pair_log_weight_matrix(x, y, pose, hyper)
    matchings = list(enumerate_matchings(x.size, y.size))
    log_post = np.array([sum(logw[j, k] for j, k in M.pairs()) for M in matchings])
    return matchings, np.exp(log_post - logsumexp(log_post))
