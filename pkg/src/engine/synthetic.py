"""
Forward simulation of the hidden-point model: a homogeneous Poisson process
in a box, an independent four-way thinning of every hidden point (unseen,
x only, y only, both) and Gaussian noise on each side.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import InputValidationError
from .model import Configuration, MatchingMatrix, PoseParams

logger = logging.getLogger(__name__)

# category codes of a hidden point
UNSEEN, X_ONLY, Y_ONLY, BOTH = 0, 1, 2, 3


@dataclass(eq=False)
class GenerativeSpec:
    lambda_rate: float
    region_low: np.ndarray
    region_high: np.ndarray
    p_x: float
    p_y: float
    rho: float
    pose: PoseParams
    colour_labels: Optional[Sequence[str]] = None
    colour_probs: Optional[Sequence[float]] = None
    gamma: float = 0.0
    delta: float = 0.0
    min_spacing: float = 0.0

    def __post_init__(self):
        self.region_low = np.asarray(self.region_low, dtype=float)
        self.region_high = np.asarray(self.region_high, dtype=float)
        if self.region_low.shape != self.region_high.shape or self.region_low.ndim != 1:
            raise InputValidationError("region bounds must be two vectors of equal length")
        if self.region_low.shape[0] != self.pose.dim:
            raise InputValidationError("region dimension does not match the pose dimension")
        if not np.all(self.region_high > self.region_low):
            raise InputValidationError("region_high must exceed region_low in every coordinate")
        if not self.lambda_rate >= 0:
            raise InputValidationError("lambda_rate must be non-negative")
        if not self.rho > 0:
            raise InputValidationError("rho must be positive")
        if self.min_spacing < 0:
            raise InputValidationError("min_spacing must be non-negative")
        probs = self.category_probs()
        if np.any(probs < -1e-12) or np.any(probs > 1 + 1e-12):
            raise InputValidationError(
                f"infeasible observation probabilities: categories {probs.tolist()} must lie in [0, 1]"
            )
        if (self.colour_labels is None) != (self.colour_probs is None):
            raise InputValidationError("colour_labels and colour_probs must be given together")
        if self.colour_probs is not None:
            cp = np.asarray(self.colour_probs, dtype=float)
            if len(cp) != len(self.colour_labels) or np.any(cp < 0) or not np.isclose(cp.sum(), 1.0):
                raise InputValidationError("colour_probs must be a probability vector over colour_labels")

    @property
    def dim(self) -> int:
        return self.region_low.shape[0]

    @property
    def volume(self) -> float:
        return float(np.prod(self.region_high - self.region_low))

    def category_probs(self) -> np.ndarray:
        both = self.rho * self.p_x * self.p_y
        return np.array([1.0 - self.p_x - self.p_y - both, self.p_x, self.p_y, both])

    @property
    def kappa_match(self) -> float:
        """rho / lambda, the per-match weight this generator implies."""
        return self.rho / self.lambda_rate

    @property
    def prior_count_ratio(self) -> float:
        return self.rho / (self.lambda_rate * self.volume)


@dataclass(eq=False)
class SyntheticInstance:
    x: Configuration
    y: Configuration
    truth: MatchingMatrix
    hidden: np.ndarray
    # hidden-point index behind each observed point
    x_source: np.ndarray
    y_source: np.ndarray
    categories: np.ndarray

    def category_counts(self) -> Dict[str, int]:
        counts = np.bincount(self.categories, minlength=4)
        return {"unseen": int(counts[UNSEEN]), "x_only": int(counts[X_ONLY]),
                "y_only": int(counts[Y_ONLY]), "both": int(counts[BOTH])}


def hardcore_thin(points: np.ndarray, min_spacing: float) -> np.ndarray:
    """
    Sequential thinning: a point is kept when no previously kept point lies
    closer than min_spacing. The result has every pairwise distance >= min_spacing.
    """
    points = np.asarray(points, dtype=float)
    if min_spacing < 0:
        raise ValueError("min_spacing must be non-negative")
    if min_spacing == 0 or len(points) < 2:
        return points.copy()

    tree = cKDTree(points)
    kept = np.zeros(len(points), dtype=bool)
    for i, neighbours in enumerate(tree.query_ball_point(points, r=min_spacing)):
        close = [j for j in neighbours if j != i and kept[j]]
        if not any(np.linalg.norm(points[j] - points[i]) < min_spacing for j in close):
            kept[i] = True
    return points[kept]


def _matched_colour_probs(spec: GenerativeSpec) -> np.ndarray:
    pi = np.asarray(spec.colour_probs, dtype=float)
    same = np.eye(len(pi), dtype=bool)
    joint = np.outer(pi, pi) * np.exp(np.where(same, spec.gamma, spec.delta))
    return joint / joint.sum()


def _draw_colours(
    spec: GenerativeSpec,
    rng: np.random.Generator,
    categories: np.ndarray,
) -> Tuple[List[str], List[str]]:
    labels = list(spec.colour_labels)
    r = len(labels)
    pi = np.asarray(spec.colour_probs, dtype=float)
    joint = _matched_colour_probs(spec).ravel()
    colour_x: List[str] = []
    colour_y: List[str] = []
    for c in categories:
        if c == BOTH:
            idx = rng.choice(r * r, p=joint)
            colour_x.append(labels[idx // r])
            colour_y.append(labels[idx % r])
        elif c == X_ONLY:
            colour_x.append(labels[rng.choice(r, p=pi)])
        elif c == Y_ONLY:
            colour_y.append(labels[rng.choice(r, p=pi)])
    return colour_x, colour_y


def generate(spec: GenerativeSpec, rng: np.random.Generator) -> SyntheticInstance:
    d = spec.dim
    N = rng.poisson(spec.lambda_rate * spec.volume)
    hidden = rng.uniform(spec.region_low, spec.region_high, size=(N, d))
    if spec.min_spacing > 0:
        hidden = hardcore_thin(hidden, spec.min_spacing)
    N = len(hidden)

    probs = np.clip(spec.category_probs(), 0.0, None)
    categories = rng.choice(4, size=N, p=probs / probs.sum()).astype(int)

    x_source = np.flatnonzero((categories == X_ONLY) | (categories == BOTH))
    y_source = np.flatnonzero((categories == Y_ONLY) | (categories == BOTH))
    pose = spec.pose
    sigma = pose.sigma
    x_points = hidden[x_source] + sigma * rng.standard_normal((len(x_source), d))
    # A y_k + tau = mu + noise
    y_target = hidden[y_source] + sigma * rng.standard_normal((len(y_source), d)) - pose.tau
    y_points = np.linalg.solve(pose.A, y_target.T).T if len(y_source) else np.zeros((0, d))

    colour_x = colour_y = None
    if spec.colour_labels is not None:
        colour_x, colour_y = _draw_colours(spec, rng, categories)

    perm_x = rng.permutation(len(x_source))
    perm_y = rng.permutation(len(y_source))
    x_source = x_source[perm_x]
    y_source = y_source[perm_y]
    x_points = x_points[perm_x].reshape(-1, d)
    y_points = y_points[perm_y].reshape(-1, d)
    if colour_x is not None:
        colour_x = [colour_x[i] for i in perm_x]
        colour_y = [colour_y[i] for i in perm_y]

    y_position = {int(h): k for k, h in enumerate(y_source)}
    pairs = [(j, y_position[int(h)]) for j, h in enumerate(x_source) if int(h) in y_position]
    truth = MatchingMatrix.from_pairs(pairs, len(x_source), len(y_source))

    x = Configuration(x_points, colour_x, tuple(str(i + 1) for i in range(len(x_points))))
    y = Configuration(y_points, colour_y, tuple(str(i + 1) for i in range(len(y_points))))
    logger.debug("Generated %d hidden points: m=%d n=%d L=%d", N, x.size, y.size, truth.L)
    return SyntheticInstance(x, y, truth, hidden, x_source, y_source, categories)
