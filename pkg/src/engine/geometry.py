"""
Rotation representations, directional sampling and rotation averaging.

2D rotations are carried as a single angle, 3D rotations as generalised Euler
angles A = A12(theta12) A13(theta13) A23(theta23). The matrix Fisher prior
exp(tr(F^T A)) is conjugate to the spherical Gaussian matching likelihood, so
every rotation full conditional reduces to exp(a cos(theta) + b sin(theta))
in one angle at a time.
"""
import math
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from .errors import DegenerateRotationAverageError

TWO_PI = 2.0 * math.pi
HALF_PI = 0.5 * math.pi

# theta13 lives on the open interval (-pi/2, pi/2); keeps cos(theta13) > 0
_THETA13_MARGIN = 1e-12
# von Mises densities closer to uniform than exp(+-1e-12) are drawn uniformly
_MIN_KAPPA = 1e-12

# Axis labels accepted by euler_conditional_coeffs, mapped to 0-based (i, j)
EULER_AXES = {12: (0, 1), 13: (0, 2), 23: (1, 2)}


def wrap_angle(theta: float) -> float:
    """Maps an angle onto (-pi, pi]."""
    wrapped = math.remainder(theta, TWO_PI)
    if wrapped <= -math.pi:
        wrapped += TWO_PI
    return wrapped


def clamp_theta13(theta: float) -> float:
    limit = HALF_PI - _THETA13_MARGIN
    return min(max(theta, -limit), limit)


@dataclass(frozen=True)
class Rotation2:
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def matrix(self) -> np.ndarray:
        return rotation_matrix_2d(self.theta)


@dataclass(frozen=True)
class EulerAngles3:
    theta12: float
    theta13: float
    theta23: float

    def __post_init__(self):
        object.__setattr__(self, "theta12", wrap_angle(float(self.theta12)))
        object.__setattr__(self, "theta13", clamp_theta13(float(self.theta13)))
        object.__setattr__(self, "theta23", wrap_angle(float(self.theta23)))

    def matrix(self) -> np.ndarray:
        return rotation_matrix_3d(self)

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.theta12, self.theta13, self.theta23)

    def replace_axis(self, axis: int, theta: float) -> "EulerAngles3":
        values = {12: self.theta12, 13: self.theta13, 23: self.theta23}
        values[axis] = theta
        return EulerAngles3(values[12], values[13], values[23])


@dataclass(frozen=True)
class VonMisesParams:
    nu: float
    kappa: float

    def __post_init__(self):
        if not self.kappa >= 0:
            raise ValueError(f"von Mises concentration must be >= 0, got {self.kappa}")


@dataclass(frozen=True)
class MatrixFisherParams:
    """Matrix Fisher prior exp(tr(F0^T A)). F0 = 0 is the uniform (Haar) prior."""
    F0: np.ndarray

    @classmethod
    def uniform(cls, d: int) -> "MatrixFisherParams":
        return cls(np.zeros((d, d)))


def rotation_matrix_2d(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def elementary_rotation(axis: int, theta: float) -> np.ndarray:
    """
    A_ij(theta): identity except m_ii = m_jj = cos(theta), m_ij = -sin(theta),
    m_ji = sin(theta).
    """
    i, j = EULER_AXES[axis]
    c, s = math.cos(theta), math.sin(theta)
    m = np.eye(3)
    m[i, i] = c
    m[j, j] = c
    m[i, j] = -s
    m[j, i] = s
    return m


def rotation_matrix_3d(angles: EulerAngles3) -> np.ndarray:
    return (
        elementary_rotation(12, angles.theta12)
        @ elementary_rotation(13, angles.theta13)
        @ elementary_rotation(23, angles.theta23)
    )


def euler_angles_from_matrix(A: np.ndarray) -> EulerAngles3:
    """Inverts rotation_matrix_3d. Gimbal-locked inputs get theta13 clamped inside the interval."""
    A = np.asarray(A, dtype=float)
    theta13 = math.asin(min(1.0, max(-1.0, A[2, 0])))
    theta23 = math.atan2(A[2, 1], A[2, 2])
    theta12 = math.atan2(A[1, 0], A[0, 0])
    return EulerAngles3(theta12, theta13, theta23)


def von_mises_to_fisher(params: VonMisesParams) -> np.ndarray:
    """A (non-unique) F0 with tr(F0^T R(theta)) = kappa cos(theta - nu)."""
    return 0.5 * params.kappa * rotation_matrix_2d(params.nu)


def coeffs_to_von_mises(a: float, b: float) -> VonMisesParams:
    """a cos(theta) + b sin(theta) = kappa cos(theta - nu)."""
    return VonMisesParams(nu=math.atan2(b, a), kappa=math.hypot(a, b))


def fisher_coeffs_2d(F: np.ndarray) -> Tuple[float, float]:
    """(a, b) with tr(F^T R(theta)) = a cos(theta) + b sin(theta)."""
    return F[0, 0] + F[1, 1], F[1, 0] - F[0, 1]


def sample_von_mises(params: VonMisesParams, rng: np.random.Generator) -> float:
    """
    Best/Fisher rejection sampler (wrapped Cauchy envelope).
    kappa below _MIN_KAPPA short-circuits to a uniform draw on (-pi, pi].
    """
    kappa = params.kappa
    if kappa < _MIN_KAPPA:
        return wrap_angle(rng.uniform(-math.pi, math.pi))

    tau = 1.0 + math.sqrt(1.0 + 4.0 * kappa * kappa)
    # (tau - sqrt(2 tau)) / (2 kappa) without the cancellation at small kappa
    rho = 2.0 * kappa / (tau + math.sqrt(2.0 * tau))
    r = (1.0 + rho * rho) / (2.0 * rho)

    while True:
        u1, u2, u3 = rng.random(3)
        z = math.cos(math.pi * u1)
        f = (1.0 + r * z) / (r + z)
        c = kappa * (r - f)
        if c * (2.0 - c) - u2 > 0.0:
            break
        if u2 > 0.0 and math.log(c / u2) + 1.0 - c >= 0.0:
            break

    theta = math.acos(min(1.0, max(-1.0, f)))
    if u3 < 0.5:
        theta = -theta
    return wrap_angle(theta + params.nu)


def euler_conditional_coeffs(F: np.ndarray, angles: EulerAngles3, axis: int) -> Tuple[float, float]:
    """
    Returns (a, b) such that tr(F^T A) = a cos(theta_axis) + b sin(theta_axis) + c,
    with c free of theta_axis.

    Writing A = P A_ij(theta) Q, tr(F^T A) = tr(G^T A_ij(theta)) with
    G = P^T F Q^T, which gives a = G_ii + G_jj and b = G_ji - G_ij.
    """
    axis = int(axis)
    if axis not in EULER_AXES:
        raise ValueError(f"axis must be one of 12, 13, 23; got {axis}")
    F = np.asarray(F, dtype=float)

    if axis == 12:
        P = np.eye(3)
        Q = elementary_rotation(13, angles.theta13) @ elementary_rotation(23, angles.theta23)
    elif axis == 13:
        P = elementary_rotation(12, angles.theta12)
        Q = elementary_rotation(23, angles.theta23)
    else:
        P = elementary_rotation(12, angles.theta12) @ elementary_rotation(13, angles.theta13)
        Q = np.eye(3)

    G = P.T @ F @ Q.T
    i, j = EULER_AXES[axis]
    return float(G[i, i] + G[j, j]), float(G[j, i] - G[i, j])


def sample_uniform_rotation_2d(rng: np.random.Generator) -> float:
    return wrap_angle(rng.uniform(-math.pi, math.pi))


def sample_uniform_rotation_3d(rng: np.random.Generator) -> EulerAngles3:
    """
    Haar-uniform rotation: theta12, theta23 uniform, theta13 with density
    proportional to cos(theta13), i.e. sin(theta13) uniform on (-1, 1).
    """
    theta12 = rng.uniform(-math.pi, math.pi)
    theta23 = rng.uniform(-math.pi, math.pi)
    theta13 = math.asin(rng.uniform(-1.0, 1.0))
    return EulerAngles3(theta12, theta13, theta23)


def polar_rotation_mean(samples: Union[Sequence[np.ndarray], np.ndarray]) -> np.ndarray:
    """
    Polar part of the elementwise mean: U = Abar (Abar^T Abar)^(-1/2), with the
    inverse square root taken through the spectral decomposition.
    """
    stack = np.asarray(samples, dtype=float)
    if stack.ndim != 3 or stack.shape[0] == 0:
        raise ValueError("polar_rotation_mean needs a nonempty list of square matrices")

    mean = stack.mean(axis=0)
    gram = mean.T @ mean
    eigvals, eigvecs = np.linalg.eigh(gram)
    if eigvals[0] <= 1e-12 * max(eigvals[-1], 1e-300) or np.linalg.det(mean) <= 0.0:
        raise DegenerateRotationAverageError()

    inv_sqrt = (eigvecs / np.sqrt(eigvals)) @ eigvecs.T
    return mean @ inv_sqrt


def rotation_distance(A: np.ndarray, B: np.ndarray) -> float:
    """Geodesic angle between two rotations, from tr(A^T B) = (d - 2) + 2 cos(angle)."""
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    cos_angle = (np.trace(A.T @ np.asarray(B, dtype=float)) - (d - 2)) / 2.0
    return float(math.acos(min(1.0, max(-1.0, cos_angle))))


def procrustes_rotation(x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Least-squares rigid fit x ~ A y + tau over matched rows (Kabsch, with the
    reflection removed). Returns (A, tau).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.shape[0] == 0:
        raise ValueError("procrustes_rotation needs two equally sized nonempty point sets")

    x_bar = x.mean(axis=0)
    y_bar = y.mean(axis=0)
    cross = (x - x_bar).T @ (y - y_bar)
    U, _, Vt = np.linalg.svd(cross)
    correction = np.eye(x.shape[1])
    correction[-1, -1] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    A = U @ correction @ Vt
    return A, x_bar - A @ y_bar


def orthogonality_residual(A: np.ndarray) -> float:
    A = np.asarray(A, dtype=float)
    return float(np.max(np.abs(A.T @ A - np.eye(A.shape[0]))))
