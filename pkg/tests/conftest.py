import os
import sys

import numpy as np
import pytest

# Ensure src is in pythonpath
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from src.engine import geometry  # noqa: E402
from src.engine.model import Configuration, Hyperparams, PoseParams  # noqa: E402
from src.engine.sampler import Trace  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical or acceptance check")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_pair():
    """Three x points and three y points, y a shifted and slightly perturbed copy of x."""
    x = Configuration(np.array([[0.0, 0.0], [1.0, 0.5], [-0.5, 1.2]]))
    y = Configuration(np.array([[-1.1, 0.9], [0.1, 1.4], [-1.4, 2.3]]))
    return x, y


@pytest.fixture
def small_hyper():
    return Hyperparams(kappa_match=2.0, sigma_tau=5.0, alpha=2.0, beta=1.0)


@pytest.fixture
def unit_pose():
    return PoseParams(np.eye(2), np.array([1.0, -1.0]), 0.6)


@pytest.fixture
def random_rotation():
    def draw(d, rng):
        if d == 2:
            return geometry.rotation_matrix_2d(geometry.sample_uniform_rotation_2d(rng))
        return geometry.sample_uniform_rotation_3d(rng).matrix()

    return draw


@pytest.fixture
def make_trace():
    """Builds a Trace by hand from per-sample lists of 0-based (j, k) pairs."""

    def build(matches, m, n, d=2, tau=None, sigma=None, rotations=None):
        S = len(matches)
        return Trace(
            m=m,
            n=n,
            d=d,
            rotation_sampled=rotations is not None,
            sweeps=np.arange(1, S + 1),
            log_joint=np.zeros(S),
            tau=np.zeros((S, d)) if tau is None else np.asarray(tau, dtype=float),
            sigma=np.ones(S) if sigma is None else np.asarray(sigma, dtype=float),
            angles=np.zeros((S, 0)),
            rotations=None if rotations is None else np.asarray(rotations, dtype=float),
            matches=[np.array(p, dtype=int).reshape(-1, 2) for p in matches],
            acceptance={},
            seed=0,
        )

    return build


@pytest.fixture(scope="module")
def separated_3d():
    """
    A 3D instance with hidden points at least 10 apart and sigma = 1: roughly
    40 x points, 60 y points and 35 true matches. Returns (spec, instance, hyper).
    """
    from src.engine.synthetic import GenerativeSpec, generate

    rng = np.random.default_rng(4)
    angles = geometry.sample_uniform_rotation_3d(rng)
    spec = GenerativeSpec(
        lambda_rate=1.25e-4,
        region_low=[-50.0, -50.0, -50.0],
        region_high=[50.0, 50.0, 50.0],
        p_x=0.05,
        p_y=0.25,
        rho=28.0,
        pose=PoseParams(angles.matrix(), np.array([5.0, -3.0, 2.0]), 1.0),
        min_spacing=10.0,
    )
    instance = generate(spec, rng)
    hyper = Hyperparams(kappa_match=spec.kappa_match, sigma_tau=50.0, alpha=1.0, beta=36.0)
    return spec, instance, hyper
