"""
Run configuration: a flat 'key = value' file, overridden by command-line flags,
validated into RunConfig / GenerateConfig.
"""
import os
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from src.config import settings
from src.engine import geometry
from src.engine.errors import InputValidationError
from src.engine.ingest import parse_pairs
from src.engine.model import Hyperparams, LossSpec, elicit_d_ratio
from src.engine.sampler import SweepSchedule

MODES = ("fixed-transform", "rotation-2d", "rotation-3d")
MODE_DIMS = {"rotation-2d": 2, "rotation-3d": 3}


def load_config_file(path: str) -> Dict[str, str]:
    """'key = value' per line; '#' starts a comment, blank lines are skipped."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    values: Dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputValidationError(f"{path}:{line_no}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class RunConfig(BaseModel):
    mode: Literal["fixed-transform", "rotation-2d", "rotation-3d"] = "fixed-transform"
    x_file: str
    y_file: str
    a_file: Optional[str] = Field(default=None, description="Fixed transformation matrix, fixed-transform mode only.")
    truth_file: Optional[str] = None
    colour_groups: Literal["none", "amino-acid"] = "none"
    dim: Optional[int] = Field(
        default=None, ge=2, le=3,
        description="Coordinates per point. Rotation modes imply it; with it, numeric colour codes are read as labels.",
    )

    kappa_match: Optional[float] = Field(default=None, gt=0)
    lambda_over_rho: Optional[float] = Field(default=None, gt=0)
    expected_matches: Optional[float] = Field(default=None, gt=0)
    region_volume: Optional[float] = Field(default=None, gt=0)
    prior_count_ratio: Optional[float] = Field(default=None, gt=0)

    F0: Optional[List[float]] = Field(default=None, description="Matrix Fisher prior, row-major d*d values.")
    vm_nu: Optional[float] = None
    vm_kappa: Optional[float] = Field(default=None, ge=0)
    mu_tau: Optional[List[float]] = None
    sigma_tau: float = Field(default=20.0, gt=0)
    alpha: float = Field(default=1.0, gt=0)
    beta: float = Field(default=1.0, gt=0)
    gamma: float = 0.0
    delta: float = 0.0
    p_star: float = Field(default=0.5, gt=0, lt=1)

    sweeps: int = Field(default=120_000, ge=0)
    burn_in: int = Field(default=20_000, ge=0)
    thin: int = Field(default=10, ge=1)
    m_updates_per_sweep: int = Field(default=1, ge=1)
    seed: int = 0
    theta13_half_width: float = Field(default=0.1, gt=0)
    check_every: int = Field(default=settings.check_every, ge=1)
    initial_rotation: Optional[List[float]] = None
    pinned_pairs: List[Tuple[int, int]] = Field(default_factory=list, description="1-based j:k pairs held fixed.")

    k_values: List[float] = Field(default_factory=lambda: list(settings.default_k_values))
    output_dir: str = settings.output_dir
    plot: bool = True

    n_starts: int = Field(default=1, ge=1)
    short_sweeps: int = Field(default=50_000, ge=0)
    log_post_threshold: Optional[float] = None
    pilot_runs: int = Field(default=3, ge=1)
    pilot_quantile: float = Field(default=0.25, ge=0, le=1)
    max_workers: int = Field(default=settings.max_workers, ge=1)

    em_max_iters: int = Field(default=100, ge=0)
    em_fix_sigma: bool = False

    @field_validator("k_values", "mu_tau", "F0", "initial_rotation", mode="before")
    @classmethod
    def _lists(cls, value):
        return _split_list(value)

    @field_validator("pinned_pairs", mode="before")
    @classmethod
    def _pairs(cls, value):
        if isinstance(value, str):
            return [(j + 1, k + 1) for j, k in parse_pairs(value)]
        return value

    @field_validator("k_values")
    @classmethod
    def _k_range(cls, value):
        for K in value:
            LossSpec(K)
        return value

    @model_validator(mode="after")
    def _consistent(self):
        routes = [
            self.kappa_match is not None,
            self.lambda_over_rho is not None,
            self.expected_matches is not None,
        ]
        if sum(routes) != 1:
            raise ValueError("give exactly one of kappa_match, lambda_over_rho or expected_matches")
        if self.expected_matches is not None and self.region_volume is None:
            raise ValueError("expected_matches needs region_volume")
        if self.mode == "fixed-transform" and self.a_file is None:
            raise ValueError("fixed-transform mode needs a_file")
        if self.mode != "fixed-transform" and self.a_file is not None:
            raise ValueError("a_file is only used in fixed-transform mode")
        if self.dim is not None and MODE_DIMS.get(self.mode, self.dim) != self.dim:
            raise ValueError(f"mode {self.mode} needs {MODE_DIMS[self.mode]}D points, got dim={self.dim}")
        if (self.vm_nu is None) != (self.vm_kappa is None):
            raise ValueError("vm_nu and vm_kappa must be given together")
        if self.vm_kappa is not None and self.mode != "rotation-2d":
            raise ValueError("a von Mises rotation prior needs rotation-2d mode")
        if self.vm_kappa is not None and self.F0 is not None:
            raise ValueError("give either F0 or the von Mises prior, not both")
        if self.sweeps < self.burn_in:
            raise ValueError("sweeps counts burn-in and must not be less than burn_in")
        return self

    @property
    def sample_rotation(self) -> bool:
        return self.mode != "fixed-transform"

    @property
    def point_dim(self) -> Optional[int]:
        return self.dim if self.dim is not None else MODE_DIMS.get(self.mode)

    def check_dimension(self, d: int) -> None:
        expected = MODE_DIMS.get(self.mode)
        if expected is not None and expected != d:
            raise InputValidationError(f"mode {self.mode} needs {expected}D points, got {d}D")
        if self.F0 is not None and len(self.F0) != d * d:
            raise InputValidationError(f"F0 needs {d * d} values for {d}D points, got {len(self.F0)}")
        if self.mu_tau is not None and len(self.mu_tau) != d:
            raise InputValidationError(f"mu_tau needs {d} values, got {len(self.mu_tau)}")
        if self.initial_rotation is not None:
            need = 1 if d == 2 else 3
            if not self.sample_rotation or len(self.initial_rotation) != need:
                raise InputValidationError(f"initial_rotation needs {need} angle(s) in a rotation mode")

    def kappa(self, m: int, n: int) -> float:
        if self.kappa_match is not None:
            return self.kappa_match
        if self.lambda_over_rho is not None:
            return 1.0 / self.lambda_over_rho
        return elicit_d_ratio(m, n, self.expected_matches) * self.region_volume

    def count_ratio(self, m: int, n: int) -> Optional[float]:
        if self.prior_count_ratio is not None:
            return self.prior_count_ratio
        if self.expected_matches is not None:
            return elicit_d_ratio(m, n, self.expected_matches)
        if self.region_volume is not None:
            return self.kappa(m, n) / self.region_volume
        return None

    def hyperparams(self, m: int, n: int, d: int) -> Hyperparams:
        self.check_dimension(d)
        if self.vm_kappa is not None:
            F0 = geometry.von_mises_to_fisher(geometry.VonMisesParams(self.vm_nu, self.vm_kappa))
        elif self.F0 is not None:
            F0 = np.array(self.F0, dtype=float).reshape(d, d)
        else:
            F0 = None
        return Hyperparams(
            kappa_match=self.kappa(m, n),
            prior_count_ratio=self.count_ratio(m, n),
            F0=F0,
            mu_tau=None if self.mu_tau is None else np.array(self.mu_tau, dtype=float),
            sigma_tau=self.sigma_tau,
            alpha=self.alpha,
            beta=self.beta,
            gamma=self.gamma,
            delta=self.delta,
            p_star=self.p_star,
        )

    def schedule(self, sweeps: Optional[int] = None, burn_in: Optional[int] = None, seed: Optional[int] = None) -> SweepSchedule:
        return SweepSchedule(
            sweeps=self.sweeps if sweeps is None else sweeps,
            burn_in=self.burn_in if burn_in is None else burn_in,
            thin=self.thin,
            m_updates_per_sweep=self.m_updates_per_sweep,
            sample_rotation=self.sample_rotation,
            seed=self.seed if seed is None else seed,
            theta13_half_width=self.theta13_half_width,
            check_every=self.check_every,
        )

    def start_rotation(self, d: int):
        if self.initial_rotation is None:
            return None
        if d == 2:
            return geometry.wrap_angle(self.initial_rotation[0])
        return geometry.EulerAngles3(*self.initial_rotation)

    def pinned(self) -> List[Tuple[int, int]]:
        return [(j - 1, k - 1) for j, k in self.pinned_pairs]


class GenerateConfig(BaseModel):
    dim: int = Field(default=2, ge=2, le=3)
    lambda_rate: float = Field(default=0.01, ge=0)
    region_low: List[float] = Field(default_factory=lambda: [0.0, 0.0])
    region_high: List[float] = Field(default_factory=lambda: [100.0, 100.0])
    p_x: float = Field(default=0.5, ge=0, le=1)
    p_y: float = Field(default=0.5, ge=0, le=1)
    rho: float = Field(default=2.0, gt=0)
    sigma: float = Field(default=1.0, gt=0)
    tau: Optional[List[float]] = None
    rotation: Optional[List[float]] = Field(default=None, description="Angle(s); a Haar-random rotation when absent.")
    colour_labels: Optional[List[str]] = None
    colour_probs: Optional[List[float]] = None
    gamma: float = 0.0
    delta: float = 0.0
    min_spacing: float = Field(default=0.0, ge=0)
    seed: int = 0
    output_dir: str = settings.output_dir

    @field_validator("region_low", "region_high", "tau", "rotation", "colour_labels", "colour_probs", mode="before")
    @classmethod
    def _lists(cls, value):
        return _split_list(value)

    @model_validator(mode="after")
    def _dims(self):
        d = self.dim
        for name in ("region_low", "region_high", "tau"):
            value = getattr(self, name)
            if value is not None and len(value) != d:
                raise ValueError(f"{name} needs {d} values")
        if self.rotation is not None and len(self.rotation) != (1 if d == 2 else 3):
            raise ValueError(f"rotation needs {1 if d == 2 else 3} angle(s) for d={d}")
        return self

    def rotation_matrix(self, rng: np.random.Generator) -> np.ndarray:
        if self.dim == 2:
            theta = self.rotation[0] if self.rotation else geometry.sample_uniform_rotation_2d(rng)
            return geometry.rotation_matrix_2d(theta)
        angles = geometry.EulerAngles3(*self.rotation) if self.rotation else geometry.sample_uniform_rotation_3d(rng)
        return angles.matrix()


def merge(file_values: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Command-line values win over file values; unset flags are absent from overrides."""
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged

