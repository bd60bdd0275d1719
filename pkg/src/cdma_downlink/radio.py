"""Scenario parameters, interference sums and per-link power fractions."""

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidParameterError, InvalidStateError
from .geometry import (
    NUM_SITES,
    MsView,
    NetworkGeometry,
    build_layout,
    gain_row,
    ms_view,
    r_max,
)

DEFAULT_B_CORR = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class PropagationEnv:
    """Path loss exponent and the split of log-normal shadowing.

    zeta_i = a*xi + b*xi_i with a^2 + b^2 = 1; only b enters any formula.
    """
    alpha: float
    sigma_db: float
    b_corr: float = DEFAULT_B_CORR
    a_corr: Optional[float] = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidParameterError(f"alpha must be positive, got {self.alpha}")
        if not self.sigma_db > 0:
            raise InvalidParameterError(f"sigma_db must be positive, got {self.sigma_db}")
        if not 0 < self.b_corr <= 1:
            raise InvalidParameterError(f"b_corr must be in (0, 1], got {self.b_corr}")
        if self.a_corr is None:
            object.__setattr__(self, "a_corr", math.sqrt(max(0.0, 1.0 - self.b_corr ** 2)))
        if abs(self.a_corr ** 2 + self.b_corr ** 2 - 1.0) > 1e-12:
            raise InvalidParameterError(
                f"a_corr^2 + b_corr^2 must equal 1, got {self.a_corr ** 2 + self.b_corr ** 2:.15g}"
            )

    @property
    def tilt_scale(self) -> float:
        """sigma*b*ln(10)/10: the standardized shift produced by one unit of tilt."""
        return self.sigma_db * self.b_corr * math.log(10.0) / 10.0


@dataclass(frozen=True)
class ServiceProfile:
    """Service and air-interface constants (defaults: WCDMA 12.2 kbps voice)."""
    activity: float = 0.5
    bit_rate: float = 12200.0
    chip_rate: float = 3.84e6
    ebio_target_db: float = 4.4
    orthogonality: float = 0.9

    def __post_init__(self):
        if not 0 < self.activity <= 1:
            raise InvalidParameterError(f"activity must be in (0, 1], got {self.activity}")
        if not self.bit_rate > 0 or not self.chip_rate > 0:
            raise InvalidParameterError("bit_rate and chip_rate must be positive")
        if not 0 <= self.orthogonality <= 1:
            raise InvalidParameterError(f"orthogonality must be in [0, 1], got {self.orthogonality}")
        ct = load_constant(self)
        if not (math.isfinite(ct) and ct > 0):
            raise InvalidParameterError(f"load constant must be finite and positive, got {ct}")

    @property
    def intra_residual(self) -> float:
        """X_0 = 1 - u."""
        return 1.0 - self.orthogonality


@dataclass(frozen=True)
class HandoffPolicy:
    """Active set size and cell-selection / soft-handoff thresholds in dB."""
    as_size: int = 1
    cst_db: float = 1.0
    sht_db: float = 3.0

    def __post_init__(self):
        if self.as_size not in (1, 2, 3):
            raise InvalidParameterError(f"as_size must be 1, 2 or 3, got {self.as_size}")
        if not self.cst_db >= 0:
            raise InvalidParameterError(f"cst_db must be >= 0, got {self.cst_db}")
        if not self.sht_db >= 0:
            raise InvalidParameterError(f"sht_db must be >= 0, got {self.sht_db}")

    def cst_xi(self, b_corr: float) -> float:
        return self.cst_db / b_corr

    def sht_xi(self, b_corr: float) -> float:
        return self.sht_db / b_corr


@dataclass(frozen=True)
class ShadowVector:
    """One realization of the 19 independent shadowing components (dB)."""
    xi: tuple

    def __post_init__(self):
        if len(self.xi) != NUM_SITES:
            raise InvalidParameterError(f"ShadowVector needs {NUM_SITES} entries, got {len(self.xi)}")

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "ShadowVector":
        return cls(tuple(float(v) for v in values))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.xi, dtype=float)


@dataclass(frozen=True)
class ScenarioParams:
    """Everything needed to evaluate one MS position."""
    env: PropagationEnv
    service: ServiceProfile = field(default_factory=ServiceProfile)
    policy: HandoffPolicy = field(default_factory=HandoffPolicy)
    theta_deg: float = 15.0
    r1: float = 0.0
    cell_radius: float = 1.0
    ct_scale: float = 1.0

    def __post_init__(self):
        if not self.ct_scale > 0:
            raise InvalidParameterError(f"ct_scale must be positive, got {self.ct_scale}")
        if not self.r1 >= 0:
            raise InvalidParameterError(f"r1 must be non-negative, got {self.r1}")

    @cached_property
    def geometry(self) -> NetworkGeometry:
        return build_layout(self.cell_radius)

    @cached_property
    def view(self) -> MsView:
        return ms_view(self.geometry, self.r1, self.theta_deg)

    @property
    def load_constant(self) -> float:
        return self.ct_scale * load_constant(self.service)

    @property
    def r_over_rmax(self) -> float:
        return self.r1 / r_max(self.theta_deg, self.cell_radius)

    @classmethod
    def at_normalized(cls, r_over_rmax: float, **kwargs) -> "ScenarioParams":
        """Build a scenario with r1 given as a fraction of r_max(theta)."""
        theta = kwargs.get("theta_deg", 15.0)
        radius = kwargs.get("cell_radius", 1.0)
        return cls(r1=r_over_rmax * r_max(theta, radius), **kwargs)


def load_constant(s: ServiceProfile) -> float:
    """C_t = nu * R * [Eb/Io]_t / W."""
    return s.activity * s.bit_rate * 10.0 ** (s.ebio_target_db / 10.0) / s.chip_rate


def interference_sum(view: MsView, env: PropagationEnv, u: float, serving: int,
                     xi: ShadowVector) -> float:
    """(1-u) + sum_{i != j} C_{j,i} 10^{b(xi_i - xi_j)/10} for serving cell j."""
    gains = gain_row(view, serving, env.alpha)
    values = xi.as_array()
    tilt = 10.0 ** (env.b_corr * (values - values[serving - 1]) / 10.0)
    return float((1.0 - u) + np.dot(gains, tilt))


def interference_batch(gains: np.ndarray, b_corr: float, u: float, xi: np.ndarray,
                       serving: np.ndarray) -> np.ndarray:
    """Vectorized interference sums for many samples.

    gains: (N, 19) rows of C_{j,i} for each sample's serving cell (diagonal zeroed)
    xi: (N, 19) shadowing samples; serving: (N,) zero-based serving index
    """
    ref = np.take_along_axis(xi, serving[:, None], axis=1)
    tilt = np.power(10.0, b_corr * (xi - ref) / 10.0)
    return (1.0 - u) + np.einsum("ni,ni->n", gains, tilt)


def _check_positive(*sums: float) -> None:
    for s in sums:
        if not s > 0:
            raise InvalidStateError(f"interference sum must be positive, got {s}")


def beta_hho(ct: float, x: float) -> float:
    """beta_1 = C_t X."""
    _check_positive(x)
    return ct * x


def beta_sho2(ct: float, x: float, y: float) -> float:
    """beta_1k = C_t (1/X + 1/Y)^-1."""
    _check_positive(x, y)
    return ct * x * y / (x + y)


def beta_sho3(ct: float, x: float, y: float, z: float) -> float:
    """beta_1kl = C_t (1/X + 1/Y + 1/Z)^-1."""
    _check_positive(x, y, z)
    return ct * x * y * z / (x * y + x * z + y * z)


def deterministic_beta(params: ScenarioParams) -> float:
    """HHO power fraction with every shadowing term at zero (the sigma -> 0 limit)."""
    gains = gain_row(params.view, 1, params.env.alpha)
    return params.load_constant * (params.service.intra_residual + float(gains.sum()))
