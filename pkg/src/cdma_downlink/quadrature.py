"""Tilted-Gaussian special function A(x, y) and nested Gauss-Legendre integration.

Every integrand in the model is a product of Gaussian densities, exponential
tilts 10^{y b xi / 10} and smooth erf factors. A tilt turns the zero-mean
density into a shifted Gaussian, so each level integrates on a window centered
at the tilt-shifted mean instead of at zero.
"""

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_ndtr, ndtr

from .errors import InvalidParameterError, NumericalDomainError

LN10 = math.log(10.0)
MAX_TILT = 4
SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class QuadratureSpec:
    """Resolution of the fixed-node quadrature."""
    rel_tol_1d: float = 1e-8
    rel_tol_2d: float = 1e-7
    rel_tol_3d: float = 1e-5
    nodes_per_dim: int = 96
    truncation_mult: float = 8.0

    def __post_init__(self):
        if min(self.rel_tol_1d, self.rel_tol_2d, self.rel_tol_3d) <= 0:
            raise InvalidParameterError("rel_tol values must be positive")
        if self.nodes_per_dim < 8:
            raise InvalidParameterError(f"nodes_per_dim must be >= 8, got {self.nodes_per_dim}")
        if self.truncation_mult < 5:
            raise InvalidParameterError(f"truncation_mult must be >= 5, got {self.truncation_mult}")

    def rel_tol(self, levels: int) -> float:
        return {1: self.rel_tol_1d, 2: self.rel_tol_2d}.get(levels, self.rel_tol_3d)

    def refined(self) -> "QuadratureSpec":
        """Same spec with twice the nodes per dimension."""
        return replace(self, nodes_per_dim=2 * self.nodes_per_dim)


@dataclass(frozen=True)
class Tilt:
    """Integer tilt order y: a factor 10^{y b xi / 10} in the integrand."""
    y: int = 0

    def __post_init__(self):
        if abs(self.y) > MAX_TILT:
            raise InvalidParameterError(f"tilt order {self.y} exceeds +/-{MAX_TILT}")


def tilt_scale(sigma: float, b_corr: float) -> float:
    """Standardized shift produced by one tilt unit: sigma b ln(10) / 10."""
    return sigma * b_corr * LN10 / 10.0


def tilted_mean(y: int, sigma: float, b_corr: float) -> float:
    """Mean of the Gaussian left after completing the square: y b sigma^2 ln(10) / 10."""
    return y * sigma * tilt_scale(sigma, b_corr)


def a_fn(x, y: int, sigma: float, b_corr: float):
    """A(x, y) = integral_{-inf}^{x} 10^{y b t / 10} N(t; 0, sigma^2) dt.

    Accepts scalars or arrays for x; +/-inf map to the total mass and zero.
    """
    s = tilt_scale(sigma, b_corr)
    value = math.exp(0.5 * (y * s) ** 2) * ndtr(np.asarray(x, dtype=float) / sigma - y * s)
    return float(value) if np.ndim(value) == 0 else value


def log_a_fn(x, y: int, sigma: float, b_corr: float):
    """log A(x, y), accurate far into the lower tail."""
    s = tilt_scale(sigma, b_corr)
    return 0.5 * (y * s) ** 2 + log_ndtr(np.asarray(x, dtype=float) / sigma - y * s)


def window_mass(lower, upper, y: int, sigma: float, b_corr: float) -> np.ndarray:
    """A(upper, y) - A(lower, y), clipped at zero for empty windows.

    Windows above the tilted mean are evaluated through the upper tail to
    avoid cancellation between two values close to one.
    """
    s = tilt_scale(sigma, b_corr)
    lo = np.asarray(lower, dtype=float) / sigma - y * s
    hi = np.asarray(upper, dtype=float) / sigma - y * s
    upper_tail = lo > 0
    with np.errstate(invalid="ignore"):
        mass = np.where(upper_tail, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))
    mass = np.where(hi > lo, mass, 0.0)
    return math.exp(0.5 * (y * s) ** 2) * np.clip(mass, 0.0, None)


@dataclass(frozen=True)
class Affine:
    """Limit piece: coordinate of an earlier level plus an offset (or a constant)."""
    level: Optional[int]
    offset: float = 0.0

    def value(self, coords: Sequence[np.ndarray], size: int) -> np.ndarray:
        if self.level is None:
            return np.full(size, self.offset)
        return coords[self.level] + self.offset


@dataclass(frozen=True)
class Level:
    """One integration variable.

    lower is the max of its pieces (empty: -inf), upper the min (empty: +inf).
    A closed_form level must be the innermost one and the kernel must not
    depend on it; it integrates to a window mass.
    """
    tilt: int = 0
    lower: Tuple[Affine, ...] = ()
    upper: Tuple[Affine, ...] = ()
    closed_form: bool = False

    def __post_init__(self):
        Tilt(self.tilt)

    def with_tilt(self, tilt: int) -> "Level":
        return replace(self, tilt=tilt)


@dataclass
class Grid:
    """Flattened tensor grid over the numeric levels."""
    coords: List[np.ndarray]
    weights: np.ndarray

    @property
    def size(self) -> int:
        return int(self.weights.size)


@lru_cache(maxsize=16)
def _legendre(nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    t, w = np.polynomial.legendre.leggauss(nodes)
    t.setflags(write=False)
    w.setflags(write=False)
    return t, w


def _limit(pieces: Tuple[Affine, ...], coords: Sequence[np.ndarray], size: int,
           reducer: Callable, default: float) -> np.ndarray:
    if not pieces:
        return np.full(size, default)
    value = pieces[0].value(coords, size)
    for piece in pieces[1:]:
        value = reducer(value, piece.value(coords, size))
    return value


def level_limits(level: Level, coords: Sequence[np.ndarray], size: int) -> Tuple[np.ndarray, np.ndarray]:
    """Evaluate (lower, upper) of a level at every outer grid point."""
    lo = _limit(level.lower, coords, size, np.maximum, -math.inf)
    hi = _limit(level.upper, coords, size, np.minimum, math.inf)
    return lo, hi


def build_grid(levels: Sequence[Level], sigma: float, b_corr: float, spec: QuadratureSpec) -> Grid:
    """Tensor Gauss-Legendre grid with the tilted Gaussian weight folded in.

    Each level's window is its (possibly outer-dependent) limits intersected
    with truncation_mult * sigma around the tilt-shifted mean. Points whose
    window is empty are dropped.
    """
    t, w = _legendre(spec.nodes_per_dim)
    s = tilt_scale(sigma, b_corr)
    coords: List[np.ndarray] = []
    weights = np.ones(1)
    for level in levels:
        if level.closed_form:
            raise InvalidParameterError("closed-form levels are not part of the numeric grid")
        size = weights.size
        lo, hi = level_limits(level, coords, size)
        mu = tilted_mean(level.tilt, sigma, b_corr)
        half = spec.truncation_mult * sigma
        lo = np.maximum(lo, mu - half)
        hi = np.minimum(hi, mu + half)
        width = np.clip(hi - lo, 0.0, None)
        x = lo[:, None] + 0.5 * (t[None, :] + 1.0) * width[:, None]
        density = np.exp(-0.5 * ((x - mu) / sigma) ** 2) / (SQRT_2PI * sigma)
        level_w = math.exp(0.5 * (level.tilt * s) ** 2) * w[None, :] * (0.5 * width)[:, None] * density
        new_weights = (weights[:, None] * level_w).ravel()
        keep = new_weights > 0
        coords = [np.repeat(c, t.size)[keep] for c in coords] + [x.ravel()[keep]]
        weights = new_weights[keep]
    return Grid(coords=coords, weights=weights)


def integrate_nested(levels: Sequence[Level], kernel: Callable[..., np.ndarray],
                     sigma: float, b_corr: float, spec: Optional[QuadratureSpec] = None) -> float:
    """Integrate kernel against the product of tilted Gaussian densities.

    levels run outer to inner (1 to 3 of them); kernel receives one array per
    numeric level. Empty windows contribute exactly zero.
    """
    spec = spec or QuadratureSpec()
    if not 1 <= len(levels) <= 3:
        raise InvalidParameterError(f"integrate_nested supports 1-3 levels, got {len(levels)}")
    if any(lv.closed_form for lv in levels[:-1]):
        raise InvalidParameterError("only the innermost level may be closed-form")
    numeric = [lv for lv in levels if not lv.closed_form]
    grid = build_grid(numeric, sigma, b_corr, spec)
    if grid.size == 0:
        return 0.0
    values = np.broadcast_to(np.asarray(kernel(*grid.coords), dtype=float), (grid.size,))
    bad = ~np.isfinite(values)
    if bad.any():
        idx = int(np.argmax(bad))
        point = {n: float(c[idx]) for n, c in enumerate(grid.coords)}
        raise NumericalDomainError(f"non-finite kernel value at {point}", point)
    if levels[-1].closed_form:
        inner = levels[-1]
        lo, hi = level_limits(inner, grid.coords, grid.size)
        values = values * window_mass(lo, hi, inner.tilt, sigma, b_corr)
    return float(np.dot(grid.weights, values))
