"""Hexagonal 19-cell layout, MS-to-BS distances and path-gain ratios."""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import DegeneratePositionError, InvalidParameterError

NUM_SITES = 19
SERVING_CELL = 1
SQRT3 = math.sqrt(3.0)


def _unit_layout() -> np.ndarray:
    """Site coordinates for R=1, ordered 1 (center), 2-7, 8-13, 14-19.

    Cells have a flat edge facing theta=0, so the first tier sits across the
    edges at 60*k degrees. The second tier has the 2*sqrt(3) ring on the same
    bearings and the 3R ring on the corner bearings 30+60*k.
    """
    angles = np.radians(60.0 * np.arange(6))
    corner_angles = angles + math.radians(30.0)
    rings = [
        (SQRT3, angles),
        (2.0 * SQRT3, angles),
        (3.0, corner_angles),
    ]
    sites = [np.zeros((1, 2))]
    for dist, ang in rings:
        sites.append(np.column_stack([dist * np.cos(ang), dist * np.sin(ang)]))
    return np.vstack(sites)


_UNIT_SITES = _unit_layout()


@dataclass(frozen=True)
class NetworkGeometry:
    """Center cell plus two tiers of equal hexagonal cells."""
    cell_radius: float
    sites: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        if len(self.sites) != NUM_SITES:
            raise InvalidParameterError(f"Expected {NUM_SITES} sites, got {len(self.sites)}")
        if self.sites[0] != (0.0, 0.0):
            raise InvalidParameterError("Site 1 must sit at the origin")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.sites, dtype=float)


@dataclass(frozen=True)
class MsView:
    """Distances from one MS position to all 19 base stations.

    `r[i - 1]` is r_i, so `r[0]` is the distance to the serving BS_1.
    """
    r: Tuple[float, ...]
    r1: float
    theta_deg: float

    def distance(self, i: int) -> float:
        _check_index(i)
        return self.r[i - 1]

    @property
    def distances(self) -> np.ndarray:
        return np.asarray(self.r, dtype=float)


def _check_index(i: int) -> None:
    if not 1 <= i <= NUM_SITES:
        raise InvalidParameterError(f"Cell index {i} outside 1..{NUM_SITES}")


def build_layout(cell_radius: float) -> NetworkGeometry:
    """Build the 19-site layout for a given center-to-corner radius."""
    if not cell_radius > 0 or not math.isfinite(cell_radius):
        raise InvalidParameterError(f"cell_radius must be positive, got {cell_radius}")
    coords = cell_radius * _UNIT_SITES
    coords[0] = (0.0, 0.0)
    return NetworkGeometry(
        cell_radius=float(cell_radius),
        sites=tuple((float(x), float(y)) for x, y in coords),
    )


def ms_view(geom: NetworkGeometry, r1: float, theta1: float) -> MsView:
    """Distances from the MS at polar position (r1, theta1) to every site."""
    if not r1 >= 0:
        raise InvalidParameterError(f"r1 must be non-negative, got {r1}")
    theta = math.radians(theta1)
    position = np.array([r1 * math.cos(theta), r1 * math.sin(theta)])
    dists = np.hypot(*(geom.as_array() - position).T)
    dists[0] = r1
    return MsView(r=tuple(float(d) for d in dists), r1=float(r1), theta_deg=float(theta1))


def gain_ratio(view: MsView, j: int, i: int, alpha: float) -> float:
    """C_{j,i} = (r_j / r_i)^alpha."""
    r_j = view.distance(j)
    r_i = view.distance(i)
    if r_i == 0.0:
        raise DegeneratePositionError(f"MS is co-located with BS_{i}")
    if r_j == 0.0:
        return 0.0
    return (r_j / r_i) ** alpha


def db_offset(view: MsView, j: int, i: int, alpha: float, b_corr: float) -> float:
    """R_{j,i} = 10 log10(C_{j,i}) / b, or -inf when C_{j,i} is zero."""
    if not b_corr > 0:
        raise InvalidParameterError(f"b_corr must be positive, got {b_corr}")
    if gain_ratio(view, j, i, alpha) == 0.0:
        return -math.inf
    # log of each distance separately keeps R_{1,k} + R_{k,l} = R_{1,l} tight
    return 10.0 * alpha * (math.log10(view.distance(j)) - math.log10(view.distance(i))) / b_corr


def db_offset_row(view: MsView, j: int, alpha: float, b_corr: float) -> np.ndarray:
    """R_{j,i} for i = 1..19 as a length-19 array (entry j is 0)."""
    row = np.empty(NUM_SITES)
    for i in range(1, NUM_SITES + 1):
        row[i - 1] = 0.0 if i == j else db_offset(view, j, i, alpha, b_corr)
    return row


def gain_row(view: MsView, j: int, alpha: float) -> np.ndarray:
    """C_{j,i} for i = 1..19 with the diagonal entry zeroed (no self-interference)."""
    row = np.empty(NUM_SITES)
    for i in range(1, NUM_SITES + 1):
        row[i - 1] = 0.0 if i == j else gain_ratio(view, j, i, alpha)
    return row


def fold_theta(theta_deg: float) -> float:
    """Fold any polar angle into [0, 30] using the 60-degree and mirror symmetries."""
    t = math.fmod(theta_deg, 60.0)
    if t < 0:
        t += 60.0
    return 60.0 - t if t > 30.0 else t


def r_max(theta1: float, cell_radius: float) -> float:
    """Distance from the cell center to its border along theta1."""
    if not cell_radius > 0:
        raise InvalidParameterError(f"cell_radius must be positive, got {cell_radius}")
    t = math.radians(fold_theta(theta1))
    return SQRT3 * cell_radius / (2.0 * math.cos(t))
