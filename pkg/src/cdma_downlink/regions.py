"""Cell-selection and handoff regions in shadowing space.

Every condition has the form xi_i <= xi_ref + offset (or >=), so a region is a
set of affine bounds plus an integration plan telling the moment engine which
shadowing components are quadrature levels, which one integrates in closed
form, and which ones only appear through an upper bound anchored elsewhere.
"""

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidParameterError
from .geometry import NUM_SITES, SERVING_CELL, MsView, db_offset, db_offset_row
from .quadrature import Affine, Level
from .radio import HandoffPolicy, PropagationEnv, ShadowVector

CHAIN_TOLERANCE = 1e-9


class ModeKind(IntEnum):
    NOT_CAMPED = 0
    HHO = 1
    SHO2 = 2
    SHO3 = 3


@dataclass(frozen=True)
class Connection:
    """Connection mode of an MS camped on cell 1, with its SHO partners."""
    kind: ModeKind
    partners: Tuple[int, ...] = ()

    def __post_init__(self):
        expected = {ModeKind.NOT_CAMPED: 0, ModeKind.HHO: 0, ModeKind.SHO2: 1, ModeKind.SHO3: 2}
        if len(self.partners) != expected[self.kind]:
            raise InvalidParameterError(f"{self.kind.name} takes {expected[self.kind]} partners, got {self.partners}")
        for p in self.partners:
            if not 2 <= p <= NUM_SITES:
                raise InvalidParameterError(f"Partner cell {p} outside 2..{NUM_SITES}")
        if len(set(self.partners)) != len(self.partners):
            raise InvalidParameterError(f"SHO3 partners must differ, got {self.partners}")

    @classmethod
    def hho(cls) -> "Connection":
        return cls(ModeKind.HHO)

    @classmethod
    def sho2(cls, k: int) -> "Connection":
        return cls(ModeKind.SHO2, (k,))

    @classmethod
    def sho3(cls, k: int, l: int) -> "Connection":
        return cls(ModeKind.SHO3, (k, l))

    @classmethod
    def not_camped(cls) -> "Connection":
        return cls(ModeKind.NOT_CAMPED)

    @property
    def serving(self) -> Tuple[int, ...]:
        """Cells carrying the link: 1 followed by the partners."""
        return (SERVING_CELL,) + self.partners

    @property
    def sort_key(self) -> Tuple[int, Tuple[int, ...]]:
        return (int(self.kind), self.partners)

    @property
    def label(self) -> str:
        if self.partners:
            return f"{self.kind.name}({','.join(str(p) for p in self.partners)})"
        return self.kind.name

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True)
class AffineBound:
    """xi_cell <= xi_ref + offset (kind "upper") or >= (kind "lower")."""
    ref_index: int
    offset: float
    kind: str = "upper"

    def __post_init__(self):
        if self.kind not in ("upper", "lower"):
            raise InvalidParameterError(f"bound kind must be 'upper' or 'lower', got {self.kind!r}")

    def value(self, xi: np.ndarray) -> np.ndarray:
        """Bound value for one (19,) vector or a batch (N, 19)."""
        return xi[..., self.ref_index - 1] + self.offset

    def holds(self, cell: int, xi: np.ndarray) -> np.ndarray:
        x = xi[..., cell - 1]
        bound = self.value(xi)
        with np.errstate(invalid="ignore"):
            return x <= bound if self.kind == "upper" else x >= bound


@dataclass(frozen=True)
class IntegrationPlan:
    """How a region's probability integral factorizes.

    grid: cells integrated numerically, outer to inner, with their levels.
    closed: the cell integrated in closed form innermost, if any.
    free: cell -> (anchor cell, offset); each free cell contributes
    A(xi_anchor + offset, tilt). Anchors are always grid cells.
    """
    grid_cells: Tuple[int, ...]
    grid_levels: Tuple[Level, ...]
    closed_cell: Optional[int] = None
    closed_level: Optional[Level] = None
    free: Dict[int, Tuple[int, float]] = field(default_factory=dict)

    def levels(self) -> Tuple[Level, ...]:
        if self.closed_level is None:
            return self.grid_levels
        return self.grid_levels + (self.closed_level,)

    def grid_position(self, cell: int) -> int:
        return self.grid_cells.index(cell)


@dataclass(frozen=True)
class RegionSpec:
    """One subset of the camping event: HHO, SHO2(k) or SHO3(k, l)."""
    connection: Connection
    as_size: int
    bounds: Dict[int, Tuple[AffineBound, ...]]
    plan: IntegrationPlan
    empty: bool = False

    def bounds_for(self, cell: int) -> Tuple[AffineBound, ...]:
        return self.bounds.get(cell, ())

    def contains(self, xi) -> bool:
        """Non-strict membership test for one shadowing vector."""
        values = xi.as_array() if isinstance(xi, ShadowVector) else np.asarray(xi, dtype=float)
        return bool(self.contains_batch(values[None, :])[0])

    def contains_batch(self, xi: np.ndarray) -> np.ndarray:
        inside = np.ones(xi.shape[0], dtype=bool)
        for cell, cell_bounds in self.bounds.items():
            for bound in cell_bounds:
                inside &= bound.holds(cell, xi)
        return inside

    @property
    def is_empty(self) -> bool:
        """True when the region has zero measure (inverted or infinite windows)."""
        return self.empty


def _check_as_size(m: int, allowed: Sequence[int]) -> None:
    if m not in allowed:
        raise InvalidParameterError(f"as_size {m} not valid here, expected one of {tuple(allowed)}")


def _check_partner(k: int) -> None:
    if not 2 <= k <= NUM_SITES:
        raise InvalidParameterError(f"Partner cell {k} outside 2..{NUM_SITES}")


def _window_empty(lower_offset: float, upper_offset: float) -> bool:
    return not (math.isfinite(lower_offset) and math.isfinite(upper_offset)) or upper_offset <= lower_offset


def hho_region(m: int, view: MsView, env: PropagationEnv, policy: HandoffPolicy) -> RegionSpec:
    """Every neighbor stays below the serving cell by cst (AS=1) or by sht (AS>1)."""
    _check_as_size(m, (1, 2, 3))
    r1 = db_offset_row(view, SERVING_CELL, env.alpha, env.b_corr)
    margin = policy.cst_xi(env.b_corr) if m == 1 else -policy.sht_xi(env.b_corr)
    bounds = {}
    free = {}
    for i in range(2, NUM_SITES + 1):
        offset = -r1[i - 1] + margin
        bounds[i] = (AffineBound(SERVING_CELL, offset),)
        free[i] = (SERVING_CELL, offset)
    plan = IntegrationPlan(grid_cells=(SERVING_CELL,), grid_levels=(Level(),), free=free)
    return RegionSpec(Connection.hho(), m, bounds, plan)


def sho2_region(m: int, k: int, view: MsView, env: PropagationEnv, policy: HandoffPolicy) -> RegionSpec:
    """Cell k inside the soft-handoff window of cell 1.

    With AS=2 every other cell must stay below k; with AS=3 every other cell
    must stay outside the window so that no third leg is added.
    """
    _check_as_size(m, (2, 3))
    _check_partner(k)
    cst = policy.cst_xi(env.b_corr)
    sht = policy.sht_xi(env.b_corr)
    r1 = db_offset_row(view, SERVING_CELL, env.alpha, env.b_corr)
    lo_k = -r1[k - 1] - sht
    hi_k = -r1[k - 1] + cst
    empty = _window_empty(lo_k, hi_k)
    bounds = {k: (AffineBound(SERVING_CELL, lo_k, "lower"), AffineBound(SERVING_CELL, hi_k, "upper"))}
    free = {}
    others = [i for i in range(2, NUM_SITES + 1) if i != k]
    if m == 2:
        rk = db_offset_row(view, k, env.alpha, env.b_corr) if not empty else np.zeros(NUM_SITES)
        for i in others:
            bounds[i] = (AffineBound(k, -rk[i - 1]),)
            free[i] = (k, -rk[i - 1])
        grid_levels = (Level(), Level(lower=(Affine(0, lo_k),), upper=(Affine(0, hi_k),)))
        plan = IntegrationPlan(grid_cells=(SERVING_CELL, k), grid_levels=grid_levels, free=free)
    else:
        for i in others:
            bounds[i] = (AffineBound(SERVING_CELL, -r1[i - 1] - sht),)
            free[i] = (SERVING_CELL, -r1[i - 1] - sht)
        closed = Level(lower=(Affine(0, lo_k),), upper=(Affine(0, hi_k),), closed_form=True)
        plan = IntegrationPlan(grid_cells=(SERVING_CELL,), grid_levels=(Level(),),
                               closed_cell=k, closed_level=closed, free=free)
    return RegionSpec(Connection.sho2(k), m, bounds, plan, empty=empty)


def sho3_region(k: int, l: int, view: MsView, env: PropagationEnv, policy: HandoffPolicy) -> RegionSpec:
    """Cells k and l both inside the window of cell 1, k the stronger of the two."""
    _check_partner(k)
    _check_partner(l)
    if k == l:
        raise InvalidParameterError(f"SHO3 partners must differ, got k=l={k}")
    cst = policy.cst_xi(env.b_corr)
    sht = policy.sht_xi(env.b_corr)
    r1 = db_offset_row(view, SERVING_CELL, env.alpha, env.b_corr)
    lo_k, hi_k = -r1[k - 1] - sht, -r1[k - 1] + cst
    lo_l, hi_l = -r1[l - 1] - sht, -r1[l - 1] + cst
    empty = _window_empty(lo_k, hi_k) or _window_empty(lo_l, hi_l)
    if empty:
        r_kl = 0.0
        rl = np.zeros(NUM_SITES)
    else:
        r_kl = db_offset(view, k, l, env.alpha, env.b_corr)
        # xi_l <= xi_k - R_kl meets the window edge of l exactly when xi_k sits on its own edge
        chain = r1[k - 1] + r_kl - r1[l - 1]
        if abs(chain) > CHAIN_TOLERANCE * max(1.0, abs(r1[l - 1])):
            raise InvalidParameterError(f"db offsets break the chain identity for ({k}, {l}): {chain:.3g}")
        rl = db_offset_row(view, l, env.alpha, env.b_corr)
    bounds = {
        k: (AffineBound(SERVING_CELL, lo_k, "lower"), AffineBound(SERVING_CELL, hi_k, "upper")),
        l: (AffineBound(SERVING_CELL, lo_l, "lower"), AffineBound(SERVING_CELL, hi_l, "upper"),
            AffineBound(k, -r_kl, "upper")),
    }
    free = {}
    for i in range(2, NUM_SITES + 1):
        if i in (k, l):
            continue
        bounds[i] = (AffineBound(l, -rl[i - 1]),)
        free[i] = (l, -rl[i - 1])
    # grid over (xi_1, xi_l); xi_k closed form on [max(lo_k, xi_l + R_kl), hi_k]
    grid_levels = (Level(), Level(lower=(Affine(0, lo_l),), upper=(Affine(0, hi_l),)))
    closed = Level(lower=(Affine(0, lo_k), Affine(1, r_kl)), upper=(Affine(0, hi_k),), closed_form=True)
    plan = IntegrationPlan(grid_cells=(SERVING_CELL, l), grid_levels=grid_levels,
                           closed_cell=k, closed_level=closed, free=free)
    return RegionSpec(Connection.sho3(k, l), 3, bounds, plan, empty=empty)


def region_for(connection: Connection, m: int, view: MsView, env: PropagationEnv,
               policy: HandoffPolicy) -> RegionSpec:
    if connection.kind == ModeKind.HHO:
        return hho_region(m, view, env, policy)
    if connection.kind == ModeKind.SHO2:
        return sho2_region(m, connection.partners[0], view, env, policy)
    if connection.kind == ModeKind.SHO3:
        _check_as_size(m, (3,))
        return sho3_region(*connection.partners, view, env, policy)
    raise InvalidParameterError("NotCamped has no region")


def connections(m: int) -> List[Connection]:
    """All subsets of the camping event for active-set size m, in aggregation order."""
    _check_as_size(m, (1, 2, 3))
    result = [Connection.hho()]
    if m >= 2:
        result += [Connection.sho2(k) for k in range(2, NUM_SITES + 1)]
    if m == 3:
        result += [Connection.sho3(k, l) for k in range(2, NUM_SITES + 1)
                   for l in range(2, NUM_SITES + 1) if k != l]
    return result


def enumerate_regions(view: MsView, env: PropagationEnv, policy: HandoffPolicy) -> Iterator[RegionSpec]:
    m = policy.as_size
    for conn in connections(m):
        yield region_for(conn, m, view, env, policy)


@dataclass(frozen=True)
class ClassifiedBatch:
    """Per-sample mode codes and zero-based partner indices (-1 when absent)."""
    kind: np.ndarray
    k: np.ndarray
    l: np.ndarray

    def connection(self, n: int) -> Connection:
        kind = ModeKind(int(self.kind[n]))
        if kind == ModeKind.SHO2:
            return Connection.sho2(int(self.k[n]) + 1)
        if kind == ModeKind.SHO3:
            return Connection.sho3(int(self.k[n]) + 1, int(self.l[n]) + 1)
        return Connection(kind)


class Classifier:
    """Vectorized best-server and active-set decision for one MS position."""

    def __init__(self, view: MsView, env: PropagationEnv, policy: HandoffPolicy):
        self.as_size = policy.as_size
        self.cst = policy.cst_xi(env.b_corr)
        self.sht = policy.sht_xi(env.b_corr)
        self.offsets = db_offset_row(view, SERVING_CELL, env.alpha, env.b_corr)

    def classify_batch(self, xi: np.ndarray) -> ClassifiedBatch:
        """Classify an (N, 19) array of shadowing samples.

        d_i = xi_i - xi_1 + R_{1,i} measures how far neighbor i is above cell 1.
        Ties go to the lower-multiplicity mode and to the smaller cell index.
        """
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        d = xi[:, 1:] - xi[:, :1] + self.offsets[None, 1:]
        n = xi.shape[0]
        rows = np.arange(n)
        top = np.argmax(d, axis=1)
        top_d = d[rows, top]
        kind = np.full(n, int(ModeKind.NOT_CAMPED), dtype=np.int8)
        k = np.full(n, -1, dtype=np.int64)
        l = np.full(n, -1, dtype=np.int64)

        if self.as_size == 1:
            kind[top_d <= self.cst] = ModeKind.HHO
            return ClassifiedBatch(kind, k, l)

        camped = top_d <= self.cst
        hho = camped & (top_d <= -self.sht)
        soft = camped & ~hho
        kind[hho] = ModeKind.HHO
        kind[soft] = ModeKind.SHO2
        k[soft] = top[soft] + 1
        if self.as_size == 3:
            masked = d.copy()
            masked[rows, top] = -np.inf
            second = np.argmax(masked, axis=1)
            three = soft & (masked[rows, second] > -self.sht)
            kind[three] = ModeKind.SHO3
            l[three] = second[three] + 1
        return ClassifiedBatch(kind, k, l)

    def classify(self, xi) -> Connection:
        values = xi.as_array() if isinstance(xi, ShadowVector) else np.asarray(xi, dtype=float)
        return self.classify_batch(values[None, :]).connection(0)


def classify(xi: ShadowVector, m: int, view: MsView, env: PropagationEnv, policy: HandoffPolicy) -> Connection:
    """Connection mode of one shadowing vector under active-set size m."""
    _check_as_size(m, (1, 2, 3))
    if m != policy.as_size:
        policy = HandoffPolicy(as_size=m, cst_db=policy.cst_db, sht_db=policy.sht_db)
    return Classifier(view, env, policy).classify(xi)
