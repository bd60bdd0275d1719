"""Semi-analytic moments of the per-link power fraction.

Each interference sum is a linear combination of terms C_{s,i} 10^{b(xi_i - xi_s)/10},
so every first or second moment needed by the model is a combination of
integrals of exponential monomials over a region. For a region the monomial
integral splits into quadrature levels (xi_1 and possibly one partner), an
optional closed-form level, and a product of A(bound, tilt) factors over the
remaining cells. Only the few cells a monomial actually tilts leave the
untilted product, so all monomials of one grid tilt pattern reduce to three
weighted sums and one weighted Gram matrix.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import log_ndtr

from .errors import InvalidParameterError, InvalidStateError, NoCoverageError
from .geometry import NUM_SITES, SERVING_CELL, gain_ratio
from .quadrature import (
    QuadratureSpec,
    build_grid,
    integrate_nested,
    level_limits,
    log_a_fn,
    tilt_scale,
    window_mass,
)
from .radio import ScenarioParams
from .regions import Connection, IntegrationPlan, ModeKind, RegionSpec, connections, region_for

logger = logging.getLogger(__name__)

FACTOR_NAMES = ("X", "Y", "Z")
DELTA_METHODS = ("printed", "textbook")
STRAIN_THRESHOLD = 0.30
VARIANCE_TOLERANCE = 1e-12
CONVERGENCE_FACTOR = 10.0

TermKey = Tuple[str, int]
PairKey = Tuple[TermKey, TermKey]


@dataclass(frozen=True)
class MomentsConfig:
    """Knobs of the semi-analytic pipeline."""
    prune_partners: bool = False
    partner_floor: float = 1e-6
    min_subset_probability: float = 1e-13
    delta_method: str = "printed"
    workers: int = 8
    check_convergence: bool = False

    def __post_init__(self):
        if self.delta_method not in DELTA_METHODS:
            raise InvalidParameterError(f"delta_method must be one of {DELTA_METHODS}, got {self.delta_method!r}")
        if not self.partner_floor >= 0:
            raise InvalidParameterError(f"partner_floor must be >= 0, got {self.partner_floor}")
        if not self.min_subset_probability >= 0:
            raise InvalidParameterError("min_subset_probability must be >= 0")
        if self.workers < 1:
            raise InvalidParameterError(f"workers must be >= 1, got {self.workers}")


@dataclass
class _GroupSums:
    s0: float
    s1: np.ndarray
    s2: np.ndarray
    s11: np.ndarray


class RegionIntegrator:
    """Integrals of exponential monomials over one region.

    A monomial is a mapping cell -> integer tilt c_n, i.e. the integrand
    prod_n 10^{c_n b xi_n / 10}. Tilts on free cells must be 1 or 2 and at
    most two free cells may be tilted, which covers every first and second
    moment of the interference sums.
    """

    def __init__(self, region: RegionSpec, sigma: float, b_corr: float, quad: QuadratureSpec):
        self.region = region
        self.plan: IntegrationPlan = region.plan
        self.sigma = sigma
        self.b_corr = b_corr
        self.quad = quad
        self.s = tilt_scale(sigma, b_corr)
        self.free_cells = tuple(sorted(self.plan.free))
        self.free_pos = {cell: n for n, cell in enumerate(self.free_cells)}
        self._anchor = np.array([self.plan.grid_position(self.plan.free[c][0]) for c in self.free_cells], dtype=int)
        self._offset = np.array([self.plan.free[c][1] for c in self.free_cells], dtype=float)
        self._sums: Dict[Tuple[Tuple[int, ...], int], _GroupSums] = {}

    def _group(self, grid_tilts: Tuple[int, ...], closed_tilt: int) -> _GroupSums:
        key = (grid_tilts, closed_tilt)
        if key in self._sums:
            return self._sums[key]
        levels = [lv.with_tilt(t) for lv, t in zip(self.plan.grid_levels, grid_tilts)]
        grid = build_grid(levels, self.sigma, self.b_corr, self.quad)
        nfree = len(self.free_cells)
        if grid.size == 0:
            sums = _GroupSums(0.0, np.zeros(nfree), np.zeros(nfree), np.zeros((nfree, nfree)))
            self._sums[key] = sums
            return sums
        weights = grid.weights
        if self.plan.closed_level is not None:
            lo, hi = level_limits(self.plan.closed_level, grid.coords, grid.size)
            weights = weights * window_mass(lo, hi, closed_tilt, self.sigma, self.b_corr)
        anchors = np.stack(grid.coords)[self._anchor] if nfree else np.zeros((0, grid.size))
        z = (anchors + self._offset[:, None]) / self.sigma
        log_base = log_ndtr(z)
        alive = np.isfinite(log_base)
        log_p0 = log_base.sum(axis=0)
        with np.errstate(invalid="ignore", over="ignore"):
            rho1 = np.where(alive, np.exp(0.5 * self.s ** 2 + log_ndtr(z - self.s) - log_base), 0.0)
            rho2 = np.where(alive, np.exp(2.0 * self.s ** 2 + log_ndtr(z - 2.0 * self.s) - log_base), 0.0)
        w = weights * np.exp(log_p0)
        sums = _GroupSums(
            s0=float(w.sum()),
            s1=rho1 @ w,
            s2=rho2 @ w,
            s11=(rho1 * w) @ rho1.T,
        )
        self._sums[key] = sums
        return sums

    def monomial(self, tilts: Mapping[int, int]) -> float:
        """Unnormalized integral of prod_n 10^{tilts[n] b xi_n / 10} over the region."""
        if self.region.is_empty:
            return 0.0
        grid_tilts = tuple(tilts.get(c, 0) for c in self.plan.grid_cells)
        closed_tilt = tilts.get(self.plan.closed_cell, 0) if self.plan.closed_cell is not None else 0
        free = [(self.free_pos[c], t) for c, t in tilts.items() if c in self.free_pos and t != 0]
        sums = self._group(grid_tilts, closed_tilt)
        if not free:
            return sums.s0
        if len(free) == 1:
            n, t = free[0]
            if t == 1:
                return float(sums.s1[n])
            if t == 2:
                return float(sums.s2[n])
        elif len(free) == 2 and free[0][1] == 1 and free[1][1] == 1:
            return float(sums.s11[free[0][0], free[1][0]])
        raise InvalidStateError(f"unsupported free-cell tilts {dict(tilts)} in {self.region.connection}")

    def probability(self) -> float:
        return self.monomial({})


def subset_probability(region: RegionSpec, sigma: float, b_corr: float,
                       quad: Optional[QuadratureSpec] = None) -> float:
    """P(region) through the generic nested integrator."""
    quad = quad or QuadratureSpec()
    if region.is_empty:
        return 0.0
    plan = region.plan
    cells = sorted(plan.free)
    anchor = [plan.grid_position(plan.free[c][0]) for c in cells]
    offsets = np.array([plan.free[c][1] for c in cells])

    def kernel(*coords):
        bounds = np.stack([coords[a] for a in anchor]) + offsets[:, None]
        return np.exp(log_a_fn(bounds, 0, sigma, b_corr).sum(axis=0))

    return min(1.0, max(0.0, integrate_nested(plan.levels(), kernel, sigma, b_corr, quad)))


def prob_hho(region: RegionSpec, params: ScenarioParams, quad: Optional[QuadratureSpec] = None) -> float:
    _expect(region, ModeKind.HHO)
    return subset_probability(region, params.env.sigma_db, params.env.b_corr, quad)


def prob_sho2(region: RegionSpec, params: ScenarioParams, quad: Optional[QuadratureSpec] = None) -> float:
    _expect(region, ModeKind.SHO2)
    return subset_probability(region, params.env.sigma_db, params.env.b_corr, quad)


def prob_sho3(region: RegionSpec, params: ScenarioParams, quad: Optional[QuadratureSpec] = None) -> float:
    _expect(region, ModeKind.SHO3)
    return subset_probability(region, params.env.sigma_db, params.env.b_corr, quad)


def _expect(region: RegionSpec, kind: ModeKind) -> None:
    if region.connection.kind != kind:
        raise InvalidParameterError(f"expected a {kind.name} region, got {region.connection}")


@dataclass
class TermSet:
    """Conditional expectations of the interference sums over one subset.

    terms holds every individual E[F_i] keyed ("X", i) and every pairwise
    E[F_i G_j] keyed (("X", i), ("Y", j)); index 0 is the intra-cell residual.
    """
    connection: Connection
    probability: float
    factors: Tuple[str, ...]
    means: Dict[str, float] = field(default_factory=dict)
    second: Dict[Tuple[str, str], float] = field(default_factory=dict)
    terms: Dict[Union[TermKey, PairKey], float] = field(default_factory=dict)

    def mean(self, f: str) -> float:
        return self.means[f]

    def raw(self, f: str, g: str) -> float:
        return self.second[(f, g)] if (f, g) in self.second else self.second[(g, f)]

    def covariance(self, f: str, g: str) -> float:
        return self.raw(f, g) - self.means[f] * self.means[g]

    def variance(self, f: str) -> float:
        return self.covariance(f, f)


def _factor_terms(params: ScenarioParams, serving: int) -> List[Tuple[int, float, Dict[int, int]]]:
    """(index, coefficient, tilts) for every term of the sum served by `serving`."""
    u = params.service.orthogonality
    out = [(0, 1.0 - u, {})]
    for i in range(1, NUM_SITES + 1):
        if i == serving:
            continue
        coef = gain_ratio(params.view, serving, i, params.env.alpha)
        if coef == 0.0:
            continue
        out.append((i, coef, {i: 1, serving: -1}))
    return out


def _merge(a: Dict[int, int], b: Dict[int, int]) -> Dict[int, int]:
    merged = dict(a)
    for cell, t in b.items():
        merged[cell] = merged.get(cell, 0) + t
    return {cell: t for cell, t in merged.items() if t != 0}


def subset_terms(region: RegionSpec, params: ScenarioParams, quad: Optional[QuadratureSpec] = None,
                 probability: Optional[float] = None) -> TermSet:
    """Evaluate the full conditional term set of a subset."""
    quad = quad or QuadratureSpec()
    conn = region.connection
    integrator = RegionIntegrator(region, params.env.sigma_db, params.env.b_corr, quad)
    p = integrator.probability() if probability is None else probability
    factors = FACTOR_NAMES[: len(conn.serving)]
    result = TermSet(connection=conn, probability=p, factors=factors)
    if not p > 0:
        return result
    expansions = {f: _factor_terms(params, s) for f, s in zip(factors, conn.serving)}

    for f in factors:
        total = 0.0
        for i, coef, tilts in expansions[f]:
            value = coef * integrator.monomial(tilts) / p
            result.terms[(f, i)] = value
            total += value
        result.means[f] = total

    for a, f in enumerate(factors):
        for g in factors[a:]:
            total = 0.0
            for i, ci, ti in expansions[f]:
                for j, cj, tj in expansions[g]:
                    if f == g and j < i:
                        continue
                    value = ci * cj * integrator.monomial(_merge(ti, tj)) / p
                    result.terms[((f, i), (g, j))] = value
                    total += value if (f != g or i == j) else 2.0 * value
            result.second[(f, g)] = total
    return result


def hho_terms(region: RegionSpec, params: ScenarioParams, quad: Optional[QuadratureSpec] = None) -> TermSet:
    _expect(region, ModeKind.HHO)
    return subset_terms(region, params, quad)


def sho2_terms(region: RegionSpec, params: ScenarioParams, quad: Optional[QuadratureSpec] = None) -> TermSet:
    _expect(region, ModeKind.SHO2)
    return subset_terms(region, params, quad)


def sho3_terms(region: RegionSpec, params: ScenarioParams, quad: Optional[QuadratureSpec] = None) -> TermSet:
    _expect(region, ModeKind.SHO3)
    return subset_terms(region, params, quad)


def term_value(terms: TermSet, first: TermKey, second: Optional[TermKey] = None) -> float:
    """Look up E[F_i] or E[F_i G_j] regardless of argument order."""
    if second is None:
        return terms.terms[first]
    order = {f: n for n, f in enumerate(terms.factors)}
    a, b = sorted((first, second), key=lambda t: (order[t[0]], t[1]))
    return terms.terms[(a, b)]


@dataclass
class SubsetMoments:
    """Conditional moments of beta over one subset of the camping event."""
    connection: Connection
    probability: float
    beta_mean: Optional[float] = None
    beta_sq_mean: Optional[float] = None
    terms: Optional[TermSet] = None
    correction_ratio: float = 0.0
    variance_negative: bool = False
    converged: bool = True

    @property
    def defined(self) -> bool:
        return self.beta_mean is not None and self.beta_sq_mean is not None


def hho_moments(terms: TermSet, ct: float) -> SubsetMoments:
    """beta_1 = C_t X, so both moments are exact."""
    x = terms.mean("X")
    return SubsetMoments(
        connection=terms.connection,
        probability=terms.probability,
        beta_mean=ct * x,
        beta_sq_mean=ct * ct * terms.raw("X", "X"),
        terms=terms,
    )


def sho2_moments(terms: TermSet, ct: float, delta_method: str = "printed") -> SubsetMoments:
    """Second-order delta method for C_t XY/(X+Y)."""
    x, y = terms.mean("X"), terms.mean("Y")
    s = x + y
    if not s > 0:
        raise InvalidStateError(f"mean interference sums must be positive, got {x}, {y}")
    vx, vy, cxy = terms.variance("X"), terms.variance("Y"), terms.covariance("X", "Y")
    g0 = x * y / s
    # both conventions coincide for two legs
    mean = g0 - (vx * y * y + vy * x * x - 2.0 * cxy * x * y) / s ** 3
    spread = (vx * y ** 4 + vy * x ** 4 + 2.0 * cxy * x * x * y * y) / s ** 4
    return _assemble(terms, ct, g0, mean, spread)


def sho3_moments(terms: TermSet, ct: float, delta_method: str = "printed") -> SubsetMoments:
    """Second-order delta method for C_t XYZ/(XY+XZ+YZ).

    "printed" doubles the diagonal curvature terms of the mean; "textbook"
    uses the plain half-Hessian expansion.
    """
    if delta_method not in DELTA_METHODS:
        raise InvalidParameterError(f"delta_method must be one of {DELTA_METHODS}, got {delta_method!r}")
    m = [terms.mean(f) for f in ("X", "Y", "Z")]
    d = m[0] * m[1] + m[0] * m[2] + m[1] * m[2]
    if not d > 0:
        raise InvalidStateError(f"mean interference sums must be positive, got {m}")
    g0 = m[0] * m[1] * m[2] / d
    diag = 2.0 if delta_method == "printed" else 1.0
    names = ("X", "Y", "Z")
    curvature = 0.0
    spread = 0.0
    for a in range(3):
        others = [m[n] for n in range(3) if n != a]
        p_other = others[0] * others[1]
        var = terms.variance(names[a])
        curvature -= diag * var * (others[0] + others[1]) * p_other ** 2 / d ** 3
        spread += var * p_other ** 4 / d ** 4
    for a in range(3):
        for b in range(a + 1, 3):
            c = 3 - a - b
            cov = terms.covariance(names[a], names[b])
            curvature += 2.0 * cov * m[a] * m[b] * m[c] ** 3 / d ** 3
            spread += 2.0 * cov * (m[a] * m[b]) ** 2 * m[c] ** 4 / d ** 4
    return _assemble(terms, ct, g0, g0 + curvature, spread)


def _assemble(terms: TermSet, ct: float, g0: float, mean: float, spread: float) -> SubsetMoments:
    beta0 = ct * g0
    beta_mean = ct * mean
    beta_sq = beta0 ** 2 + ct * ct * spread + 2.0 * beta0 * (beta_mean - beta0)
    ratio = abs(beta_mean - beta0) / beta0 if beta0 > 0 else 0.0
    negative = beta_sq - beta_mean ** 2 < -VARIANCE_TOLERANCE * max(beta_mean ** 2, 1e-300)
    if ratio > STRAIN_THRESHOLD:
        logger.warning("Taylor correction is %.0f%% of the leading term in %s",
                       100 * ratio, terms.connection)
    if negative:
        logger.warning("Assembled variance is negative in %s", terms.connection)
    return SubsetMoments(
        connection=terms.connection,
        probability=terms.probability,
        beta_mean=beta_mean,
        beta_sq_mean=beta_sq,
        terms=terms,
        correction_ratio=ratio,
        variance_negative=negative,
    )


@dataclass
class MomentReport:
    """Aggregate beta statistics of one MS position."""
    beta_mean: float
    beta_std: float
    beta_sq_mean: float
    camping_probability: float
    subsets: List[SubsetMoments]
    variance_clamped: bool = False
    max_correction_ratio: float = 0.0
    variance_negative: bool = False
    unconverged_subsets: int = 0
    pruned_partners: int = 0
    scenario: Optional[ScenarioParams] = None
    quadrature: Optional[QuadratureSpec] = None

    @property
    def taylor_strained(self) -> bool:
        return self.max_correction_ratio > STRAIN_THRESHOLD

    def occupancy(self, kind: ModeKind) -> float:
        """Unconditional probability of one connection mode."""
        return sum(s.probability for s in self.subsets if s.connection.kind == kind)

    def subset(self, connection: Connection) -> SubsetMoments:
        for s in self.subsets:
            if s.connection == connection:
                return s
        raise KeyError(connection.label)


def aggregate(subsets: Sequence[SubsetMoments]) -> MomentReport:
    """Probability-weighted combination of the per-subset conditional moments."""
    ordered = sorted(subsets, key=lambda s: s.connection.sort_key)
    total = math.fsum(s.probability for s in ordered)
    usable = [s for s in ordered if s.defined and s.probability > 0]
    weight = math.fsum(s.probability for s in usable)
    if not total > 0 or not weight > 0:
        raise NoCoverageError("camping probability is zero; the MS never camps on cell 1 here")
    mean = math.fsum(s.probability * s.beta_mean for s in usable) / weight
    second = math.fsum(s.probability * s.beta_sq_mean for s in usable) / weight
    var = second - mean * mean
    clamped = var < 0
    if clamped:
        if var < -VARIANCE_TOLERANCE * mean * mean:
            logger.warning("Aggregate variance %.3g clamped to zero", var)
        var = 0.0
    return MomentReport(
        beta_mean=mean,
        beta_std=math.sqrt(var),
        beta_sq_mean=second,
        camping_probability=total,
        subsets=list(ordered),
        variance_clamped=clamped,
        max_correction_ratio=max((s.correction_ratio for s in usable), default=0.0),
        variance_negative=any(s.variance_negative for s in usable),
        unconverged_subsets=sum(not s.converged for s in ordered),
    )


def _pruned(conn: Connection, params: ScenarioParams, cfg: MomentsConfig) -> bool:
    if not cfg.prune_partners or not conn.partners:
        return False
    return any(gain_ratio(params.view, SERVING_CELL, p, params.env.alpha) < cfg.partner_floor
               for p in conn.partners)


def evaluate_subset(region: RegionSpec, params: ScenarioParams, quad: QuadratureSpec,
                    cfg: MomentsConfig) -> SubsetMoments:
    """Probability and, when it is large enough, conditional moments of one subset."""
    conn = region.connection
    if region.is_empty:
        return SubsetMoments(connection=conn, probability=0.0)
    integrator = RegionIntegrator(region, params.env.sigma_db, params.env.b_corr, quad)
    p = min(1.0, max(0.0, integrator.probability()))
    converged = not cfg.check_convergence or probability_converged(region, params, quad, p, cfg)
    if p <= cfg.min_subset_probability:
        return SubsetMoments(connection=conn, probability=p, converged=converged)
    terms = subset_terms(region, params, quad, probability=p)
    ct = params.load_constant
    if conn.kind == ModeKind.HHO:
        result = hho_moments(terms, ct)
    elif conn.kind == ModeKind.SHO2:
        result = sho2_moments(terms, ct, cfg.delta_method)
    else:
        result = sho3_moments(terms, ct, cfg.delta_method)
    result.converged = converged
    return result


def probability_converged(region: RegionSpec, params: ScenarioParams, quad: QuadratureSpec,
                          p: float, cfg: MomentsConfig) -> bool:
    """True when doubling the nodes moves P(region) by less than rel_tol * 10.

    rel_tol follows the dimension of the integral, closed-form level included.
    """
    fine = RegionIntegrator(region, params.env.sigma_db, params.env.b_corr, quad.refined()).probability()
    tol = CONVERGENCE_FACTOR * quad.rel_tol(len(region.plan.levels()))
    if abs(fine - p) <= tol * max(abs(fine), abs(p)) + cfg.min_subset_probability:
        return True
    logger.warning("P(%s) moved from %.10g to %.10g on node doubling", region.connection, p, fine)
    return False


def compute_report(params: ScenarioParams, quad: Optional[QuadratureSpec] = None,
                   cfg: Optional[MomentsConfig] = None) -> MomentReport:
    """Full semi-analytic evaluation of one MS position."""
    quad = quad or QuadratureSpec()
    cfg = cfg or MomentsConfig()
    m = params.policy.as_size
    selected = [c for c in connections(m) if not _pruned(c, params, cfg)]
    pruned = len(connections(m)) - len(selected)
    if pruned:
        logger.warning("Partner pruning skipped %d subsets (floor %.1e)", pruned, cfg.partner_floor)

    def run(conn: Connection) -> SubsetMoments:
        region = region_for(conn, m, params.view, params.env, params.policy)
        return evaluate_subset(region, params, quad, cfg)

    if cfg.workers == 1 or len(selected) == 1:
        results = [run(c) for c in selected]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
            results = list(executor.map(run, selected))

    report = aggregate(results)
    report.pruned_partners = pruned
    report.scenario = params
    report.quadrature = quad
    return report
