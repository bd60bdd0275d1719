"""Monte-Carlo oracle: sample shadowing, classify, evaluate beta directly."""

import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .errors import InsufficientSamplesError, InvalidParameterError, InvalidStateError
from .geometry import NUM_SITES, gain_row
from .radio import ScenarioParams, interference_batch
from .regions import Classifier, ClassifiedBatch, Connection, ModeKind

logger = logging.getLogger(__name__)

DEFAULT_SEED = 20110401
CHUNK_SIZE = 25_000
MIN_CONDITIONAL_SAMPLES = 500
HARMONIC_SLACK = 1e-12

TermKey = Tuple[str, int]


@dataclass(frozen=True)
class McConfig:
    """Sampling plan; rounds draw from independent substreams of master_seed."""
    scenario: ScenarioParams
    samples_per_round: int = 100_000
    rounds: int = 5
    master_seed: int = DEFAULT_SEED
    workers: int = 4

    def __post_init__(self):
        if self.samples_per_round < 1000:
            raise InvalidParameterError(f"samples_per_round must be >= 1000, got {self.samples_per_round}")
        if self.rounds < 1:
            raise InvalidParameterError(f"rounds must be >= 1, got {self.rounds}")
        if self.workers < 1:
            raise InvalidParameterError(f"workers must be >= 1, got {self.workers}")

    def round_seeds(self) -> List[np.random.SeedSequence]:
        """One child SeedSequence per round, spawned from the master seed."""
        return np.random.SeedSequence(self.master_seed).spawn(self.rounds)


@dataclass
class RoundTally:
    """Associative per-round accumulator."""
    samples: int = 0
    camped: int = 0
    power_sums: np.ndarray = field(default_factory=lambda: np.zeros(5))
    mode_counts: Counter = field(default_factory=Counter)
    connection_counts: Counter = field(default_factory=Counter)

    def accumulate(self, other: "RoundTally") -> None:
        self.samples += other.samples
        self.camped += other.camped
        self.power_sums += other.power_sums
        self.mode_counts.update(other.mode_counts)
        self.connection_counts.update(other.connection_counts)

    @property
    def mean(self) -> float:
        return self.power_sums[1] / self.camped if self.camped else math.nan

    @property
    def std(self) -> float:
        if self.camped < 2:
            return math.nan
        m = self.mean
        return math.sqrt(max(0.0, self.power_sums[2] / self.camped - m * m))


@dataclass
class McEstimate:
    """Pooled Monte-Carlo statistics of beta conditional on camping on cell 1."""
    beta_mean: float
    beta_std: float
    se_mean: float
    se_std: float
    se_mean_between: float
    round_means: List[float]
    round_stds: List[float]
    samples: int
    camped: int
    mode_counts: Dict[str, int]
    connection_counts: Dict[Connection, int]

    @property
    def camping_frequency(self) -> float:
        return self.camped / self.samples

    def occupancy(self, kind: ModeKind) -> float:
        return self.mode_counts.get(kind.name, 0) / self.samples

    def occupancy_se(self, kind: ModeKind) -> float:
        p = self.occupancy(kind)
        return math.sqrt(p * (1.0 - p) / self.samples)

    def camping_se(self) -> float:
        p = self.camping_frequency
        return math.sqrt(p * (1.0 - p) / self.samples)


def draw_shadowing(rng: np.random.Generator, samples: int, sigma: float) -> np.ndarray:
    """samples x NUM_SITES independent per-site shadowing components, N(0, sigma^2) in dB."""
    return rng.normal(0.0, sigma, size=(samples, NUM_SITES))


def _gain_matrix(params: ScenarioParams) -> np.ndarray:
    """Row j holds C_{j,i}; rows of partner cells are only built when r1 > 0."""
    gains = np.zeros((NUM_SITES, NUM_SITES))
    gains[0] = gain_row(params.view, 1, params.env.alpha)
    if params.view.r1 > 0 and params.policy.as_size > 1:
        for j in range(2, NUM_SITES + 1):
            gains[j - 1] = gain_row(params.view, j, params.env.alpha)
    return gains


class _Sampler:
    """Per-scenario constants shared by all rounds."""

    def __init__(self, params: ScenarioParams):
        self.params = params
        self.sigma = params.env.sigma_db
        self.b = params.env.b_corr
        self.u = params.service.orthogonality
        self.ct = params.load_constant
        self.gains = _gain_matrix(params)
        self.classifier = Classifier(params.view, params.env, params.policy)

    def sums(self, xi: np.ndarray, serving: np.ndarray) -> np.ndarray:
        return interference_batch(self.gains[serving], self.b, self.u, xi, serving)

    def beta(self, xi: np.ndarray, cls: ClassifiedBatch) -> np.ndarray:
        """Power fraction of every camped sample (NaN for NotCamped)."""
        n = xi.shape[0]
        beta = np.full(n, np.nan)
        camped = cls.kind != ModeKind.NOT_CAMPED
        if not camped.any():
            return beta
        x = self.sums(xi, np.zeros(n, dtype=np.int64))
        hho = cls.kind == ModeKind.HHO
        beta[hho] = self.ct * x[hho]
        soft = (cls.kind == ModeKind.SHO2) | (cls.kind == ModeKind.SHO3)
        if soft.any():
            y = np.full(n, np.nan)
            y[soft] = self.sums(xi[soft], cls.k[soft])
            two = cls.kind == ModeKind.SHO2
            beta[two] = self.ct * x[two] * y[two] / (x[two] + y[two])
            three = cls.kind == ModeKind.SHO3
            if three.any():
                z = self.sums(xi[three], cls.l[three])
                xs, ys = x[three], y[three]
                beta[three] = self.ct * xs * ys * z / (xs * ys + xs * z + ys * z)
            # per-BS soft-handoff power never exceeds the hard-handoff cost of cell 1
            if np.any(beta[soft] > self.ct * x[soft] * (1.0 + HARMONIC_SLACK)):
                raise InvalidStateError("soft-handoff sample exceeds the hard-handoff bound")
        if np.any(~(beta[camped] > 0)):
            raise InvalidStateError("non-positive power fraction in a camped sample")
        return beta

    def run_round(self, seed: np.random.SeedSequence, samples: int) -> RoundTally:
        rng = np.random.default_rng(seed)
        tally = RoundTally()
        remaining = samples
        while remaining > 0:
            n = min(CHUNK_SIZE, remaining)
            remaining -= n
            xi = draw_shadowing(rng, n, self.sigma)
            cls = self.classifier.classify_batch(xi)
            beta = self.beta(xi, cls)
            camped = ~np.isnan(beta)
            values = beta[camped]
            tally.samples += n
            tally.camped += int(camped.sum())
            tally.power_sums += np.array([values.size] + [np.sum(values ** p) for p in range(1, 5)])
            for kind in ModeKind:
                count = int(np.count_nonzero(cls.kind == kind))
                if count:
                    tally.mode_counts[kind.name] += count
            hho = int(np.count_nonzero(cls.kind == ModeKind.HHO))
            if hho:
                tally.connection_counts[Connection.hho()] += hho
            soft = (cls.kind == ModeKind.SHO2) | (cls.kind == ModeKind.SHO3)
            if not soft.any():
                continue
            keys, counts = np.unique(np.column_stack([cls.kind[soft], cls.k[soft], cls.l[soft]]),
                                     axis=0, return_counts=True)
            for (kind, k, l), count in zip(keys, counts):
                conn = (Connection.sho2(int(k) + 1) if kind == ModeKind.SHO2
                        else Connection.sho3(int(k) + 1, int(l) + 1))
                tally.connection_counts[conn] += int(count)
        return tally


def _run_rounds(cfg: McConfig) -> List[RoundTally]:
    sampler = _Sampler(cfg.scenario)
    seeds = cfg.round_seeds()
    if cfg.workers == 1 or cfg.rounds == 1:
        return [sampler.run_round(s, cfg.samples_per_round) for s in seeds]
    tallies: List[Optional[RoundTally]] = [None] * cfg.rounds
    with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
        futures = {executor.submit(sampler.run_round, s, cfg.samples_per_round): n
                   for n, s in enumerate(seeds)}
        for future in as_completed(futures):
            tallies[futures[future]] = future.result()
    return tallies


def run(cfg: McConfig) -> McEstimate:
    """Estimate beta statistics over rounds x samples_per_round shadowing draws."""
    tallies = _run_rounds(cfg)
    pooled = RoundTally()
    for t in tallies:
        pooled.accumulate(t)
    n = pooled.camped
    if n == 0:
        logger.warning("No Monte-Carlo sample camped on cell 1")
    mean = pooled.mean
    std = pooled.std
    if n >= 2:
        se_mean = std / math.sqrt(n)
        m4 = pooled.power_sums[4] / n - 4 * mean * pooled.power_sums[3] / n \
            + 6 * mean ** 2 * pooled.power_sums[2] / n - 3 * mean ** 4
        se_std = math.sqrt(max(0.0, m4 - std ** 4) / (4.0 * std ** 2 * n)) if std > 0 else 0.0
    else:
        se_mean = se_std = math.nan
    round_means = [t.mean for t in tallies]
    if len(round_means) > 1 and all(math.isfinite(v) for v in round_means):
        se_between = float(np.std(round_means, ddof=1) / math.sqrt(len(round_means)))
    else:
        se_between = math.nan
    return McEstimate(
        beta_mean=mean,
        beta_std=std,
        se_mean=se_mean,
        se_std=se_std,
        se_mean_between=se_between,
        round_means=round_means,
        round_stds=[t.std for t in tallies],
        samples=pooled.samples,
        camped=n,
        mode_counts=dict(pooled.mode_counts),
        connection_counts=dict(pooled.connection_counts),
    )


@dataclass(frozen=True)
class TermEstimate:
    value: float
    se: float
    samples: int


def _term_samples(sampler: _Sampler, xi: np.ndarray, serving: Dict[str, int], key: TermKey) -> np.ndarray:
    factor, i = key
    if factor not in serving:
        raise InvalidParameterError(f"factor {factor!r} not present in this mode")
    s = serving[factor]
    if i == 0:
        return np.full(xi.shape[0], 1.0 - sampler.u)
    if i == s:
        raise InvalidParameterError(f"term {key} is the serving cell of {factor}")
    coef = sampler.gains[s - 1, i - 1]
    return coef * np.power(10.0, sampler.b * (xi[:, i - 1] - xi[:, s - 1]) / 10.0)


def conditional_term_estimate(cfg: McConfig, connection: Connection,
                              term: Union[TermKey, Tuple[TermKey, TermKey]]) -> TermEstimate:
    """Monte-Carlo estimate of E[F_i] or E[F_i G_j] conditional on one subset.

    term is ("X", i) or (("X", i), ("Y", j)); index 0 is the intra-cell residual.
    """
    sampler = _Sampler(cfg.scenario)
    serving = dict(zip(("X", "Y", "Z"), connection.serving))
    pair = isinstance(term[0], tuple)
    total = 0.0
    total_sq = 0.0
    hits = 0
    for seed in cfg.round_seeds():
        rng = np.random.default_rng(seed)
        remaining = cfg.samples_per_round
        while remaining > 0:
            n = min(CHUNK_SIZE, remaining)
            remaining -= n
            xi = draw_shadowing(rng, n, sampler.sigma)
            cls = sampler.classifier.classify_batch(xi)
            mask = cls.kind == connection.kind
            if connection.partners:
                mask &= cls.k == connection.partners[0] - 1
            if len(connection.partners) == 2:
                mask &= cls.l == connection.partners[1] - 1
            if not mask.any():
                continue
            sub = xi[mask]
            if pair:
                values = _term_samples(sampler, sub, serving, term[0]) * _term_samples(sampler, sub, serving, term[1])
            else:
                values = _term_samples(sampler, sub, serving, term)
            hits += values.size
            total += float(values.sum())
            total_sq += float(np.sum(values ** 2))
    if hits < MIN_CONDITIONAL_SAMPLES:
        raise InsufficientSamplesError(
            f"only {hits} samples landed in {connection}, need {MIN_CONDITIONAL_SAMPLES}"
        )
    mean = total / hits
    var = max(0.0, total_sq / hits - mean * mean)
    return TermEstimate(value=mean, se=math.sqrt(var / hits), samples=hits)
