"""Sweep orchestration: theory, Monte-Carlo, comparison and figure data."""

import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd

from . import __version__
from .config import FigureFamily, ScenarioConfig
from .errors import NoCoverageError
from .moments import MomentReport, compute_report
from .montecarlo import McEstimate, run as run_mc
from .radio import ScenarioParams
from .regions import ModeKind
from .utils.logging import log_point, log_summary, setup_logger
from .utils.timing import Timer

SCHEMA_VERSION = 1
GATE_SE = 3.0
SOFT_HANDOFF_BUDGET = 0.05
ABS_TOLERANCE = 1e-9

SCENARIO_COLUMNS = [
    "schema_version", "label", "as_size", "alpha", "sigma_db", "b_corr", "cst_db", "sht_db",
    "theta_deg", "ct_scale", "r_over_rmax", "r1",
]
THEORY_COLUMNS = [
    "p_camp_theory", "p_hho_theory", "p_sho2_theory", "p_sho3_theory",
    "beta_mean_theory", "beta_std_theory", "taylor_strained", "variance_clamped", "variance_negative",
    "unconverged_subsets", "runtime_theory_sec",
]
MC_COLUMNS = [
    "beta_mean_mc", "beta_std_mc", "se_mean_mc", "se_std_mc", "se_mean_between_mc",
    "p_camp_mc", "p_hho_mc", "p_sho2_mc", "p_sho3_mc", "p_not_camped_mc", "runtime_mc_sec",
]
OUTPUT_COLUMNS = SCENARIO_COLUMNS + THEORY_COLUMNS + MC_COLUMNS
COMPARE_COLUMNS = OUTPUT_COLUMNS + [
    "delta_mean", "delta_mean_se", "rel_gap_mean", "delta_std", "delta_std_se", "tolerance_mean", "within_gate",
]
FIGURE_COLUMNS = ["curve", "r_over_rmax", "value"]

logger = logging.getLogger(__name__)


@dataclass
class PointResult:
    """Theory and Monte-Carlo outcome of one MS position."""
    index: int
    params: ScenarioParams
    report: Optional[MomentReport] = None
    estimate: Optional[McEstimate] = None
    runtime_theory_sec: Optional[float] = None
    runtime_mc_sec: Optional[float] = None
    no_coverage: bool = False

    def as_row(self, cfg: ScenarioConfig) -> Dict[str, Any]:
        p = self.params
        row: Dict[str, Any] = {c: None for c in OUTPUT_COLUMNS}
        row.update({
            "schema_version": SCHEMA_VERSION,
            "label": cfg.label,
            "as_size": p.policy.as_size,
            "alpha": p.env.alpha,
            "sigma_db": p.env.sigma_db,
            "b_corr": p.env.b_corr,
            "cst_db": p.policy.cst_db,
            "sht_db": p.policy.sht_db,
            "theta_deg": p.theta_deg,
            "ct_scale": p.ct_scale,
            "r_over_rmax": p.r_over_rmax,
            "r1": p.r1,
        })
        if self.no_coverage:
            row.update({"p_camp_theory": 0.0, "runtime_theory_sec": self.runtime_theory_sec})
        if self.report is not None:
            r = self.report
            row.update({
                "p_camp_theory": r.camping_probability,
                "p_hho_theory": r.occupancy(ModeKind.HHO),
                "p_sho2_theory": r.occupancy(ModeKind.SHO2),
                "p_sho3_theory": r.occupancy(ModeKind.SHO3),
                "beta_mean_theory": r.beta_mean,
                "beta_std_theory": r.beta_std,
                "taylor_strained": r.taylor_strained,
                "variance_clamped": r.variance_clamped,
                "variance_negative": r.variance_negative,
                "unconverged_subsets": r.unconverged_subsets,
                "runtime_theory_sec": self.runtime_theory_sec,
            })
        if self.estimate is not None:
            e = self.estimate
            row.update({
                "beta_mean_mc": e.beta_mean,
                "beta_std_mc": e.beta_std,
                "se_mean_mc": e.se_mean,
                "se_std_mc": e.se_std,
                "se_mean_between_mc": e.se_mean_between,
                "p_camp_mc": e.camping_frequency,
                "p_hho_mc": e.occupancy(ModeKind.HHO),
                "p_sho2_mc": e.occupancy(ModeKind.SHO2),
                "p_sho3_mc": e.occupancy(ModeKind.SHO3),
                "p_not_camped_mc": e.occupancy(ModeKind.NOT_CAMPED),
                "runtime_mc_sec": self.runtime_mc_sec,
            })
        return row


def gate_tolerance(as_size: int, se: float, reference: float) -> float:
    """Allowed |theory - MC| gap: 3 SE, or the Taylor budget for soft handoff."""
    tol = GATE_SE * se if math.isfinite(se) else 0.0
    if as_size > 1:
        tol = max(tol, SOFT_HANDOFF_BUDGET * abs(reference))
    return max(tol, ABS_TOLERANCE)


def _in_se(delta: float, se: Optional[float]) -> Optional[float]:
    if se is None or not math.isfinite(se):
        return None
    if se == 0:
        return 0.0 if delta == 0 else math.copysign(math.inf, delta)
    return delta / se


def compare_row(row: Dict[str, Any]) -> Dict[str, Any]:
    """Add theory-minus-MC deltas and the gate verdict to an output row."""
    out = dict(row)
    theory, mc, se = row["beta_mean_theory"], row["beta_mean_mc"], row["se_mean_mc"]
    if theory is None or mc is None:
        out.update({"delta_mean": None, "delta_mean_se": None, "rel_gap_mean": None,
                    "delta_std": None, "delta_std_se": None, "tolerance_mean": None, "within_gate": False})
        return out
    delta = theory - mc
    tol = gate_tolerance(row["as_size"], se, mc)
    delta_std = row["beta_std_theory"] - row["beta_std_mc"]
    se_std = row["se_std_mc"]
    out.update({
        "delta_mean": delta,
        "delta_mean_se": _in_se(delta, se),
        "rel_gap_mean": abs(delta) / abs(mc) if mc else None,
        "delta_std": delta_std,
        "delta_std_se": _in_se(delta_std, se_std),
        "tolerance_mean": tol,
        "within_gate": abs(delta) <= tol,
    })
    return out


class PowerModel:
    """Runs one scenario file over its MS positions."""

    VERSION = __version__

    def __init__(self, config: ScenarioConfig, log_path: Path = Path("logs"), verbose: bool = False,
                 workers: int = 4):
        self.config = config
        self.log_path = log_path
        self.verbose = verbose
        self.workers = max(1, workers)
        self.logger: Optional[logging.Logger] = None
        self.run_id: Optional[str] = None

    def _start_run(self, command: str) -> None:
        self.run_id = f"{datetime.now(timezone.utc).strftime('%Y-%m-%dT%H-%M-%S')}_{command}"
        self.logger = setup_logger(self.log_path, self.run_id, verbose=self.verbose)

    def evaluate_point(self, index: int, run_theory: bool = True, run_mc_oracle: bool = False) -> PointResult:
        params = self.config.params_at(index)
        result = PointResult(index=index, params=params)
        if run_theory:
            with Timer() as t:
                try:
                    result.report = compute_report(params, self.config.quadrature, self.config.moments)
                except NoCoverageError as e:
                    logger.warning("No coverage at r/r_max=%.4f: %s", params.r_over_rmax, e)
                    result.no_coverage = True
            result.runtime_theory_sec = t.elapsed_seconds
        if run_mc_oracle:
            with Timer() as t:
                result.estimate = run_mc(self.config.mc_config(params, workers=self.workers))
            result.runtime_mc_sec = t.elapsed_seconds
        return result

    def sweep(self, run_theory: bool = True, run_mc_oracle: bool = False) -> List[PointResult]:
        """Evaluate every sweep point; results come back in input order."""
        indices = range(self.config.points)
        if self.workers == 1 or self.config.points == 1:
            results = [self.evaluate_point(n, run_theory, run_mc_oracle) for n in indices]
        else:
            results: List[Optional[PointResult]] = [None] * self.config.points
            with ThreadPoolExecutor(max_workers=self.workers) as executor:
                futures = {executor.submit(self.evaluate_point, n, run_theory, run_mc_oracle): n for n in indices}
                for future in as_completed(futures):
                    results[futures[future]] = future.result()
        if self.logger is not None:
            for r in results:
                log_point(self.logger, r.as_row(self.config))
        return results

    def _summary(self, command: str, rows: List[Dict[str, Any]], timer: Timer, **extra: Any) -> Dict[str, Any]:
        summary = {
            "run_id": self.run_id,
            "command": command,
            "version": self.VERSION,
            "label": self.config.label,
            "as_size": self.config.as_size,
            "points": len(rows),
            "runtime_sec": round(timer.elapsed_seconds, 3),
            "config": self.config.effective_config(),
            **extra,
        }
        if self.logger is not None:
            log_summary(self.logger, summary)
        return summary

    def compute(self, run_mc_oracle: Optional[bool] = None) -> Tuple[pd.DataFrame, Dict[str, Any]]:
        """Theory (and optionally Monte-Carlo) at every sweep point."""
        self._start_run("compute")
        with Timer() as timer:
            results = self.sweep(run_theory=True, run_mc_oracle=self.config.run_mc if run_mc_oracle is None
                                 else run_mc_oracle)
            rows = [r.as_row(self.config) for r in results]
        frame = pd.DataFrame(rows, columns=OUTPUT_COLUMNS)
        summary = self._summary("compute", rows, timer,
                                no_coverage_points=sum(r.no_coverage for r in results))
        return frame, summary

    def compare(self) -> Tuple[pd.DataFrame, Dict[str, Any]]:
        """Theory against Monte-Carlo with the per-point gate verdict."""
        self._start_run("compare")
        with Timer() as timer:
            results = self.sweep(run_theory=True, run_mc_oracle=True)
            rows = [compare_row(r.as_row(self.config)) for r in results]
        frame = pd.DataFrame(rows, columns=COMPARE_COLUMNS)
        failed = [row["r_over_rmax"] for row in rows if not row["within_gate"]]
        summary = self._summary("compare", rows, timer, gate_passed=not failed, failed_points=failed,
                                max_abs_delta_se=max((abs(r["delta_mean_se"]) for r in rows
                                                      if r["delta_mean_se"] is not None), default=None))
        return frame, summary


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", label).strip("_").lower() or "curve"


def figure_frame(family: FigureFamily, log_path: Path = Path("logs"), verbose: bool = False,
                 workers: int = 4, **overrides: Any) -> pd.DataFrame:
    """Long-form curve data (curve, r_over_rmax, value) for one figure family."""
    frames = []
    for curve in family.curves:
        cfg = family.curve_config(curve, **overrides)
        model = PowerModel(cfg, log_path=log_path, verbose=verbose, workers=workers)
        frame, _ = model.compute(run_mc_oracle=False)
        column = f"{family.metric}_theory"
        frames.append(pd.DataFrame({
            "curve": curve.label,
            "r_over_rmax": frame["r_over_rmax"],
            "value": frame[column],
        }))
    return pd.concat(frames, ignore_index=True)[FIGURE_COLUMNS]


def write_figure(frame: pd.DataFrame, family: FigureFamily, output: Optional[Path]) -> List[Path]:
    """Write one long-form CSV, or one CSV per curve when output is a directory."""
    if output is None or str(output) == "-":
        return []
    if output.is_dir() or output.suffix == "":
        output.mkdir(parents=True, exist_ok=True)
        written = []
        for label, group in frame.groupby("curve", sort=False):
            path = output / f"fig{family.figure_id}_{_slug(str(label))}.csv"
            group[["r_over_rmax", "value"]].to_csv(path, index=False)
            written.append(path)
        return written
    output.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(output, index=False)
    return [output]
