"""Scenario and figure-family configuration files."""

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import yaml

from .errors import InvalidParameterError, ModelError
from .moments import MomentsConfig
from .montecarlo import DEFAULT_SEED, McConfig
from .quadrature import QuadratureSpec
from .radio import DEFAULT_B_CORR, HandoffPolicy, PropagationEnv, ScenarioParams, ServiceProfile

YAML_SUFFIXES = (".yml", ".yaml", ".cfg")

# file key -> ScenarioConfig attribute
FLAT_KEYS = {
    "label": "label",
    "alpha": "alpha",
    "sigma_dB": "sigma_db",
    "b_corr": "b_corr",
    "nu": "nu",
    "bit_rate": "bit_rate",
    "chip_rate": "chip_rate",
    "ebio_target_dB": "ebio_target_db",
    "orthogonality_u": "orthogonality_u",
    "as_size": "as_size",
    "cst_dB": "cst_db",
    "sht_dB": "sht_db",
    "theta_deg": "theta_deg",
    "r_over_rmax": "r_over_rmax",
    "r1": "r1",
    "cell_radius": "cell_radius",
    "ct_scale": "ct_scale",
    "run_mc": "run_mc",
}
QUADRATURE_KEYS = ("nodes_per_dim", "truncation_mult", "rel_tol_1d", "rel_tol_2d", "rel_tol_3d")
MC_KEYS = {"samples": "samples_per_round", "rounds": "rounds", "seed": "master_seed"}
MOMENTS_KEYS = ("prune_partners", "partner_floor", "min_subset_probability", "delta_method", "workers",
                "check_convergence")
SHORTHAND_KEYS = {
    "quad_nodes": ("quadrature", "nodes_per_dim"),
    "mc_samples": ("mc", "samples"),
    "mc_rounds": ("mc", "rounds"),
    "mc_seed": ("mc", "seed"),
}
INT_FIELDS = {"as_size"}
BOOL_FIELDS = {"run_mc"}
STR_FIELDS = {"label"}


@dataclass(frozen=True)
class McSettings:
    samples: int = 100_000
    rounds: int = 5
    seed: int = DEFAULT_SEED


@dataclass(frozen=True)
class ScenarioConfig:
    """One scenario file: model parameters, MS positions and solver settings.

    ct_scale multiplies the load constant of the semi-analytic side only, so
    a value other than 1 is a deliberate mismatch against Monte-Carlo.
    """
    label: str = ""
    alpha: float = 3.0
    sigma_db: float = 8.0
    b_corr: float = DEFAULT_B_CORR
    nu: float = 0.5
    bit_rate: float = 12200.0
    chip_rate: float = 3.84e6
    ebio_target_db: float = 4.4
    orthogonality_u: float = 0.9
    as_size: int = 1
    cst_db: float = 1.0
    sht_db: float = 3.0
    theta_deg: float = 15.0
    r_over_rmax: Tuple[float, ...] = (1.0,)
    r1: Optional[Tuple[float, ...]] = None
    cell_radius: float = 1.0
    ct_scale: float = 1.0
    run_mc: bool = False
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)
    mc: McSettings = field(default_factory=McSettings)
    moments: MomentsConfig = field(default_factory=MomentsConfig)

    def __post_init__(self):
        for r in self.r_over_rmax:
            if not (math.isfinite(r) and r >= 0):
                raise InvalidParameterError(f"config field 'r_over_rmax': values must be >= 0, got {r}")
        if not self.r_over_rmax and not self.r1:
            raise InvalidParameterError("config field 'r_over_rmax': at least one position is required")
        # owning types validate everything else
        self.params_at(0)
        McConfig(scenario=self.params_at(0), samples_per_round=self.mc.samples,
                 rounds=self.mc.rounds, master_seed=self.mc.seed)

    @property
    def env(self) -> PropagationEnv:
        return PropagationEnv(alpha=self.alpha, sigma_db=self.sigma_db, b_corr=self.b_corr)

    @property
    def service(self) -> ServiceProfile:
        return ServiceProfile(activity=self.nu, bit_rate=self.bit_rate, chip_rate=self.chip_rate,
                              ebio_target_db=self.ebio_target_db, orthogonality=self.orthogonality_u)

    @property
    def policy(self) -> HandoffPolicy:
        return HandoffPolicy(as_size=self.as_size, cst_db=self.cst_db, sht_db=self.sht_db)

    @property
    def points(self) -> int:
        return len(self.r1) if self.r1 else len(self.r_over_rmax)

    def params_at(self, n: int) -> ScenarioParams:
        """Scenario of the n-th sweep point; absolute r1 wins over r_over_rmax."""
        common = dict(env=self.env, service=self.service, policy=self.policy, theta_deg=self.theta_deg,
                      cell_radius=self.cell_radius, ct_scale=self.ct_scale)
        if self.r1:
            return ScenarioParams(r1=self.r1[n], **common)
        return ScenarioParams.at_normalized(self.r_over_rmax[n], **common)

    def mc_config(self, params: ScenarioParams, workers: int = 4) -> McConfig:
        return McConfig(scenario=replace(params, ct_scale=1.0), samples_per_round=self.mc.samples,
                        rounds=self.mc.rounds, master_seed=self.mc.seed, workers=workers)

    def effective_config(self) -> Dict[str, Any]:
        """Defaults-filled mapping that loads back into an identical config."""
        out: Dict[str, Any] = {}
        for key, attr in FLAT_KEYS.items():
            value = getattr(self, attr)
            if attr in ("r_over_rmax", "r1"):
                value = list(value) if value is not None else None
            if value is None:
                continue
            out[key] = value
        out["quadrature"] = {k: getattr(self.quadrature, k) for k in QUADRATURE_KEYS}
        out["mc"] = {k: getattr(self.mc, k) for k in ("samples", "rounds", "seed")}
        out["moments"] = {k: getattr(self.moments, k) for k in MOMENTS_KEYS}
        return out

    def with_overrides(self, **overrides: Any) -> "ScenarioConfig":
        """New config with file-format keys replaced (nested blocks merge)."""
        data = self.effective_config()
        for key, value in overrides.items():
            if key in ("quadrature", "mc", "moments") and isinstance(value, Mapping):
                data[key] = {**data[key], **value}
            elif key in SHORTHAND_KEYS:
                block, inner = SHORTHAND_KEYS[key]
                data[block] = {**data[block], inner: value}
            else:
                data[key] = value
        if "r_over_rmax" in overrides and "r1" not in overrides:
            data.pop("r1", None)
        return config_from_mapping(data)


def _coerce(attr: str, key: str, value: Any) -> Any:
    try:
        if attr in ("r_over_rmax", "r1"):
            values = value if isinstance(value, (list, tuple)) else [value]
            return tuple(float(v) for v in values)
        if attr in INT_FIELDS:
            if isinstance(value, bool) or float(value) != int(value):
                raise ValueError(f"expected an integer, got {value!r}")
            return int(value)
        if attr in BOOL_FIELDS:
            if not isinstance(value, bool):
                raise ValueError(f"expected true/false, got {value!r}")
            return value
        if attr in STR_FIELDS:
            return str(value)
        if isinstance(value, bool):
            raise ValueError(f"expected a number, got {value!r}")
        return float(value)
    except (TypeError, ValueError) as e:
        raise InvalidParameterError(f"config field '{key}': {e}") from e


def _block(name: str, raw: Any, allowed) -> Dict[str, Any]:
    if raw is None:
        return {}
    if not isinstance(raw, Mapping):
        raise InvalidParameterError(f"config field '{name}' must be a mapping")
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise InvalidParameterError(f"unknown key(s) in '{name}': {', '.join(unknown)}")
    return dict(raw)


def _moments_value(key: str, value: Any) -> Any:
    if key in ("prune_partners", "check_convergence"):
        if not isinstance(value, bool):
            raise InvalidParameterError(f"config field 'moments.{key}': expected true/false, got {value!r}")
        return value
    if key == "workers":
        return int(value)
    if key == "delta_method":
        return str(value)
    return float(value)


def config_from_mapping(data: Mapping[str, Any]) -> ScenarioConfig:
    """Validate a flat key/value mapping into a ScenarioConfig."""
    if not isinstance(data, Mapping):
        raise InvalidParameterError("scenario file must hold a key/value mapping")
    blocks: Dict[str, Dict[str, Any]] = {
        "quadrature": _block("quadrature", data.get("quadrature"), QUADRATURE_KEYS),
        "mc": _block("mc", data.get("mc"), MC_KEYS),
        "moments": _block("moments", data.get("moments"), MOMENTS_KEYS),
    }
    kwargs: Dict[str, Any] = {}
    unknown = []
    for key, value in data.items():
        if key in blocks:
            continue
        if key in SHORTHAND_KEYS:
            block, inner = SHORTHAND_KEYS[key]
            blocks[block][inner] = value
        elif key in FLAT_KEYS:
            if value is None:
                continue
            attr = FLAT_KEYS[key]
            kwargs[attr] = _coerce(attr, key, value)
        else:
            unknown.append(key)
    if unknown:
        raise InvalidParameterError(f"unknown config key(s): {', '.join(sorted(map(str, unknown)))}")

    try:
        kwargs["quadrature"] = QuadratureSpec(**{
            k: int(v) if k == "nodes_per_dim" else float(v) for k, v in blocks["quadrature"].items()
        })
        kwargs["mc"] = McSettings(**{k: int(v) for k, v in blocks["mc"].items()})
        kwargs["moments"] = MomentsConfig(**{k: _moments_value(k, v) for k, v in blocks["moments"].items()})
        return ScenarioConfig(**kwargs)
    except InvalidParameterError:
        raise
    except ModelError as e:
        raise InvalidParameterError(f"invalid scenario: {e}") from e
    except (TypeError, ValueError) as e:
        raise InvalidParameterError(f"invalid scenario: {e}") from e


def _read_mapping(path: Path) -> Any:
    suffix = path.suffix.lower()
    with open(path, "r", encoding="utf-8") as f:
        if suffix == ".json":
            try:
                return json.load(f)
            except json.JSONDecodeError as e:
                raise InvalidParameterError(f"could not parse {path}: {e}") from e
        if suffix in YAML_SUFFIXES:
            try:
                return yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise InvalidParameterError(f"could not parse {path}: {e}") from e
    raise InvalidParameterError(f"unsupported config format '{suffix}' (use .yml, .yaml, .cfg or .json)")


def load_config(path: Path) -> ScenarioConfig:
    """Load and validate a scenario file."""
    return config_from_mapping(_read_mapping(Path(path)))


def write_config(cfg: ScenarioConfig, path: Path) -> None:
    """Write the effective config; the container follows the file suffix."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = cfg.effective_config()
    with open(path, "w", encoding="utf-8") as f:
        if path.suffix.lower() == ".json":
            json.dump(data, f, indent=2)
        else:
            yaml.safe_dump(data, f, default_flow_style=False, sort_keys=False)


@dataclass(frozen=True)
class FigureCurve:
    label: str
    overrides: Dict[str, Any]


@dataclass(frozen=True)
class FigureFamily:
    """A set of curves sharing one r/r_max grid and one plotted statistic."""
    figure_id: int
    metric: str
    title: str
    r_grid: Tuple[float, ...]
    base: Dict[str, Any]
    curves: Tuple[FigureCurve, ...]

    def curve_config(self, curve: FigureCurve, **overrides: Any) -> ScenarioConfig:
        cfg = config_from_mapping({**self.base, **curve.overrides, "r_over_rmax": list(self.r_grid)})
        return cfg.with_overrides(**overrides) if overrides else cfg


METRICS = ("beta_mean", "beta_std")


def load_figures(path: Path) -> Dict[int, FigureFamily]:
    """Load the figure families shipped in figures.yml."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except (FileNotFoundError, yaml.YAMLError) as e:
        raise InvalidParameterError(f"could not load figure families from {path}: {e}") from e
    if not isinstance(data, dict) or "figures" not in data:
        raise InvalidParameterError(
            f"{path} has no 'figures' block; expected a figure-families file, not a scenario config"
        )

    families: Dict[int, FigureFamily] = {}
    for raw_id, entry in (data["figures"] or {}).items():
        metric = entry.get("metric")
        if metric not in METRICS:
            raise InvalidParameterError(f"figure {raw_id}: metric must be one of {METRICS}, got {metric!r}")
        curves: List[FigureCurve] = [
            FigureCurve(label=str(c["label"]), overrides=dict(c.get("overrides", {})))
            for c in entry.get("curves", [])
        ]
        families[int(raw_id)] = FigureFamily(
            figure_id=int(raw_id),
            metric=metric,
            title=str(entry.get("title", "")),
            r_grid=tuple(float(r) for r in entry["r_grid"]),
            base=dict(entry.get("base", {})),
            curves=tuple(curves),
        )
    return families
