"""CLI interface for cdma_downlink."""

import sys
from pathlib import Path
from typing import Any, Dict, Optional

import pandas as pd
import typer
from rich.console import Console
from rich.table import Table

from .config import ScenarioConfig, load_config, load_figures
from .core import PowerModel, figure_frame, write_figure
from .errors import InvalidParameterError, ModelError

app = typer.Typer(help="Downlink per-link power statistics for CDMA hard and soft handoff")
console = Console(stderr=True)

DEFAULT_FIGURES = Path("inputs") / "figures.yml"

EXIT_INVALID = 1
EXIT_CONFIG = 2
EXIT_GATE = 3


def main():
    """Entry point for CLI."""
    app()


def _load_scenario(config_path: Path, quad_nodes: Optional[int] = None, samples: Optional[int] = None,
                   rounds: Optional[int] = None, seed: Optional[int] = None) -> ScenarioConfig:
    """
    Load a scenario file and apply command-line overrides.

    Raises typer.Exit on a missing file (2) or an invalid scenario (1).
    """
    if not config_path.exists():
        console.print(f"Config file not found: {config_path}", style="red")
        raise typer.Exit(EXIT_CONFIG)
    try:
        cfg = load_config(config_path)
        overrides: Dict[str, Any] = {}
        if quad_nodes is not None:
            overrides["quad_nodes"] = quad_nodes
        if samples is not None:
            overrides["mc_samples"] = samples
        if rounds is not None:
            overrides["mc_rounds"] = rounds
        if seed is not None:
            overrides["mc_seed"] = seed
        return cfg.with_overrides(**overrides) if overrides else cfg
    except ModelError as e:
        console.print(f"Invalid scenario {config_path}: {e}", style="red")
        raise typer.Exit(EXIT_INVALID)


def _emit(frame: pd.DataFrame, output: Optional[Path]) -> None:
    if output is None or str(output) == "-":
        frame.to_csv(sys.stdout, index=False)
        return
    output.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(output, index=False)
    console.print(f"Results saved to {output}", style="green")


def _fmt(value: Any, digits: int = 7) -> str:
    if value is None or (isinstance(value, float) and value != value):
        return "-"
    if isinstance(value, bool):
        return "yes" if value else ""
    if isinstance(value, float):
        return f"{value:.{digits}g}"
    return str(value)


def _display_points(frame: pd.DataFrame, compare: bool = False) -> None:
    """Print the per-point results table."""
    table = Table(show_header=True, header_style="bold magenta")
    table.add_column("r/r_max", style="cyan")
    table.add_column("P(camp)", style="white")
    table.add_column("beta mean", style="white")
    table.add_column("beta std", style="white")
    if compare or frame["beta_mean_mc"].notna().any():
        table.add_column("MC mean", style="white")
        table.add_column("MC std", style="white")
        table.add_column("SE", style="white")
    if compare:
        table.add_column("delta/SE", style="yellow")
        table.add_column("gate", style="green")

    for row in frame.to_dict("records"):
        cells = [
            f"{row['r_over_rmax']:.3f}",
            _fmt(row["p_camp_theory"], 5),
            _fmt(row["beta_mean_theory"]),
            _fmt(row["beta_std_theory"]),
        ]
        if len(table.columns) > 4:
            cells += [_fmt(row["beta_mean_mc"]), _fmt(row["beta_std_mc"]), _fmt(row["se_mean_mc"], 3)]
        if compare:
            cells += [_fmt(row["delta_mean_se"], 3), "pass" if row["within_gate"] else "FAIL"]
        table.add_row(*cells)
    console.print(table)


def _run_guarded(fn):
    try:
        return fn()
    except KeyboardInterrupt:
        console.print("\nRun interrupted", style="red")
        raise typer.Exit(EXIT_INVALID)
    except ModelError as e:
        console.print(f"Error: {e}", style="red")
        raise typer.Exit(EXIT_INVALID)


@app.command()
def compute(
    config: Path = typer.Option(..., "--config", "-c", help="Scenario file (.yml, .yaml, .cfg or .json)"),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="CSV path, or '-' for stdout (default)"),
    mc: bool = typer.Option(False, "--mc", help="Also run the Monte-Carlo oracle at every point"),
    samples: Optional[int] = typer.Option(None, "--samples", help="Monte-Carlo samples per round"),
    rounds: Optional[int] = typer.Option(None, "--rounds", help="Monte-Carlo rounds"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Monte-Carlo master seed"),
    quad_nodes: Optional[int] = typer.Option(None, "--quad-nodes", help="Gauss-Legendre nodes per dimension"),
    workers: int = typer.Option(4, "--workers", help="Parallel sweep points"),
    log_path: Path = typer.Option(Path("logs"), "--log-path", help="Path to logs directory"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Print logs to terminal for debugging"),
):
    """Compute beta mean and standard deviation at every sweep point."""
    cfg = _load_scenario(config, quad_nodes, samples, rounds, seed)
    model = PowerModel(cfg, log_path=log_path, verbose=verbose, workers=workers)
    frame, summary = _run_guarded(lambda: model.compute(run_mc_oracle=mc or cfg.run_mc))
    _display_points(frame)
    _emit(frame, output)
    console.print(f"Runtime: {summary['runtime_sec']:.1f}s", style="dim")


@app.command()
def compare(
    config: Path = typer.Option(..., "--config", "-c", help="Scenario file (.yml, .yaml, .cfg or .json)"),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="CSV path, or '-' for stdout (default)"),
    samples: Optional[int] = typer.Option(None, "--samples", help="Monte-Carlo samples per round"),
    rounds: Optional[int] = typer.Option(None, "--rounds", help="Monte-Carlo rounds"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Monte-Carlo master seed"),
    quad_nodes: Optional[int] = typer.Option(None, "--quad-nodes", help="Gauss-Legendre nodes per dimension"),
    gate: bool = typer.Option(False, "--gate", help="Exit with code 3 when any point misses the 3-SE gate"),
    workers: int = typer.Option(4, "--workers", help="Parallel sweep points"),
    log_path: Path = typer.Option(Path("logs"), "--log-path", help="Path to logs directory"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Print logs to terminal for debugging"),
):
    """Compare the semi-analytic model with the Monte-Carlo oracle."""
    cfg = _load_scenario(config, quad_nodes, samples, rounds, seed)
    model = PowerModel(cfg, log_path=log_path, verbose=verbose, workers=workers)
    frame, summary = _run_guarded(model.compare)
    _display_points(frame, compare=True)
    _emit(frame, output)
    if summary["gate_passed"]:
        console.print("All points within the gate", style="green")
    else:
        console.print(f"Gate failed at r/r_max = {summary['failed_points']}", style="red")
        if gate:
            raise typer.Exit(EXIT_GATE)


@app.command()
def figure(
    figure_id: int = typer.Option(..., "--figure", "-f", help="Figure family id (see list-figures)"),
    output: Optional[Path] = typer.Option(None, "--output", "-o",
                                          help="CSV path, directory for one CSV per curve, or '-' for stdout"),
    figures_file: Path = typer.Option(DEFAULT_FIGURES, "--figures-file",
                                      help="Figure families file (default inputs/figures.yml), not a scenario config"),
    quad_nodes: Optional[int] = typer.Option(None, "--quad-nodes", help="Gauss-Legendre nodes per dimension"),
    workers: int = typer.Option(4, "--workers", help="Parallel sweep points"),
    log_path: Path = typer.Option(Path("logs"), "--log-path", help="Path to logs directory"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Print logs to terminal for debugging"),
):
    """Emit curve data for one figure family.

    Families are read from a figure-families file; scenario configs go to compute and compare.
    """
    try:
        families = load_figures(figures_file)
    except InvalidParameterError as e:
        console.print(str(e), style="red")
        raise typer.Exit(EXIT_CONFIG)
    if figure_id not in families:
        console.print(f"Unknown figure: {figure_id}", style="red")
        console.print(f"Available figures: {', '.join(str(f) for f in sorted(families))}", style="yellow")
        raise typer.Exit(EXIT_CONFIG)
    family = families[figure_id]
    overrides = {"quad_nodes": quad_nodes} if quad_nodes is not None else {}
    console.print(f"Figure {figure_id}: {family.title}", style="bold blue")
    frame = _run_guarded(lambda: figure_frame(family, log_path=log_path, verbose=verbose,
                                              workers=workers, **overrides))
    if output is not None and str(output) != "-" and (output.is_dir() or output.suffix == ""):
        for path in write_figure(frame, family, output):
            console.print(f"Curve saved to {path}", style="green")
    else:
        _emit(frame, output)


@app.command(name="list-figures")
def list_figures(
    figures_file: Path = typer.Option(DEFAULT_FIGURES, "--figures-file",
                                      help="Figure families file (default inputs/figures.yml)"),
):
    """List shipped figure families and their curves."""
    try:
        families = load_figures(figures_file)
    except InvalidParameterError as e:
        console.print(str(e), style="red")
        raise typer.Exit(EXIT_CONFIG)

    table = Table(show_header=True, header_style="bold magenta")
    table.add_column("Figure", style="cyan")
    table.add_column("Metric", style="white")
    table.add_column("Curve", style="green")
    table.add_column("Points", style="white")
    for fid in sorted(families):
        family = families[fid]
        for n, curve in enumerate(family.curves):
            table.add_row(str(fid) if n == 0 else "", family.metric if n == 0 else "",
                          curve.label, str(len(family.r_grid)))

    console.print(f"Total figures: {len(families)}", style="bold blue")
    console.print(table)


if __name__ == "__main__":
    main()
