"""Tests for scenario and figure-family files."""

from pathlib import Path

import pytest

from cdma_downlink.config import (
    ScenarioConfig,
    config_from_mapping,
    load_config,
    load_figures,
    write_config,
)
from cdma_downlink.errors import InvalidParameterError

INPUTS = Path(__file__).resolve().parent.parent / "inputs"


class TestScenarioFiles:
    """Test loading and validating scenario files."""

    def test_shipped_tables(self):
        t1 = load_config(INPUTS / "scenarios" / "table1.yml")
        assert t1.as_size == 1
        assert t1.theta_deg == 15.0
        assert t1.r_over_rmax == (0.6, 0.7, 0.8, 0.9, 1.0)
        t3 = load_config(INPUTS / "scenarios" / "table3.yml")
        assert (t3.as_size, t3.alpha, t3.sigma_db) == (3, 4.0, 10.0)

    def test_defaults(self):
        cfg = config_from_mapping({})
        assert cfg.nu == 0.5
        assert cfg.bit_rate == 12200.0
        assert cfg.orthogonality_u == 0.9
        assert cfg.points == 1

    def test_unknown_key(self):
        with pytest.raises(InvalidParameterError, match="colour"):
            config_from_mapping({"alpha": 3, "colour": "blue"})

    def test_unknown_nested_key(self):
        with pytest.raises(InvalidParameterError, match="sample"):
            config_from_mapping({"mc": {"sample": 10}})

    @pytest.mark.parametrize("data", [
        {"as_size": 4},
        {"as_size": "two"},
        {"sigma_dB": -1},
        {"r_over_rmax": [0.5, -0.1]},
        {"mc": {"samples": 10}},
        {"moments": {"delta_method": "exotic"}},
        {"moments": {"check_convergence": "yes"}},
        {"run_mc": "yes"},
    ])
    def test_invalid_fields(self, data):
        with pytest.raises(InvalidParameterError):
            config_from_mapping(data)

    def test_yaml_exponents_are_numbers(self, tmp_path):
        path = tmp_path / "scenario.yml"
        path.write_text("alpha: 3\nquadrature:\n  rel_tol_1d: 1e-9\n  nodes_per_dim: 64\n")
        cfg = load_config(path)
        assert cfg.quadrature.rel_tol_1d == 1e-9
        assert cfg.quadrature.nodes_per_dim == 64

    def test_plain_key_value_cfg(self, tmp_path):
        path = tmp_path / "table.cfg"
        path.write_text("alpha: 4\nsigma_dB: 10\nas_size: 3\nr_over_rmax: 1.0\n")
        cfg = load_config(path)
        assert cfg.as_size == 3
        assert cfg.r_over_rmax == (1.0,)

    def test_unsupported_format(self, tmp_path):
        path = tmp_path / "scenario.txt"
        path.write_text("alpha: 3\n")
        with pytest.raises(InvalidParameterError):
            load_config(path)

    @pytest.mark.parametrize("suffix", [".yml", ".json"])
    def test_round_trip(self, tmp_path, suffix):
        cfg = config_from_mapping({
            "label": "rt", "alpha": 4, "sigma_dB": 10, "as_size": 3, "theta_deg": 0,
            "r_over_rmax": [0.6, 1.0], "quad_nodes": 64, "mc": {"samples": 5000, "seed": 3},
            "moments": {"delta_method": "textbook", "check_convergence": True},
        })
        assert cfg.moments.check_convergence
        path = tmp_path / f"effective{suffix}"
        write_config(cfg, path)
        assert load_config(path) == cfg

    def test_overrides(self):
        cfg = config_from_mapping({"r1": [0.4, 0.5]})
        assert cfg.points == 2
        moved = cfg.with_overrides(r_over_rmax=[0.7], quad_nodes=48, mc_samples=2000)
        assert moved.r1 is None
        assert moved.points == 1
        assert moved.quadrature.nodes_per_dim == 48
        assert moved.mc.samples == 2000

    def test_absolute_radius(self):
        cfg = config_from_mapping({"r1": [0.4], "r_over_rmax": [0.9]})
        assert cfg.params_at(0).r1 == pytest.approx(0.4)

    def test_mc_side_keeps_nominal_load(self):
        cfg = config_from_mapping({"ct_scale": 2.0})
        params = cfg.params_at(0)
        assert params.ct_scale == 2.0
        assert cfg.mc_config(params).scenario.ct_scale == 1.0

    def test_params_carry_scenario(self):
        cfg = config_from_mapping({"alpha": 4, "sigma_dB": 10, "b_corr": 0.5, "as_size": 2, "sht_dB": 1})
        params = cfg.params_at(0)
        assert params.env.alpha == 4.0
        assert params.env.b_corr == 0.5
        assert params.policy.sht_db == 1.0
        assert isinstance(cfg, ScenarioConfig)


class TestFigureFamilies:
    """Test the shipped figure families."""

    def setup_method(self):
        self.families = load_figures(INPUTS / "figures.yml")

    def test_ids_and_metrics(self):
        assert sorted(self.families) == [3, 4, 5, 6, 7, 8]
        assert self.families[3].metric == "beta_mean"
        assert self.families[8].metric == "beta_std"

    def test_curves(self):
        assert len(self.families[3].curves) == 8
        assert len(self.families[3].r_grid) == 9
        labels = [c.label for c in self.families[7].curves]
        assert "AS=1" in labels

    def test_curve_config(self):
        family = self.families[6]
        cfg = family.curve_config(family.curves[-1], quad_nodes=48)
        assert cfg.as_size == 2
        assert cfg.theta_deg == 30.0
        assert cfg.points == 9
        assert cfg.quadrature.nodes_per_dim == 48

    def test_missing_file(self, tmp_path):
        with pytest.raises(InvalidParameterError):
            load_figures(tmp_path / "nope.yml")

    def test_bad_metric(self, tmp_path):
        path = tmp_path / "figures.yml"
        path.write_text("figures:\n  3:\n    metric: beta_max\n    r_grid: [1.0]\n    curves: []\n")
        with pytest.raises(InvalidParameterError):
            load_figures(path)

    def test_scenario_file_is_not_a_figures_file(self):
        with pytest.raises(InvalidParameterError, match="figure-families"):
            load_figures(INPUTS / "scenarios" / "table1.yml")
