"""Tests for the hexagonal layout and path-gain ratios."""

import math

import numpy as np
import pytest

from cdma_downlink.errors import DegeneratePositionError, InvalidParameterError
from cdma_downlink.geometry import (
    NUM_SITES,
    SQRT3,
    build_layout,
    db_offset,
    db_offset_row,
    fold_theta,
    gain_ratio,
    gain_row,
    ms_view,
    r_max,
)


class TestLayout:
    """Test site placement."""

    def setup_method(self):
        self.geom = build_layout(1.0)

    def test_site_count_and_center(self):
        assert len(self.geom.sites) == NUM_SITES
        assert self.geom.sites[0] == (0.0, 0.0)

    def test_ring_distances(self):
        dists = np.hypot(*self.geom.as_array().T)
        np.testing.assert_allclose(dists[1:7], SQRT3)
        np.testing.assert_allclose(dists[7:13], 2 * SQRT3)
        np.testing.assert_allclose(dists[13:19], 3.0)

    def test_first_tier_faces_flat_edge(self):
        x, y = self.geom.sites[1]
        assert x == pytest.approx(SQRT3)
        assert y == pytest.approx(0.0, abs=1e-15)

    def test_layout_scales_with_radius(self):
        big = build_layout(2.5)
        np.testing.assert_allclose(big.as_array(), 2.5 * self.geom.as_array())

    def test_invalid_radius(self):
        with pytest.raises(InvalidParameterError):
            build_layout(0.0)

    def test_invalid_index(self):
        with pytest.raises(InvalidParameterError):
            ms_view(self.geom, 0.5, 0.0).distance(20)


class TestDistances:
    """Test MS-to-BS distances and the cell border."""

    def setup_method(self):
        self.geom = build_layout(1.0)

    def test_law_of_cosines(self):
        view = ms_view(self.geom, 0.5, 30.0)
        assert view.distance(1) == pytest.approx(0.5)
        assert view.distance(2) == pytest.approx(math.sqrt(1.75))

    def test_center_position(self):
        view = ms_view(self.geom, 0.0, 15.0)
        assert view.distance(1) == 0.0
        np.testing.assert_allclose(view.distances[1:7], SQRT3)

    def test_r_max(self):
        assert r_max(0.0, 1.0) == pytest.approx(SQRT3 / 2)
        assert r_max(30.0, 1.0) == pytest.approx(1.0)
        assert r_max(90.0, 1.0) == pytest.approx(1.0)

    def test_fold_theta(self):
        assert fold_theta(45.0) == pytest.approx(15.0)
        assert fold_theta(-15.0) == pytest.approx(15.0)
        assert fold_theta(75.0) == pytest.approx(15.0)
        assert fold_theta(30.0) == pytest.approx(30.0)

    @pytest.mark.parametrize("theta", [15.0, -15.0, 45.0, 75.0])
    def test_mirror_symmetry(self, theta):
        ref = np.sort(ms_view(self.geom, 0.7, 15.0).distances)
        other = np.sort(ms_view(self.geom, 0.7, theta).distances)
        np.testing.assert_allclose(other, ref, rtol=1e-12)

    def test_negative_radius(self):
        with pytest.raises(InvalidParameterError):
            ms_view(self.geom, -0.1, 0.0)


class TestGainRatios:
    """Test C_{j,i} and R_{j,i}."""

    def setup_method(self):
        self.view = ms_view(build_layout(1.0), 0.8, 20.0)

    def test_gain_ratio(self):
        expected = (self.view.distance(1) / self.view.distance(3)) ** 3
        assert gain_ratio(self.view, 1, 3, 3.0) == pytest.approx(expected)

    def test_db_offset_matches_gain(self):
        c = gain_ratio(self.view, 1, 4, 4.0)
        assert db_offset(self.view, 1, 4, 4.0, 0.5) == pytest.approx(10 * math.log10(c) / 0.5)

    def test_chain_identity(self):
        for k in range(2, NUM_SITES + 1):
            for l in (2, 7, 13, 19):
                if k == l:
                    continue
                lhs = db_offset(self.view, 1, k, 3.0, 0.7) + db_offset(self.view, k, l, 3.0, 0.7)
                assert lhs == pytest.approx(db_offset(self.view, 1, l, 3.0, 0.7), abs=1e-12)

    def test_rows_zero_their_diagonal(self):
        assert gain_row(self.view, 5, 3.0)[4] == 0.0
        assert db_offset_row(self.view, 5, 3.0, 0.7)[4] == 0.0

    def test_serving_at_center(self):
        view = ms_view(build_layout(1.0), 0.0, 0.0)
        assert gain_ratio(view, 1, 2, 3.0) == 0.0
        assert db_offset(view, 1, 2, 3.0, 0.7) == -math.inf

    def test_ms_on_interfering_site(self):
        view = ms_view(build_layout(1.0), SQRT3, 0.0)
        with pytest.raises(DegeneratePositionError):
            gain_ratio(view, 1, 2, 3.0)

    def test_db_offset_rejects_bad_b(self):
        with pytest.raises(InvalidParameterError):
            db_offset(self.view, 1, 2, 3.0, 0.0)
