import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sddgat.errors import DegenerateError
from sddgat.geometry import annotate, bearing, euclid_dist, standardize_coords

coord = st.floats(-1e3, 1e3, allow_nan=False)
point = st.tuples(coord, coord)


class TestStandardize:
    def test_unit_square_corners(self):
        out, rec = standardize_coords([(0, 0), (2, 0), (0, 2), (2, 2)])
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-15)
        np.testing.assert_allclose(out.var(axis=0), 1.0, rtol=1e-12)
        assert rec.mean == (1.0, 1.0)

    def test_idempotent(self):
        once, _ = standardize_coords(np.random.default_rng(0).normal(size=(30, 2)))
        twice, _ = standardize_coords(once)
        np.testing.assert_allclose(twice, once, atol=1e-12)

    def test_constant_axis(self):
        with pytest.raises(DegenerateError, match="lat"):
            standardize_coords([(10, 5), (20, 5)])

    def test_single_distinct_point(self):
        with pytest.raises(DegenerateError):
            standardize_coords([(1, 1), (1, 1)])

    def test_distances_invariant_under_shift(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(size=(10, 2))
        a, _ = standardize_coords(pts)
        b, _ = standardize_coords(pts + np.array([37.5, -12.0]))
        assert euclid_dist(a[0], a[5]) == pytest.approx(euclid_dist(b[0], b[5]), abs=1e-12)


class TestBearing:
    def test_diagonal(self):
        c, s = bearing((0, 0), (1, 1))
        assert c == pytest.approx(math.sqrt(2) / 2) and s == pytest.approx(math.sqrt(2) / 2)

    def test_negative_axis(self):
        assert bearing((0, 0), (-1, 0)) == (-1.0, 0.0)

    def test_three_four_five(self):
        c, s = bearing((0, 0), (3, 4))
        assert c == pytest.approx(0.6, abs=1e-15) and s == pytest.approx(0.8, abs=1e-15)

    def test_matches_arctan2(self):
        rng = np.random.default_rng(2)
        p, q = rng.normal(size=(50, 2)), rng.normal(size=(50, 2))
        cos, sin, _ = annotate(p, q)
        theta = np.arctan2(q[:, 1] - p[:, 1], q[:, 0] - p[:, 0])
        np.testing.assert_allclose(cos, np.cos(theta), atol=1e-12)
        np.testing.assert_allclose(sin, np.sin(theta), atol=1e-12)

    def test_coincident_convention(self):
        cos, sin, dist = annotate(np.array([[1.0, 1.0]]), np.array([[1.0, 1.0]]))
        assert (cos[0], sin[0], dist[0]) == (1.0, 0.0, 0.0)

    @settings(max_examples=100, deadline=None)
    @given(point, point, point)
    def test_antisymmetric_unit_and_translation_invariant(self, p, q, shift):
        if p == q:
            return
        c1, s1 = bearing(p, q)
        c2, s2 = bearing(q, p)
        assert (c1, s1) == (-c2, -s2)
        assert c1 * c1 + s1 * s1 == pytest.approx(1.0, abs=1e-9)
        ps = (p[0] + shift[0], p[1] + shift[1])
        qs = (q[0] + shift[0], q[1] + shift[1])
        if euclid_dist(ps, qs) > 1e-6 * max(1.0, abs(shift[0]) + abs(shift[1])):
            c3, s3 = bearing(ps, qs)
            assert c3 == pytest.approx(c1, abs=1e-6) and s3 == pytest.approx(s1, abs=1e-6)


class TestDistance:
    def test_zero(self):
        assert euclid_dist((0, 0), (0, 0)) == 0.0

    def test_three_four_five(self):
        assert euclid_dist((0, 0), (3, 4)) == 5.0

    @settings(max_examples=100, deadline=None)
    @given(point, point, point)
    def test_metric_properties(self, a, b, c):
        ab, bc, ac = euclid_dist(a, b), euclid_dist(b, c), euclid_dist(a, c)
        assert ab == euclid_dist(b, a)
        assert ac <= ab + bc + 1e-9
