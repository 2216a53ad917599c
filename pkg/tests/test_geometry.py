import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fblab.errors import ArgumentError, EmptyResultError, NumericError
from fblab.geometry import (GridField, ParabolicCylinder, graph_to_pointset, hausdorff_distance,
                            holder_seminorm_fit, parabolic_distance, parabolic_distance_matrix,
                            read_pointset_csv, write_pointset_csv)

coords = st.floats(-10, 10, allow_nan=False)


class TestParabolicCylinder:
    def test_time_extent_is_radius_squared(self):
        Q = ParabolicCylinder((0.0, 0.0), 1.0, 0.5)
        assert Q.t_start == pytest.approx(0.75)

    def test_membership_matches_definition(self):
        Q = ParabolicCylinder((0.0,), 0.0, 1.0)
        assert Q.contains([0.0], 0.0)
        assert not Q.contains([0.0], -1.0)  # bottom excluded
        assert Q.contains([0.0], -0.999)
        assert not Q.contains([1.0], -0.5)  # lateral boundary excluded
        assert Q.contains([1.0], -1.0, closed=True)

    def test_rejects_bad_radius(self):
        with pytest.raises(ArgumentError):
            ParabolicCylinder((0.0,), 0.0, 0.0)


class TestParabolicDistance:
    def test_examples(self):
        assert parabolic_distance((0, 0), (0, 0)) == 0
        assert parabolic_distance((0, 0), (0, -1)) == 1
        assert parabolic_distance((3, 0, -4), (0, 0, 0)) == pytest.approx(math.sqrt(9 + 4))

    def test_hand_value_space_and_time(self):
        # |x - y|^2 = 9 + 16, |t - s| = 0
        assert parabolic_distance((3, 4, 0), (0, 0, 0)) == pytest.approx(5.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ArgumentError):
            parabolic_distance((0, 0), (0, 0, 0))

    @settings(max_examples=200, deadline=None)
    @given(st.lists(coords, min_size=3, max_size=3), st.lists(coords, min_size=3, max_size=3),
           st.floats(0.01, 10))
    def test_parabolic_scaling(self, p, q, r):
        P = np.array(p)
        Q = np.array(q)
        scale = np.array([r, r, r * r])
        assert parabolic_distance(P * scale, Q * scale) == pytest.approx(r * parabolic_distance(P, Q),
                                                                         rel=1e-9, abs=1e-12)

    def test_matrix_matches_scalar(self):
        rng = np.random.default_rng(1)
        A, B = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
        D = parabolic_distance_matrix(A, B)
        assert D[2, 3] == pytest.approx(parabolic_distance(A[2], B[3]))


class TestHausdorff:
    def test_examples(self):
        X = np.array([[0.0], [1.0], [2.5]])
        assert hausdorff_distance(X, X) == 0
        assert hausdorff_distance([[0.0]], [[3.0]]) == 3
        assert hausdorff_distance([[0.0], [10.0]], [[1.0]]) == 9

    def test_empty_rejected(self):
        with pytest.raises(ArgumentError):
            hausdorff_distance(np.empty((0, 2)), [[0.0, 0.0]])

    def test_chunking_is_exact(self):
        rng = np.random.default_rng(3)
        X, Y = rng.normal(size=(300, 2)), rng.normal(size=(200, 2))
        assert hausdorff_distance(X, Y, chunk=7) == hausdorff_distance(X, Y)


class TestHolderFit:
    def test_lipschitz_line(self):
        x = np.linspace(0, 1, 20)[:, None]
        fit = holder_seminorm_fit(x, x[:, 0], [0.5, 1.0], time_axis=False)
        assert fit.best_exponent == 1.0
        assert fit.constant == pytest.approx(1.0)

    def test_square_root(self):
        x = np.concatenate([[0.0], np.geomspace(1e-8, 1, 40)])[:, None]
        fit = holder_seminorm_fit(x, np.sqrt(x[:, 0]), [0.5, 1.0], time_axis=False)
        assert fit.best_exponent == 0.5
        assert fit.constant == pytest.approx(1.0, rel=1e-9)

    def test_constant_function(self):
        x = np.linspace(0, 1, 10)[:, None]
        fit = holder_seminorm_fit(x, np.full(10, 2.0), [0.25, 0.5, 1.0], time_axis=False)
        assert fit.best_exponent == 1.0 and fit.constant == 0.0
        assert all(c == 0 for c in fit.constants.values())

    def test_needs_eight_samples(self):
        x = np.linspace(0, 1, 7)[:, None]
        with pytest.raises(ArgumentError):
            holder_seminorm_fit(x, x[:, 0], [1.0], time_axis=False)


class TestGridField:
    def test_rejects_non_finite(self):
        with pytest.raises(NumericError):
            GridField((0.0,), (1.0,), 0.0, 1.0, np.array([[0.0], [np.nan]]))

    def test_axes_and_shape(self):
        F = GridField.sample(lambda X, t: X[..., 0] + t, [np.linspace(0, 1, 5)], np.linspace(0, 1, 3))
        assert F.values.shape == (5, 3)
        assert F.values[4, 2] == pytest.approx(2.0)
        np.testing.assert_allclose(F.axes[0], np.linspace(0, 1, 5))

    def test_csv_round_trip_is_bitwise(self):
        rng = np.random.default_rng(0)
        F = GridField.from_axes([np.linspace(-1, 1, 4), np.linspace(0, 2, 3)], np.linspace(0, 0.5, 2),
                                rng.normal(size=(4, 3, 2)))
        text = F.to_csv()
        assert text.splitlines()[0] == "x1,x2,t,value"
        G = GridField.from_csv(io.StringIO(text))
        np.testing.assert_array_equal(G.values, F.values)

    def test_graph_to_pointset(self):
        F = GridField.from_axes([np.array([0.0, 0.5, 1.0])], np.array([0.0]), np.array([[1.0], [2.0], [3.0]]))
        pts = graph_to_pointset(F, ParabolicCylinder((0.5,), 0.0, 2.0))
        assert pts.shape == (3, 3)
        np.testing.assert_array_equal(pts[:, -1], [1.0, 2.0, 3.0])

    def test_graph_to_pointset_linear_field(self):
        F = GridField.sample(lambda X, t: X[..., -1], [np.linspace(-1, 1, 5)] * 2, [0.0])
        pts = graph_to_pointset(F, ParabolicCylinder((0.0, 0.0), 0.0, 2.0))
        np.testing.assert_array_equal(pts[:, -1], pts[:, 1])

    def test_graph_to_pointset_empty(self):
        F = GridField.sample(lambda X, t: 0 * X[..., 0], [np.linspace(0, 1, 3)], [0.0])
        with pytest.raises(EmptyResultError):
            graph_to_pointset(F, ParabolicCylinder((10.0,), 0.0, 0.5))

    def test_pointset_csv(self):
        pts = np.array([[0.1, 0.2, 0.3], [1.0 / 3.0, 2.0, 3.0]])
        buf = io.StringIO()
        write_pointset_csv(pts, 1, buf)
        buf.seek(0)
        np.testing.assert_array_equal(read_pointset_csv(buf), pts)
