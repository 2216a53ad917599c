import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fblab.errors import ArgumentError, EmptyResultError, GraphViolationError
from fblab.fbdiag import (FreeBoundaryGraph, best_plane, extract_free_boundary, fit_exponent, flat_fixture,
                          flatness, harnack_decay_probe, improvement_of_flatness_probe, normal_holder_probe)
from fblab.geometry import GridField, ParabolicCylinder
from fblab.selfsim import evaluate_u, matched_profile

AX = np.linspace(-1, 1, 41)
TIMES = np.linspace(-1, 0, 11)
Q1 = ParabolicCylinder((0.0, 0.0), 0.0, 1.0)


def sampled(func, ax=AX, times=TIMES):
    return GridField.sample(func, [ax, ax], times)


@pytest.fixture(scope="module")
def flat_solution():
    return flat_fixture(delta=0.01, cells=120, steps_t=60)


class TestExtraction:
    def test_flat_plane(self):
        G = extract_free_boundary(sampled(lambda X, t: X[..., -1]), Q1)
        assert len(G) > 0
        np.testing.assert_allclose(G.g, 0.0, atol=1e-15)
        np.testing.assert_allclose(G.normals, np.tile([0.0, 1.0], (len(G), 1)), atol=1e-14)

    def test_shifted_plane(self):
        G = extract_free_boundary(sampled(lambda X, t: X[..., -1] - 0.3), Q1)
        np.testing.assert_allclose(G.g, 0.3, atol=1e-14)

    def test_graph_round_trip(self):
        def gamma(x1, t):
            return 0.2 * np.sin(x1) + 0.05 * t

        ax = np.linspace(-1, 1, 81)
        F = sampled(lambda X, t: X[..., -1] - gamma(X[..., 0], t), ax)
        G = extract_free_boundary(F, Q1)
        h = F.h
        assert np.max(np.abs(G.g - gamma(G.xprime[:, 0], G.t))) <= h * h

    def test_self_similar_cone(self):
        prof = matched_profile(3, 0.1)
        s = prof.s_eps
        ax1 = np.linspace(-0.1, 0.1, 21)
        ax2 = np.linspace(s - 0.2, s + 0.2, 81)
        times = np.linspace(-1.01, -1.0, 3)

        def u(X, t):
            pts = np.concatenate([X, np.zeros(X.shape[:-1] + (1,))], -1)
            return -evaluate_u(prof, pts, t)

        F = GridField.sample(u, [ax1, ax2], times)
        G = extract_free_boundary(F, ParabolicCylinder((0.0, s), -1.0, 0.15))
        exact = np.sqrt(s ** 2 * (-G.t) - G.xprime[:, 0] ** 2)
        assert len(G) > 10
        assert np.max(np.abs(G.g - exact)) <= F.h

    def test_multivalued_column(self):
        F = sampled(lambda X, t: X[..., -1] ** 2 - 0.25)
        with pytest.raises(GraphViolationError) as info:
            extract_free_boundary(F, Q1)
        assert info.value.columns and len(info.value.columns[0]) == 2

    def test_decreasing_crossing(self):
        with pytest.raises(GraphViolationError):
            extract_free_boundary(sampled(lambda X, t: -X[..., -1]), Q1)

    def test_empty_window(self):
        with pytest.raises(EmptyResultError):
            extract_free_boundary(sampled(lambda X, t: X[..., -1]), ParabolicCylinder((5.0, 5.0), 0.0, 0.1))

    def test_no_crossing_is_empty(self):
        G = extract_free_boundary(sampled(lambda X, t: X[..., -1] + 3), Q1)
        assert len(G) == 0 and G.normals.shape == (0, 2)

    def test_flat_fixture_is_a_delta_graph(self, flat_solution):
        G = extract_free_boundary(flat_solution, ParabolicCylinder((0.0, 0.0), 0.0, 0.5))
        assert len(G) > 0 and np.max(np.abs(G.g)) <= 0.01


class TestFlatness:
    def test_plane(self):
        assert flatness(sampled(lambda X, t: X[..., -1]), Q1, [0, 1]) == 0

    def test_sine_perturbation(self):
        F = sampled(lambda X, t: X[..., -1] + 0.05 * np.sin(X[..., 0]))
        assert flatness(F, Q1, [0, 1]) == pytest.approx(0.05 * math.sin(1.0), abs=1e-15)

    def test_double_slope(self):
        assert flatness(sampled(lambda X, t: 2 * X[..., -1]), Q1, [0, 1]) == pytest.approx(1.0)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
    def test_lipschitz_in_direction(self, a, b, c, d):
        F = sampled(lambda X, t: X[..., -1] + 0.1 * np.cos(2 * X[..., 0] + t))
        f1, f2 = flatness(F, Q1, [a, b]), flatness(F, Q1, [c, d])
        assert abs(f1 - f2) <= math.hypot(a - c, b - d) + 1e-12

    def test_errors(self):
        F = sampled(lambda X, t: X[..., -1])
        with pytest.raises(ArgumentError):
            flatness(F, Q1, [0, 0, 1])
        with pytest.raises(EmptyResultError):
            flatness(F, ParabolicCylinder((9.0, 9.0), 0.0, 0.1), [0, 1])

    def test_best_plane_recovers_tilt(self):
        nu0 = np.array([0.3, 0.9])
        nu, dev = best_plane(sampled(lambda X, t: X @ nu0), Q1)
        np.testing.assert_allclose(nu, nu0, atol=1e-10)
        assert dev < 1e-10

    def test_best_plane_is_optimal(self):
        F = sampled(lambda X, t: X[..., -1] + 0.1 * X[..., 0] ** 2)
        nu, dev = best_plane(F, Q1)
        rng = np.random.default_rng(0)
        for trial in nu + 0.01 * rng.normal(size=(20, 2)):
            assert flatness(F, Q1, trial) >= dev - 1e-12
        assert flatness(F, Q1, nu) == pytest.approx(dev, rel=1e-9)

    def test_constraint_generation_matches_full_lp(self):
        from fblab.fbdiag import _chebyshev_plane, _solve_plane_lp
        rng = np.random.default_rng(3)
        Y = rng.normal(size=(5000, 3))
        u = Y @ [0.1, 0.2, 1.0] + 0.05 * np.sin(7 * Y[:, 0])
        nu_full = _solve_plane_lp(Y, u)
        nu, dev = _chebyshev_plane(Y, u)
        assert dev == pytest.approx(np.max(np.abs(u - Y @ nu_full)), rel=1e-8)


class TestImprovement:
    def test_linear_sentinel(self):
        rep = improvement_of_flatness_probe(sampled(lambda X, t: X[..., -1]), ((0.0, 0.0), 0.0), [0.8, 0.5, 0.3])
        assert np.all(rep.deviations == 0) and rep.fitted_exponent == math.inf

    def test_quadratic_exponent(self):
        ax = np.linspace(-1, 1, 81)
        F = sampled(lambda X, t: X[..., -1] + 0.5 * X[..., -1] ** 2, ax, np.linspace(-1, 0, 41))
        rep = improvement_of_flatness_probe(F, ((0.0, 0.0), 0.0), [0.8, 0.56, 0.4, 0.28, 0.2])
        assert rep.fitted_exponent == pytest.approx(2.0, abs=0.1)

    def test_small_radii_dropped(self):
        with pytest.warns(RuntimeWarning):
            rep = improvement_of_flatness_probe(sampled(lambda X, t: X[..., -1]), ((0.0, 0.0), 0.0), [0.5, 0.01])
        assert list(rep.radii) == [0.5]

    def test_fit_exponent(self):
        r = np.array([1.0, 0.5, 0.25])
        assert fit_exponent(r, 3 * r ** 1.5) == pytest.approx(1.5)
        assert fit_exponent(r, np.zeros(3)) == math.inf
        assert math.isnan(fit_exponent(r, [1.0, 0.0, 0.0]))

    def test_perturbed_flat_fixture(self, flat_solution):
        from fblab.cli import FLATNESS_RADII, flatness_center
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = improvement_of_flatness_probe(flat_solution, flatness_center(flat_solution), FLATNESS_RADII)
        assert rep.fitted_exponent > 1.05
        assert np.all(np.linalg.norm(rep.normals - [0, 1], axis=1) < 0.05)


class TestHarnack:
    def test_plane_and_shift(self):
        for shift in (0.0, 0.01):
            rep = harnack_decay_probe(sampled(lambda X, t: X[..., -1] + shift), Q1, 2)
            assert np.all(rep.oscillations == 0) and np.all(rep.ratios == 0)
            np.testing.assert_allclose(rep.alphas, shift)

    def test_flat_fixture_decays(self, flat_solution):
        rep = harnack_decay_probe(flat_solution, Q1, 3, delta=0.01)
        assert np.all(rep.ratios < 1)
        np.testing.assert_allclose(rep.radii, 3.0 ** -np.arange(4))

    def test_flatness_assumption(self):
        with pytest.raises(ArgumentError):
            harnack_decay_probe(sampled(lambda X, t: X[..., -1] + 0.1), Q1, 1, delta=0.01)
        with pytest.raises(ArgumentError):
            harnack_decay_probe(sampled(lambda X, t: X[..., -1]), Q1, -1)


class TestNormals:
    def test_planar_constant_zero(self):
        G = extract_free_boundary(sampled(lambda X, t: X[..., -1] - 0.11), Q1)
        assert normal_holder_probe(G).constant == 0

    def test_parabola_normals(self):
        ax = np.linspace(-1, 1, 81)
        G = extract_free_boundary(sampled(lambda X, t: X[..., -1] + 0.01 * X[..., 0] ** 2, ax), Q1)
        fit = normal_holder_probe(G)
        assert fit.best_exponent >= 1.0 - 1e-12

    def test_solved_fixture_positive(self, flat_solution):
        G = extract_free_boundary(flat_solution, ParabolicCylinder((0.0, 0.0), 0.0, 0.5))
        fit = normal_holder_probe(G)
        assert fit.best_exponent >= 0.2

    def test_needs_normals(self):
        g = FreeBoundaryGraph(np.zeros((10, 1)), np.zeros(10), np.zeros(10))
        with pytest.raises(ArgumentError):
            normal_holder_probe(g)
        G = extract_free_boundary(sampled(lambda X, t: X[..., -1]), ParabolicCylinder((0.0, 0.0), 0.0, 0.06))
        with pytest.raises(ArgumentError):
            normal_holder_probe(G)
