import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fblab.cli import hodograph_refinement
from fblab.errors import ArgumentError, TransformError
from fblab.geometry import GridField, ParabolicCylinder
from fblab.hodograph import (HodographPatch, coefficient_field, coefficient_matrix, derivative_identity_check,
                             ellipticity_constant, ellipticity_sweep, forward_transform, hodograph_factor,
                             round_trip_error, transmission_residual)
from fblab.pde import TravelingWave, solve_nonlinear

Q = ParabolicCylinder((0.0, 0.0), 0.0, 0.5)


def sampled(func, N=32, nt=8):
    ax = np.linspace(-0.5, 0.5, N + 1)
    return GridField.sample(func, [ax, ax], np.linspace(-0.25, 0.0, nt + 1))


def transform(func, **kw):
    return forward_transform(sampled(func, **kw), Q, lam=0.1)


class TestCoefficients:
    def test_identity_at_en(self):
        c = coefficient_matrix([0.0, 1.0])
        assert np.array_equal(c.B, np.eye(2))
        assert np.array_equal(coefficient_matrix([0.0, 0.0, 1.0]).B, np.eye(3))

    def test_two_dimensional_example(self):
        np.testing.assert_allclose(coefficient_matrix([1.0, 1.0]).B, [[1.0, -1.0], [-1.0, 2.0]], atol=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=2, max_size=2),
           st.floats(0.1, 3).flatmap(lambda v: st.sampled_from([v, -v])))
    def test_gram_form_and_definiteness(self, pp, pn):
        p = np.array(pp + [pn])
        c = coefficient_matrix(p)
        F = hodograph_factor(p)
        np.testing.assert_allclose(c.B, F.T @ F, atol=1e-14 * max(1.0, np.abs(c.B).max()))
        np.testing.assert_array_equal(c.B, c.B.T)
        assert np.linalg.eigvalsh(c.B).min() > 0

    def test_vectorised_field(self):
        P = np.random.default_rng(0).uniform(0.5, 2.0, (4, 5, 2))
        B = coefficient_field(P)
        assert B.shape == (4, 5, 2, 2)
        np.testing.assert_allclose(B[1, 2], coefficient_matrix(P[1, 2]).B)

    def test_singular(self):
        with pytest.raises(ArgumentError):
            coefficient_matrix([1.0, 0.0])

    @pytest.mark.parametrize("n", [2, 3])
    def test_ellipticity_sweep(self, n):
        sw = ellipticity_sweep(2.0, 4.0, n)
        assert sw.min_eigenvalue >= 1 / sw.Lambda and sw.max_eigenvalue <= sw.Lambda
        assert sw.Lambda == pytest.approx(ellipticity_constant(2 * math.sqrt(2), 4.0, n))

    def test_ellipticity_constant_at_identity(self):
        assert ellipticity_constant(1.0, 1.0, 2) == pytest.approx(3.0)


class TestTrivialFixtures:
    def test_identity(self):
        P = transform(lambda X, t: X[..., -1])
        assert isinstance(P, HodographPatch) and P.has_interface
        H = P.h_field
        np.testing.assert_allclose(H.values, np.broadcast_to(H.node_coordinates()[..., -1:], H.shape), atol=1e-12)
        assert round_trip_error(P) <= 1e-12
        d = derivative_identity_check(P)
        assert d.time <= 1e-12 and d.gradient <= 1e-12 and d.reciprocal <= 1e-12
        r = transmission_residual(P, 1.0, 0.5)
        assert max(r) <= 1e-12

    def test_linear(self):
        P = transform(lambda X, t: 2 * X[..., -1])
        H = P.h_field
        np.testing.assert_allclose(H.values, np.broadcast_to(H.node_coordinates()[..., -1:] / 2, H.shape), atol=1e-12)
        assert round_trip_error(P) <= 1e-12
        assert derivative_identity_check(P).hn_range == pytest.approx((0.5, 0.5))

    def test_time_shift(self):
        P = transform(lambda X, t: X[..., -1] + 0.01 * t)
        assert round_trip_error(P) <= 1e-12
        d = derivative_identity_check(P)
        assert d.time <= 1e-12 and d.gradient <= 1e-12

    def test_smooth_monotone(self):
        errs = []
        for N in (16, 32):
            P = transform(lambda X, t: X[..., -1] + 0.1 * np.sin(X[..., -1]), N=N)
            errs.append(round_trip_error(P))
            assert errs[-1] <= (1 / N) ** 2

    def test_broken_patch_jump(self):
        P = transform(lambda X, t: X[..., -1])
        H = P.h_field
        yn = H.node_coordinates()[..., -1:]
        bad = HodographPatch(P.source_field, P.lam, H.with_values(H.values + 0.1 * np.abs(yn)), P.un_range)
        assert transmission_residual(bad, 1.0, 0.5).interface_jump == pytest.approx(0.2, abs=1e-12)


class TestErrors:
    def test_monotonicity(self):
        with pytest.raises(TransformError) as info:
            transform(lambda X, t: X[..., -1] ** 2)
        assert info.value.columns

    def test_band_validation(self):
        P = transform(lambda X, t: X[..., -1])
        with pytest.raises(ArgumentError):
            transmission_residual(P, 1.0, 0.5, band=-1.0)

    def test_interface_outside(self):
        P = transform(lambda X, t: X[..., -1] + 2.0)
        assert not P.has_interface
        with pytest.raises(ArgumentError):
            transmission_residual(P, 1.0, 0.5)


def orders(rows, k):
    return [math.log(rows[i][k] / rows[i + 1][k]) / math.log(rows[i][0] / rows[i + 1][0])
            for i in range(len(rows) - 1)]


class TestRefinement:
    def test_traveling_wave_orders(self):
        rows = hodograph_refinement([32, 64])
        for h, rt, *_ in rows:
            assert rt <= 10 * h * h
        for k in range(2, 7):
            assert orders(rows, k)[0] >= 0.9

    def test_reciprocal_identity(self):
        tw = TravelingWave(1.0, 0.5, 1.0, (math.sin(0.3), math.cos(0.3)))
        d = derivative_identity_check(forward_transform(sampled(tw, N=64, nt=16), Q, lam=0.1))
        lo, hi = d.hn_range
        assert 0 < lo <= hi and d.reciprocal < 0.01

    def test_solved_patch_round_trip(self):
        tw = TravelingWave(1.0, 0.5, 1.0, (math.sin(0.3), math.cos(0.3)))
        for N in (16, 32):
            F = solve_nonlinear(1.0, 0.5, [(-0.5, 0.5), (-0.5, 0.5)], (-0.25, 0.0), [N, N, N // 4],
                                initial=lambda X: tw(X, -0.25), boundary=tw, reg_width=2 / N)
            P = forward_transform(F, Q, lam=0.1)
            assert round_trip_error(P) <= 10 / N ** 2
