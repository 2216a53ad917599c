import math

import numpy as np
import pytest
from scipy.special import jn_zeros

from fblab.barriers import (DRIFT, R_BARRIER, T_START, BarrierSpec, ObliqueCylinder, barrier_constant,
                            barrier_eval, bump, decay, inf_phi_on_q13, lambda1, lower_bound_violation,
                            operator_value, phi1, phi1_radial_derivative, phi2, phi2_prime, phi2_second,
                            subsolution_check)
from fblab.errors import ArgumentError, DomainError

R = R_BARRIER


def random_points_in_closed_d(rng, n, count):
    t = rng.uniform(T_START, 0.0, count)
    if n == 2:
        xp = rng.uniform(-R, R, (count, 1))
    else:
        rho = R * np.sqrt(rng.uniform(0, 1, count))
        th = rng.uniform(0, 2 * np.pi, count)
        xp = np.stack([rho * np.cos(th), rho * np.sin(th)], -1)
    xn = rng.uniform(-R, R, count) - DRIFT * t
    return np.concatenate([xp, xn[:, None]], -1), t


class TestEigenfunction:
    def test_centre_and_boundary(self):
        assert phi1([0.0], 2) == 1.0
        assert phi1([0.0, 0.0], 3) == 1.0
        assert phi1([R], 2) == 0.0
        assert phi1([0.0, R], 3) == 0.0

    def test_eigenvalues(self):
        assert lambda1(2) == pytest.approx(math.pi ** 2 / (4 * R ** 2), rel=1e-15)
        assert lambda1(3) == pytest.approx((jn_zeros(0, 1)[0] / R) ** 2, rel=1e-14)

    @pytest.mark.parametrize("n", [2, 3])
    def test_eigen_residual(self, n):
        rng = np.random.default_rng(n)
        h = 1e-4
        if n == 2:
            x = rng.uniform(-0.9 * R, 0.9 * R, (100, 1))
        else:
            rho = 0.9 * R * np.sqrt(rng.uniform(0, 1, 100))
            th = rng.uniform(0, 2 * np.pi, 100)
            x = np.stack([rho * np.cos(th), rho * np.sin(th)], -1)
        lap = sum((phi1(x + h * e, n) - 2 * phi1(x, n) + phi1(x - h * e, n)) / h ** 2 for e in np.eye(n - 1))
        assert np.max(np.abs(-lap - lambda1(n) * phi1(x, n))) <= 1e-6 * lambda1(n)

    def test_radial_derivative(self):
        rho = np.linspace(0.01, 0.4, 9)
        h = 1e-7
        for n in (2, 3):
            def along_axis(r):
                xs = np.zeros((r.size, n - 1))
                xs[:, 0] = r
                return phi1(xs, n)
            fd = (along_axis(rho + h) - along_axis(rho - h)) / (2 * h)
            np.testing.assert_allclose(phi1_radial_derivative(rho, n), fd, atol=1e-7)

    def test_errors(self):
        with pytest.raises(DomainError):
            phi1([0.5], 2)
        with pytest.raises(ArgumentError):
            phi1([0.0, 0.0, 0.0], 4)
        with pytest.raises(ArgumentError):
            lambda1(4)


class TestBell:
    def test_values(self):
        assert phi2(0.0) == 1.0
        assert phi2(R) == pytest.approx(0.0, abs=1e-15) and phi2(-R) == pytest.approx(0.0, abs=1e-15)
        assert phi2_prime(0.0) == 0.0

    def test_even_and_range(self):
        x = np.random.default_rng(0).uniform(-R, R, 1000)
        np.testing.assert_array_equal(phi2(x), phi2(-x))
        assert phi2(x).min() >= 0 and phi2(x).max() <= 1

    def test_derivatives(self):
        x = np.linspace(-0.9 * R, 0.9 * R, 37)
        h = 1e-6
        np.testing.assert_allclose(phi2_prime(x), (phi2(x + h) - phi2(x - h)) / (2 * h), atol=1e-7)
        np.testing.assert_allclose(phi2_second(x), (phi2_prime(x + h) - phi2_prime(x - h)) / (2 * h),
                                   rtol=1e-5, atol=1e-5)
        assert phi2_second(0.0, side=1) == phi2_second(0.0, side=-1) == pytest.approx(-6 / R ** 2)

    def test_domain(self):
        with pytest.raises(DomainError):
            phi2(0.5)


class TestSpec:
    def test_invariants(self):
        with pytest.raises(ArgumentError):
            BarrierSpec(2, 0.01, 0.1, 1.0, 1.0, 0.5)
        with pytest.raises(ArgumentError):
            BarrierSpec(2, 0.1, 0.1, 100.0, 1.0, 0.5)
        with pytest.raises(ArgumentError):
            BarrierSpec(2, 0.01, 0.1, 100.0, 1.5, 0.5)
        with pytest.raises(ArgumentError):
            BarrierSpec(2, 0.01, 0.1, 100.0, 1.0, 0.5, r=0.5)
        with pytest.raises(ArgumentError):
            BarrierSpec(4, 0.01, 0.1, 100.0, 1.0, 0.5)

    def test_minimal_exceeds_threshold(self):
        for n in (2, 3):
            for am in (0.25, 0.5, 1.0):
                s = BarrierSpec.minimal(n, 1.0, am)
                assert s.threshold < s.K <= 2 * s.threshold

    def test_cylinder_membership(self):
        D = ObliqueCylinder()
        assert D.contains(np.array([0.0, 0.5]), -0.8, closed=True)
        assert not D.contains(np.array([0.0, 0.5]), -0.8)
        assert D.contains(np.array([0.0, 0.0]), 0.0)
        assert not D.contains(np.array([0.0, 0.5]), 0.0)


class TestBarrier:
    @pytest.mark.parametrize("n", [2, 3])
    def test_bounds_on_random_points(self, n):
        spec = BarrierSpec.minimal(n, 1.0, 0.5)
        X, t = random_points_in_closed_d(np.random.default_rng(n), n, 100_000)
        w = barrier_eval(spec, X, t)
        assert np.all(w <= X[:, -1] - spec.delta + 1e-15)
        assert np.all(w >= X[:, -1] - spec.delta - spec.c0 * spec.delta - 1e-15)

    def test_lateral_boundary(self):
        spec = BarrierSpec.minimal(2, 1.0, 0.5)
        t = np.linspace(T_START, 0, 11)
        X = np.stack([np.full_like(t, R), 0.1 - DRIFT * t], -1)
        np.testing.assert_allclose(barrier_eval(spec, X, t), X[:, -1] - spec.delta * (1 + spec.c0), atol=1e-17)
        Xb = np.stack([np.zeros_like(t), R - DRIFT * t], -1)
        np.testing.assert_allclose(barrier_eval(spec, Xb, t), Xb[:, -1] - spec.delta * (1 + spec.c0), atol=1e-16)

    def test_initial_time(self):
        spec = BarrierSpec.minimal(2, 1.0, 0.5)
        assert decay(spec, T_START) == 1.0
        x = np.array([0.0, 0.1])
        phi = bump(spec, x, T_START)
        assert barrier_eval(spec, x, T_START) == pytest.approx(0.1 - spec.delta + spec.c0 * spec.delta * (phi - 1))

    def test_outside_domain(self):
        spec = BarrierSpec.minimal(2, 1.0, 0.5)
        with pytest.raises(DomainError):
            barrier_eval(spec, np.array([0.0, 0.9]), 0.0)
        with pytest.raises(ArgumentError):
            barrier_eval(spec, np.array([0.0, 0.0, 0.0]), 0.0)

    def test_operator_matches_finite_differences(self):
        # w_t and Delta w only see c0 delta s(t) phi, and s' = -K s, so the
        # operator divided by c0 delta s(t) is a (phi_t - K phi) - Delta phi
        spec = BarrierSpec.minimal(3, 1.0, 0.5)
        rng = np.random.default_rng(1)
        X, t = random_points_in_closed_d(rng, 3, 200)
        X[:, :2] *= 0.8
        xi = 0.8 * (X[:, -1] + DRIFT * t)
        X[:, -1] = xi - DRIFT * t
        keep = np.abs(xi) > 0.01
        X, t = X[keep], t[keep]
        h = 1e-4
        phi_t = (bump(spec, X, t + h) - bump(spec, X, t - h)) / (2 * h)
        lap = sum((bump(spec, X + h * e, t) - 2 * bump(spec, X, t) + bump(spec, X - h * e, t)) / h ** 2
                  for e in np.eye(3))
        expected = 0.5 * (phi_t - spec.K * bump(spec, X, t)) - lap
        scale = spec.c0 * spec.delta * decay(spec, t)
        np.testing.assert_allclose(operator_value(spec, 0.5, X, t) / scale, expected, rtol=1e-5, atol=1e-3)


class TestSubsolution:
    @pytest.mark.parametrize("n", [2, 3])
    @pytest.mark.parametrize("a_minus", [0.25, 0.5, 1.0])
    def test_certificate(self, n, a_minus):
        rep = subsolution_check(BarrierSpec.minimal(n, 1.0, a_minus))
        assert rep.passed and rep.max_operator_value < 0
        assert rep.one_sided_at_seam["minus"] < 0 and rep.one_sided_at_seam["plus"] < 0
        assert rep.c > 0 and math.isfinite(rep.log_c)

    def test_below_threshold_fails(self):
        spec = BarrierSpec(2, 0.01, 0.1, 0.0, 1.0, 0.5, enforce_threshold=False)
        rep = subsolution_check(spec, auto_increase=False)
        assert not rep.passed
        assert rep.max_operator_value > 0
        assert rep.regime_max["lower_plateau"] > 0 or rep.regime_max["upper_plateau"] > 0

    def test_lower_bound_on_q13(self):
        spec = BarrierSpec.minimal(2, 1.0, 0.5)
        rep = subsolution_check(spec)
        final = spec.with_K(rep.K_used)
        c, log_c, inf_phi = barrier_constant(final)
        assert c == pytest.approx(rep.c)
        assert 0 < inf_phi <= 1 and inf_phi == pytest.approx(inf_phi_on_q13(final))
        assert lower_bound_violation(final, c) <= 0

    def test_grid_resolution_validated(self):
        with pytest.raises(ArgumentError):
            subsolution_check(BarrierSpec.minimal(2, 1.0, 0.5), grid_resolution=2)
