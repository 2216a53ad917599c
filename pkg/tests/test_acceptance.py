"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Every test measures its own wall time and fails if the stated runtime
budget is exceeded.
"""
import math
import time
import warnings

import numpy as np
import pytest

from fblab import barriers, fbdiag, hodograph, selfsim, specfun
from fblab.cli import (FLATNESS_RADII, flatness_center, hodograph_refinement, linear_quadratic_error,
                       selfsim_evolution_error)
from fblab.errors import MatchingError
from fblab.geometry import GridField, ParabolicCylinder, graph_to_pointset, hausdorff_distance
from fblab.pde import TravelingWave, solve_nonlinear


@pytest.fixture
def report(capsys):
    """Call ``report(number, checks, detail, budget)`` at the end of a criterion."""
    start = time.perf_counter()

    def emit(number, checks, detail="", budget=None):
        elapsed = time.perf_counter() - start
        checks = dict(checks)
        if budget is not None:
            checks[f"runtime < {budget:g} s"] = elapsed < budget
        ok = all(checks.values())
        failed = [name for name, v in checks.items() if not v]
        with capsys.disabled():
            line = f"\nCRITERION {number:2d} {'PASS' if ok else 'FAIL'} ({elapsed:.2f} s) {detail}"
            if failed:
                line += " | failed: " + "; ".join(failed)
            print(line)
        assert ok, failed

    return emit


def test_criterion_01_closed_form_zeros(report):
    worst = 0.0
    for n in (3, 5, 7):
        worst = max(worst, abs(specfun.scaled_zero_m(2, n) / math.sqrt(2 * n) - 1))
        for eps in (0.1, 0.5, 0.9):
            worst = max(worst, abs(specfun.scaled_zero_u(2, n, eps) / math.sqrt(2 * n / eps) - 1))
    report(1, {"relative error <= 1e-10": worst <= 1e-10}, f"max rel err {worst:.2e}", budget=1)


def test_criterion_02_critical_eps(report):
    e0 = selfsim.eps0(3)
    below = selfsim.solve_alpha(3, 0.9 * e0)
    checks = {"alpha < 1 below eps0": below.alpha < 1, "residual <= 1e-9 below": below.residual <= 1e-9}
    try:
        above = selfsim.solve_alpha(3, 1.1 * e0)
        checks["alpha >= 1 above eps0"] = above.alpha >= 1
        checks["residual <= 1e-9 above"] = above.residual <= 1e-9
        above_text = f"{above.alpha:.6f}"
    except MatchingError:
        above_text = "no root in (0,2]"
    alphas = []
    for k in (1, 2, 3, 4):
        m = selfsim.solve_alpha(3, e0 / 2 ** k)
        checks[f"residual <= 1e-9 at eps0/{2 ** k}"] = m.residual <= 1e-9
        alphas.append(m.alpha)
    checks["alpha strictly decreasing"] = all(b < a for a, b in zip(alphas, alphas[1:]))
    checks["alpha(smallest) < alpha(largest)/2"] = alphas[-1] < alphas[0] / 2
    report(2, checks, f"eps0(3)={e0:.10f} alpha(0.9eps0)={below.alpha:.6f} alpha(1.1eps0)={above_text} "
                      f"alphas={[round(a, 4) for a in alphas]}", budget=30)


def test_criterion_03_profile_certificate(report):
    prof = selfsim.matched_profile(3, 0.1)
    s = np.linspace(0.05, 3 * prof.s_eps, 4000)
    s = s[np.abs(s - prof.s_eps) > selfsim.SEAM_BAND + selfsim.ODE_STEP]
    res = selfsim.ode_residual(prof, s)
    checks = {
        "ODE residual <= 1e-6": res <= 1e-6,
        "f(0) = 1 exactly": prof.f(0.0) == 1.0,
        "single sign change (1e4 points)": selfsim.sign_change_count(prof, 3 * prof.s_eps, 10_000) == 1,
        "s_eps in (sqrt 6, sqrt 60)": math.sqrt(6) < prof.s_eps < math.sqrt(60),
        "structural certificate clean": not selfsim.certify_profile(prof),
    }
    report(3, checks, f"residual {res:.2e} s_eps {prof.s_eps:.10f}", budget=10)


def test_criterion_04_gradient_growth(report):
    prof = selfsim.matched_profile(3, 0.1)
    times = -(4.0 ** -np.arange(1, 7))
    ratios = selfsim.gradient_growth_ratios(prof, times, radius=0.1)
    # exact scaling on balls that shrink with the parabolic scaling
    base = selfsim.gradient_sup_ball(prof, -1.0, 0.1)
    scaled = np.array([selfsim.gradient_sup_ball(prof, t, 0.1 * math.sqrt(-t)) for t in times])
    rel = np.abs(scaled / base / (-times) ** ((prof.alpha - 1) / 2) - 1)
    checks = {
        "alpha < 1": prof.alpha < 1,
        "every ratio >= 2^((1-alpha)/2*0.99)": bool(np.all(ratios >= 2 ** ((1 - prof.alpha) / 2 * 0.99))),
        "scaling identity within 5%": bool(np.all(rel <= 0.05)),
    }
    report(4, checks, f"min ratio {ratios.min():.4f} scaling err {rel.max():.1e}", budget=5)


def test_criterion_05_linear_exactness(report):
    err32, h32, w32 = linear_quadratic_error(32)
    err64, h64, w64 = linear_quadratic_error(64)
    order = math.log2(err32 / err64)
    checks = {"sup error <= 5 (h^2 + w) at 64^2 x 64": err64 <= 5 * (h64 ** 2 + w64), "order >= 1.5": order >= 1.5}
    report(5, checks, f"err32 {err32:.2e} err64 {err64:.2e} order {order:.2f}", budget=120)


def test_criterion_06_selfsim_evolution(report):
    prof = selfsim.matched_profile(3, 0.1)
    e1 = selfsim_evolution_error(prof, 2048, 500, 0.01)
    e2 = selfsim_evolution_error(prof, 4096, 1000, 0.005)
    checks = {"sup error <= 0.02": e1 <= 0.02, "refinement gain >= 1.5": e1 / e2 >= 1.5}
    report(6, checks, f"err {e1:.2e} refined {e2:.2e} gain {e1 / e2:.2f}", budget=120)


@pytest.fixture(scope="module")
def flat_solution():
    return fbdiag.flat_fixture(delta=0.01, cells=120, steps_t=60)


def _plane_field(cells=40):
    ax = np.linspace(-1, 1, cells + 1)
    return GridField.sample(lambda X, t: X[..., -1], [ax, ax], np.linspace(-1, 0, cells // 2 + 1))


def test_criterion_07_harnack_decay(report, flat_solution):
    Q = ParabolicCylinder((0.0, 0.0), 0.0, 1.0)
    rep = fbdiag.harnack_decay_probe(flat_solution, Q, 3, delta=0.01)
    flat = fbdiag.harnack_decay_probe(_plane_field(), Q, 3)
    checks = {"three ratios < 1": len(rep.ratios) == 3 and bool(np.all(rep.ratios < 1)),
              "flat field oscillations zero": bool(np.all(flat.oscillations == 0))}
    report(7, checks, f"ratios {np.round(rep.ratios, 4).tolist()}")


def test_criterion_08_improvement_of_flatness(report, flat_solution):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = fbdiag.improvement_of_flatness_probe(flat_solution, flatness_center(flat_solution), FLATNESS_RADII)
        lin = fbdiag.improvement_of_flatness_probe(_plane_field(), ((0.0, 0.0), 0.0), FLATNESS_RADII[:6])
    checks = {"fitted exponent > 1.05": rep.fitted_exponent > 1.05,
              "linear field gives zero sentinel": bool(np.all(lin.deviations == 0)) and lin.fitted_exponent == math.inf}
    report(8, checks, f"exponent {rep.fitted_exponent:.3f}")


def test_criterion_09_barrier(report):
    checks, parts = {}, []
    for n in (2, 3):
        for am in (0.25, 0.5, 1.0):
            rep = barriers.subsolution_check(barriers.BarrierSpec.minimal(n, 1.0, am))
            checks[f"n={n} a-={am} max < 0"] = rep.passed and rep.max_operator_value < 0
            checks[f"n={n} a-={am} c > 0"] = rep.c > 0
            parts.append(f"n{n}/a{am}:K={rep.K_used:g},logc={rep.log_c:.1f}")
    bad = barriers.subsolution_check(barriers.BarrierSpec(2, 0.01, 0.1, 0.0, 1.0, 0.5, enforce_threshold=False),
                                     auto_increase=False)
    checks["below-threshold K gives a positive value"] = bad.max_operator_value > 0
    report(9, checks, " ".join(parts), budget=30)


def test_criterion_10_hodograph(report):
    checks = {}
    Q = ParabolicCylinder((0.0, 0.0), 0.0, 0.5)
    ax = np.linspace(-0.5, 0.5, 33)
    ts = np.linspace(-0.25, 0.0, 9)
    for name, func in (("identity", lambda X, t: X[..., -1]), ("linear", lambda X, t: 2 * X[..., -1])):
        P = hodograph.forward_transform(GridField.sample(func, [ax, ax], ts), Q, lam=0.1)
        d = hodograph.derivative_identity_check(P)
        r = hodograph.transmission_residual(P, 1.0, 0.5)
        worst = max(hodograph.round_trip_error(P), d.time, d.gradient, *r)
        checks[f"{name} fixture exact to 1e-12"] = worst <= 1e-12

    tw = TravelingWave(1.0, 0.5, 1.0, (math.sin(0.3), math.cos(0.3)))
    rts = []
    for N in (16, 32, 64):
        F = solve_nonlinear(1.0, 0.5, [(-0.5, 0.5), (-0.5, 0.5)], (-0.25, 0.0), [N, N, N // 4],
                            initial=lambda X: tw(X, -0.25), boundary=tw, reg_width=2 / N)
        rt = hodograph.round_trip_error(hodograph.forward_transform(F, Q, lam=0.1))
        rts.append(rt)
        checks[f"solved patch N={N} round trip <= 10 h^2"] = rt <= 10 / N ** 2

    rows = hodograph_refinement([32, 64, 128])
    names = ["time identity", "gradient identity", "plus residual", "minus residual", "interface jump"]
    orders = {}
    for k, name in enumerate(names, start=2):
        o = min(math.log(rows[i][k] / rows[i + 1][k]) / math.log(rows[i][0] / rows[i + 1][0])
                for i in range(len(rows) - 1))
        orders[name] = round(o, 2)
        checks[f"{name} order >= 0.9"] = o >= 0.9

    rng = np.random.default_rng(0)
    worst_gram = 0.0
    for _ in range(1000):
        p = rng.uniform(-2, 2, 3)
        p[-1] = math.copysign(rng.uniform(0.2, 2), p[-1])
        c = hodograph.coefficient_matrix(p)
        Fm = hodograph.hodograph_factor(p)
        worst_gram = max(worst_gram, float(np.max(np.abs(c.B - Fm.T @ Fm)) / max(1.0, np.max(np.abs(c.B)))))
    checks["B matches A^T A to 1e-14 (relative to max |b_ij|)"] = worst_gram <= 1e-14
    checks["B(e_n) = I"] = bool(np.array_equal(hodograph.coefficient_matrix([0.0, 1.0]).B, np.eye(2)))
    report(10, checks, f"gram gap {worst_gram:.1e} round trips {[f'{v:.1e}' for v in rts]} orders {orders}")


def test_criterion_11_hausdorff(report):
    rng = np.random.default_rng(11)
    sets = [rng.normal(size=(int(rng.integers(1, 30)), 3)) for _ in range(1000)]
    ok_identity = ok_sym = ok_tri = ok_pos = True
    for i in range(len(sets)):
        X, Y, Z = sets[i], sets[(i + 1) % len(sets)], sets[(i + 2) % len(sets)]
        dxy, dyx = hausdorff_distance(X, Y), hausdorff_distance(Y, X)
        ok_identity &= hausdorff_distance(X, X) == 0
        ok_sym &= dxy == dyx
        ok_pos &= dxy > 0
        ok_tri &= dxy <= hausdorff_distance(X, Z) + hausdorff_distance(Z, Y) + 1e-12

    ax = np.linspace(-1, 1, 41)
    ts = np.linspace(-1, 0, 11)
    base = GridField.sample(lambda X, t: X[..., -1] + 0.2 * np.sin(X[..., 0]) * (1 + t), [ax, ax], ts)
    pert = np.cos(3 * base.node_coordinates()[..., 0])[..., None] * np.sin(5 * ts)
    Q = ParabolicCylinder((0.0, 0.0), 0.0, 1.0)
    G = graph_to_pointset(base, Q)
    dists = []
    for k in range(1, 11):
        Gk = graph_to_pointset(base.with_values(base.values + 2.0 ** -k * pert), Q)
        dists.append(hausdorff_distance(Gk, G))
    ok_graph = all(d <= 2.0 ** -k for k, d in zip(range(1, 11), dists))
    checks = {"identity": ok_identity, "symmetry": ok_sym, "positivity on distinct sets": ok_pos,
              "triangle inequality": ok_tri, "graph distance <= 2^-k, k = 1..10": ok_graph,
              "graph distance decreasing": all(b < a for a, b in zip(dists, dists[1:]))}
    report(11, checks, f"graph distances {dists[0]:.2e} .. {dists[-1]:.2e}")
