"""Explicit subsolution used in the two-phase Harnack step.

On the oblique cylinder

    D = {(x', x_n, t) : |x'| < r, |x_n + 5t/8| <= r, -4/5 < t <= 0},   r = 5/12,

the barrier is

    w(x, t) = x_n - delta + c0 delta s(t) phi(x', x_n + 5t/8) - c0 delta,
    s(t) = exp(-K (t + 4/5)),   phi(x', xi) = phi1(x') phi2(xi),

with phi1 the first Dirichlet eigenfunction of the (n-1)-ball of radius r
(normalised to sup 1) and phi2 the cubic bell ``2|xi|^3/r^3 - 3 xi^2/r^2 + 1``.
All derivatives are closed form, so ``a_pm w_t - Delta w`` is evaluated
exactly on a sample grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import j0, j1, jn_zeros

from .errors import ArgumentError, ConstructionError, DomainError

R_BARRIER = 5.0 / 12.0
T_START = -4.0 / 5.0
DRIFT = 5.0 / 8.0
K_CAP = 2.0**20
SEAM_BAND = 1e-6
J0_FIRST_ZERO = float(jn_zeros(0, 1)[0])


def _check_n(n: int) -> None:
    if n not in (2, 3):
        raise ArgumentError(f"only n in {{2, 3}} is supported, got {n}")


def lambda1(n: int, r: float = R_BARRIER) -> float:
    """First Dirichlet eigenvalue of ``-Delta`` on the (n-1)-ball of radius r."""
    _check_n(n)
    if n == 2:
        return math.pi**2 / (4 * r**2)
    return (J0_FIRST_ZERO / r) ** 2


def _radius(xprime, n: int) -> np.ndarray:
    xp = np.asarray(xprime, dtype=float)
    if n == 2:
        if xp.ndim and xp.shape[-1] == 1:
            xp = xp[..., 0]
        return np.abs(xp)
    if xp.shape[-1] != 2:
        raise ArgumentError("n = 3 needs two tangential coordinates")
    return np.linalg.norm(xp, axis=-1)


def phi1(xprime, n: int, r: float = R_BARRIER):
    """First eigenfunction on ``B'_r``: ``cos(pi x'/(2r))`` (n = 2) or
    ``J0(j01 |x'|/r)`` (n = 3); equal to 1 at the centre and 0 on the boundary.

    Raises
    ------
    DomainError
        If ``|x'| > r``.
    """
    _check_n(n)
    rho = _radius(xprime, n)
    if np.any(rho > r * (1 + 1e-12)):
        raise DomainError(f"|x'| exceeds r = {r}")
    rho = np.minimum(rho, r)
    if n == 2:
        out = np.cos(math.pi * rho / (2 * r))
    else:
        out = j0(J0_FIRST_ZERO * rho / r)
    # exact zero on the boundary sphere
    return np.where(rho >= r, 0.0, out)


def phi1_radial_derivative(rho, n: int, r: float = R_BARRIER):
    """d phi1 / d|x'|."""
    _check_n(n)
    rho = np.asarray(rho, dtype=float)
    if n == 2:
        return -math.pi / (2 * r) * np.sin(math.pi * rho / (2 * r))
    return -J0_FIRST_ZERO / r * j1(J0_FIRST_ZERO * rho / r)


def _check_xi(xi, r: float) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if np.any(np.abs(xi) > r * (1 + 1e-12)):
        raise DomainError(f"|x_n| exceeds r = {r}")
    return np.clip(xi, -r, r)


def phi2(xi, r: float = R_BARRIER):
    """Cubic bell ``(2/r^3)|xi|^3 - (3/r^2) xi^2 + 1`` on [-r, r]."""
    xi = _check_xi(xi, r)
    a = np.abs(xi)
    return 2 * a**3 / r**3 - 3 * a**2 / r**2 + 1


def phi2_prime(xi, r: float = R_BARRIER):
    xi = _check_xi(xi, r)
    return 6 * xi * np.abs(xi) / r**3 - 6 * xi / r**2


def phi2_second(xi, r: float = R_BARRIER, side: int = 0):
    """Second derivative ``12|xi|/r^3 - 6/r^2``.

    ``side = +1`` or ``-1`` returns the one-sided limit at xi = 0 (they
    coincide; it is the third derivative that jumps there).
    """
    xi = _check_xi(xi, r)
    a = np.abs(xi)
    if side:
        a = np.where(xi == 0, 0.0, a)
    return 12 * a / r**3 - 6 / r**2


@dataclass(frozen=True)
class ObliqueCylinder:
    """``D``: ``|x'| < r``, ``|x_n + 5t/8| <= r``, ``-4/5 < t <= 0``."""
    r: float = R_BARRIER
    time_range: tuple = (T_START, 0.0)

    def contains(self, x, t, closed: bool = False):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        rho = np.linalg.norm(x[..., :-1], axis=-1)
        xi = x[..., -1] + DRIFT * t
        t0, t1 = self.time_range
        tol = 1e-12
        if closed:
            return (rho <= self.r + tol) & (np.abs(xi) <= self.r + tol) & (t >= t0 - tol) & (t <= t1 + tol)
        return (rho < self.r) & (np.abs(xi) <= self.r) & (t > t0) & (t <= t1)


@dataclass(frozen=True)
class BarrierSpec:
    """Parameters of the barrier.

    ``enforce_threshold=False`` allows K at or below ``lambda1 / min(a_pm)``,
    which is only useful to exhibit the failure of the subsolution property.
    """
    n: int
    delta: float
    c0: float
    K: float
    a_plus: float
    a_minus: float
    r: float = R_BARRIER
    enforce_threshold: bool = True

    def __post_init__(self):
        _check_n(self.n)
        if self.r != R_BARRIER:
            raise ArgumentError(f"the construction fixes r = 5/12, got {self.r}")
        if not 0 < self.delta <= 1 / 20:
            raise ArgumentError(f"delta must lie in (0, 1/20], got {self.delta}")
        if not 0 < self.c0 < 1:
            raise ArgumentError(f"c0 must lie in (0, 1), got {self.c0}")
        for name in ("a_plus", "a_minus"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ArgumentError(f"{name} must lie in (0, 1], got {v}")
        if self.K < 0:
            raise ArgumentError("K must be non-negative")
        if self.enforce_threshold and not self.K > self.threshold:
            raise ArgumentError(f"K = {self.K} must exceed lambda1/min(a_pm) = {self.threshold}")

    @property
    def threshold(self) -> float:
        return lambda1(self.n, self.r) / min(self.a_plus, self.a_minus)

    @property
    def lambda1(self) -> float:
        return lambda1(self.n, self.r)

    @classmethod
    def minimal(cls, n: int, a_plus: float, a_minus: float, delta: float = 0.01,
                c0: float = 0.1) -> "BarrierSpec":
        """Spec with K the smallest power of two above the threshold."""
        thr = lambda1(n) / min(a_plus, a_minus)
        K = 2.0 ** math.floor(math.log2(thr) + 1)
        return cls(n=n, delta=delta, c0=c0, K=K, a_plus=a_plus, a_minus=a_minus)

    def with_K(self, K: float) -> "BarrierSpec":
        return BarrierSpec(self.n, self.delta, self.c0, K, self.a_plus, self.a_minus, self.r,
                           self.enforce_threshold)


def decay(spec: BarrierSpec, t):
    """``s(t) = exp(-K (t + 4/5))``."""
    return np.exp(-spec.K * (np.asarray(t, dtype=float) - T_START))


def bump(spec: BarrierSpec, x, t):
    """``phi(x', x_n + 5t/8)``."""
    x = np.asarray(x, dtype=float)
    return phi1(x[..., :-1], spec.n, spec.r) * phi2(x[..., -1] + DRIFT * np.asarray(t), spec.r)


def barrier_eval(spec: BarrierSpec, x, t):
    """``w(x, t)`` on the closure of D; raises DomainError outside it."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    if x.shape[-1] != spec.n:
        raise ArgumentError(f"expected {spec.n} coordinates, got {x.shape[-1]}")
    if not np.all(ObliqueCylinder(spec.r).contains(x, t, closed=True)):
        raise DomainError("point outside the closed oblique cylinder")
    cd = spec.c0 * spec.delta
    return x[..., -1] - spec.delta + cd * decay(spec, t) * bump(spec, x, t) - cd


def operator_bracket(spec: BarrierSpec, a: float, xi, side: int = 0):
    """``-a K phi2 + (5/8) a phi2' + lambda1 phi2 - phi2''`` as a function of xi.

    ``(a w_t - Delta w) = c0 delta s(t) phi1(x') * bracket``.
    """
    p2 = phi2(xi, spec.r)
    return (-a * spec.K * p2 + DRIFT * a * phi2_prime(xi, spec.r)
            + spec.lambda1 * p2 - phi2_second(xi, spec.r, side))


def operator_value(spec: BarrierSpec, a: float, x, t):
    """Exact ``a w_t - Delta w`` at points of D (away from xi = 0 use either side)."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    xi = x[..., -1] + DRIFT * t
    pref = spec.c0 * spec.delta * decay(spec, t) * phi1(x[..., :-1], spec.n, spec.r)
    return pref * operator_bracket(spec, a, xi)


class SubsolutionReport(NamedTuple):
    max_operator_value: float
    K_used: float
    passed: bool
    c: float
    log_c: float
    regime_max: dict
    one_sided_at_seam: dict
    inf_phi: float
    max_bracket: float


def _sample_points(spec: BarrierSpec, N: int):
    r = spec.r
    # open intervals: drop the lateral boundary where phi1 = 0 exactly
    u = np.linspace(-r, r, N + 2)[1:-1]
    xi = np.linspace(-r, r, 2 * N + 2)[1:-1]
    xi = xi[np.abs(xi) > SEAM_BAND]
    t = np.linspace(T_START, 0.0, N + 1)[1:]
    if spec.n == 2:
        xp = u[:, None]
    else:
        U1, U2 = np.meshgrid(u, u, indexing="ij")
        keep = U1**2 + U2**2 < r**2
        xp = np.stack([U1[keep], U2[keep]], axis=-1)
    return xp, xi, t


def _max_operator(spec: BarrierSpec, N: int):
    """Maximum of ``a_pm w_t - Delta w`` over the sample grid, per regime."""
    xp, xi, t = _sample_points(spec, N)
    p1 = phi1(xp, spec.n, spec.r)
    s = decay(spec, t)
    cd = spec.c0 * spec.delta
    r = spec.r
    regimes = {
        "lower_plateau": (xi > -r) & (xi < -0.75 * r),
        "middle": (xi >= -0.75 * r) & (xi <= 0.5 * r),
        "upper_plateau": (xi > 0.5 * r) & (xi < r),
    }
    worst = -np.inf
    worst_bracket = -np.inf
    regime_max = {}
    for a in (spec.a_plus, spec.a_minus):
        br = operator_bracket(spec, a, xi)
        worst_bracket = max(worst_bracket, float(br.max()))
        # value = cd * s(t) * phi1(x') * bracket(xi); all three factors are
        # sampled independently, so the max over the tensor grid factorises
        vals = cd * np.einsum("i,j,k->ijk", p1, br, s)
        for name, sel in regimes.items():
            if np.any(sel):
                m = float(vals[:, sel, :].max())
                regime_max[name] = max(regime_max.get(name, -np.inf), m)
        worst = max(worst, float(vals.max()))
    seam = {}
    for side in (-1, 1):
        seam[side] = max(float(operator_bracket(spec, a, 0.0, side)) for a in (spec.a_plus, spec.a_minus))
    return worst, regime_max, seam, worst_bracket


def inf_phi_on_q13(spec: BarrierSpec, N: int = 61) -> float:
    """``inf phi(x', x_n + 5t/8)`` over the closed cylinder Q_{1/3}, by grid
    evaluation, after checking that every grid node lies in D."""
    r3 = 1.0 / 3.0
    g = np.linspace(-r3, r3, N)
    tt = np.linspace(-r3**2, 0.0, N)
    if spec.n == 2:
        X = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)
    else:
        X = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1)
    X = X[np.linalg.norm(X, axis=-1) <= r3 + 1e-15]
    # add the extreme points of the ball in the x_n direction and on the x' sphere
    extra = np.zeros((4, spec.n))
    extra[0, -1], extra[1, -1] = r3, -r3
    extra[2, 0], extra[3, 0] = r3, -r3
    X = np.concatenate([X, extra])
    D = ObliqueCylinder(spec.r)
    worst = np.inf
    for t in tt:
        if not np.all(D.contains(X, t, closed=True)):
            raise ConstructionError("Q_1/3 is not contained in D", {"t": float(t)})
        worst = min(worst, float(bump(spec, X, t).min()))
    # phi decreases in |x'| and in |xi|, so the infimum sits on the sphere
    # |x| = 1/3 at one of the two extreme times; scan that curve densely
    theta = np.linspace(0.0, math.pi, 20001)
    S = np.zeros((theta.size, spec.n))
    S[:, 0] = r3 * np.sin(theta)
    S[:, -1] = r3 * np.cos(theta)
    for t in (-r3**2, 0.0):
        worst = min(worst, float(bump(spec, S, t).min()))
    return worst


def barrier_constant(spec: BarrierSpec) -> tuple[float, float, float]:
    """``(c, log c, inf phi)`` with ``c = c0 exp(-4K/5) inf_{Q_1/3} phi``."""
    inf_phi = inf_phi_on_q13(spec)
    log_c = math.log(spec.c0) - 0.8 * spec.K + math.log(inf_phi)
    return math.exp(log_c), log_c, inf_phi


def lower_bound_violation(spec: BarrierSpec, c: float, N: int = 41) -> float:
    """``max (x_n - (1 - c) delta - (w + c0 delta))`` over a grid of the closed Q_1/3.

    ``w + c0 delta`` is the barrier after the full lift that the comparison
    argument provides; a value <= 0 is a pass.
    """
    r3 = 1.0 / 3.0
    g = np.linspace(-r3, r3, N)
    axes = [g] * spec.n
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.n)
    X = X[np.linalg.norm(X, axis=-1) <= r3 + 1e-15]
    worst = -np.inf
    for t in np.linspace(-r3**2, 0.0, N):
        w = barrier_eval(spec, X, t)
        worst = max(worst, float(np.max(X[:, -1] - (1 - c) * spec.delta - (w + spec.c0 * spec.delta))))
    return worst


def subsolution_check(spec: BarrierSpec, grid_resolution: int = 40,
                      auto_increase: bool = True) -> SubsolutionReport:
    """Maximum of ``a_pm w_t - Delta w`` over a dense grid of D.

    The seam ``x_n + 5t/8 = 0`` is excluded by a band of width 1e-6; the two
    one-sided limits of the operator there are reported separately (and
    count toward the pass criterion). If ``auto_increase`` is set, K is
    doubled until the maximum is negative.

    The raw maximum carries the factor ``s(t)``, which is as small as
    ``exp(-4K/5)``; ``max_bracket`` is the same quantity divided by the
    positive factor ``c0 delta s(t) phi1(x')``.

    Raises
    ------
    ConstructionError
        If K reaches 2^20 without success; the per-regime maxima are
        attached.
    """
    if int(grid_resolution) != grid_resolution or grid_resolution < 4:
        raise ArgumentError("grid_resolution must be an integer >= 4")
    while True:
        worst, regimes, seam, bracket = _max_operator(spec, int(grid_resolution))
        # the seam bracket is multiplied by positive factors
        passed = worst < 0 and all(v < 0 for v in seam.values())
        if passed or not auto_increase:
            break
        if spec.K * 2 > K_CAP:
            raise ConstructionError("K cap reached without a strict subsolution",
                                    {"K": spec.K, "regime_max": regimes, "seam": seam})
        spec = spec.with_K(max(spec.K * 2, 1.0))
    c, log_c, inf_phi = barrier_constant(spec)
    return SubsolutionReport(worst, float(spec.K), bool(passed), c, log_c, regimes,
                             {"minus": seam[-1], "plus": seam[1]}, inf_phi, bracket)
