"""Self-similar two-phase solutions ``u(x, t) = (-t)^(alpha/2) f(|x| / sqrt(-t))``.

With the normalization a_+ = 1, a_- = eps in (0, 1) the profile solves

    f'' + ((n-1)/s - s/2) f' + (alpha/2) f = 0          where f > 0,
    f'' + ((n-1)/s - eps s/2) f' + (eps alpha/2) f = 0  where f < 0,

with f(0) = 1, f'(0) = 0. The positive branch is M(-alpha/2, n/2, s^2/4), the
negative branch a multiple of -U(-alpha/2, n/2, eps s^2/4), and alpha is
fixed by requiring both branches to vanish at the same point s_eps.

The negative branch is scaled by ``kappa > 0`` so that f' is continuous at
s_eps. Without it the glued function is not a weak solution of
``d_t c(u) - Delta u = 0`` (the flux would jump across the free boundary).
The scaling does not move the zero, so alpha and s_eps are unaffected.
``flux_matched=False`` reproduces the unscaled gluing (kappa = 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (ArgumentError, CertificateNotApplicable, ConstructionError,
                     MatchingError)
from .specfun import (kummer_m, kummer_m_prime, scaled_zero_m, scaled_zero_u,
                      tricomi_u, tricomi_u_prime)

ALPHA_GRID_DEPTH = 40
MATCH_REL_TOL = 1e-9
SEAM_TOL = 1e-8
ODE_STEP = 1e-4
SEAM_BAND = 1e-3


@dataclass(frozen=True)
class MatchingResult:
    """Root of ``D(alpha) = zbar_M(alpha, n) - zbar_U^eps(alpha, n)``.

    ``bracket`` is ``(alpha_lo, alpha_hi)`` with D(alpha_lo) > 0 > D(alpha_hi).
    """
    alpha: float
    s_eps: float
    residual: float
    bracket: tuple[float, float]
    samples: tuple = field(default=(), repr=False, compare=False)


def matching_function(alpha: float, n: int, eps: float) -> float:
    """``D(alpha)``, positive for small alpha and negative at alpha = 2 when eps < 1."""
    return scaled_zero_m(alpha, n) - scaled_zero_u(alpha, n, eps)


def _check_n_eps(n: int, eps: float, closed: bool = False) -> None:
    if int(n) != n or n < 3:
        raise ArgumentError(f"dimension n must be an integer >= 3, got {n}")
    hi_ok = eps <= 1 if closed else eps < 1
    if not (eps > 0 and hi_ok):
        rng = "(0, 1]" if closed else "(0, 1)"
        raise ArgumentError(f"eps must lie in {rng}, got {eps}")


def solve_alpha(n: int, eps: float, tol: float = 1e-12) -> MatchingResult:
    """Homogeneity exponent alpha(n, eps) at which the two profile zeros coincide.

    Scans alpha = 2, 1, 1/2, ... until D changes sign, then bisects.

    Parameters
    ----------
    n : int
        Space dimension, at least 3.
    eps : float
        Time coefficient of the negative phase, in (0, 1).
    tol : float
        Final width of the alpha bracket.

    Returns
    -------
    MatchingResult

    Raises
    ------
    MatchingError
        If no sign change is found on the dyadic grid; the sampled values are
        attached as diagnostics.
    """
    _check_n_eps(n, eps)
    if not tol > 0:
        raise ArgumentError("tol must be positive")
    samples = []
    alpha = 2.0
    d_hi = matching_function(alpha, n, eps)
    samples.append((alpha, d_hi))
    if d_hi >= 0:
        raise MatchingError("D(2) is not negative", {"samples": samples})
    hi, lo = alpha, None
    for _ in range(ALPHA_GRID_DEPTH):
        alpha *= 0.5
        d = matching_function(alpha, n, eps)
        samples.append((alpha, d))
        if d > 0:
            lo = alpha
            break
        hi = alpha
    if lo is None:
        raise MatchingError("no sign change of D on the dyadic alpha grid", {"samples": samples})

    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        d = matching_function(mid, n, eps)
        if d == 0.0:
            lo = hi = mid
            break
        if d > 0:
            lo = mid
        else:
            hi = mid
    alpha = 0.5 * (lo + hi)
    sm = scaled_zero_m(alpha, n)
    su = scaled_zero_u(alpha, n, eps)
    return MatchingResult(alpha=alpha, s_eps=sm, residual=abs(sm - su), bracket=(lo, hi),
                          samples=tuple(samples))


def eps0(n: int) -> float:
    """Threshold ``(zbar_U(1, n) / zbar_M(1, n))^2`` below which alpha(n, eps) < 1."""
    if int(n) != n or n < 3:
        raise ArgumentError(f"dimension n must be an integer >= 3, got {n}")
    return (scaled_zero_u(1.0, n, 1.0) / scaled_zero_m(1.0, n)) ** 2


@dataclass(frozen=True)
class SelfSimilarProfile:
    """Piecewise profile f with its derivative.

    ``f(s) = M(a, b, s^2/4)`` on [0, s_eps] and ``-kappa U(a, b, eps s^2/4)``
    beyond, with ``a = -alpha/2`` and ``b = n/2``.
    """
    n: int
    eps: float
    alpha: float
    s_eps: float
    kappa: float = 1.0

    @property
    def a(self) -> float:
        return -self.alpha / 2

    @property
    def b(self) -> float:
        return self.n / 2

    def branch(self, s):
        """+1 on the positive (M) branch, -1 on the negative (U) branch."""
        return np.where(np.asarray(s, dtype=float) <= self.s_eps, 1, -1)

    def _split(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise ArgumentError("the profile is defined for s >= 0")
        inner = s <= self.s_eps
        return s, inner

    def f(self, s):
        s, inner = self._split(s)
        out = np.empty_like(s)
        if np.any(inner):
            out[inner] = kummer_m(self.a, self.b, s[inner] ** 2 / 4)
        if np.any(~inner):
            out[~inner] = -self.kappa * tricomi_u(self.a, self.b, self.eps * s[~inner] ** 2 / 4)
        return out if out.ndim else float(out)

    def fprime(self, s):
        s, inner = self._split(s)
        out = np.empty_like(s)
        if np.any(inner):
            si = s[inner]
            out[inner] = kummer_m_prime(self.a, self.b, si ** 2 / 4) * si / 2
        if np.any(~inner):
            so = s[~inner]
            out[~inner] = (-self.kappa * self.eps * so / 2
                           * tricomi_u_prime(self.a, self.b, self.eps * so ** 2 / 4))
        return out if out.ndim else float(out)

    def coefficients(self, s):
        """ODE coefficients ``(p(s), q)`` in ``f'' + p f' + q f = 0`` for the branch of s."""
        s = np.asarray(s, dtype=float)
        e = np.where(s <= self.s_eps, 1.0, self.eps)
        return (self.n - 1) / s - e * s / 2, e * self.alpha / 2


def flux_amplitude(alpha: float, n: int, eps: float, s_eps: float) -> float:
    """Amplitude ``kappa`` making f' continuous at s_eps.

    Solves ``M'(s_eps^2/4) = -kappa eps U'(eps s_eps^2/4)`` (both derivatives
    in z).
    """
    a, b = -alpha / 2, n / 2
    mz = kummer_m_prime(a, b, s_eps ** 2 / 4)
    uz = tricomi_u_prime(a, b, eps * s_eps ** 2 / 4)
    if uz == 0:
        raise ConstructionError("U' vanishes at the matching point", {"alpha": alpha, "s_eps": s_eps})
    return -mz / (eps * uz)


def build_profile(match: MatchingResult, n: int, eps: float, flux_matched: bool = True,
                  check: bool = True) -> SelfSimilarProfile:
    """Assemble the profile from a matching result and certify it.

    Parameters
    ----------
    match : MatchingResult
    n : int
    eps : float
        In (0, 1]; eps = 1 is allowed for the single-phase alpha = 2 case.
    flux_matched : bool
        Scale the outer branch so that f' is continuous (default). With False
        the outer branch is the bare -U.
    check : bool
        Run the invariant checks of :func:`certify_profile`.

    Raises
    ------
    ConstructionError
        If the branches disagree at s_eps by more than 1e-8 or any invariant
        check fails.
    """
    _check_n_eps(n, eps, closed=True)
    s_eps = float(match.s_eps)
    if match.residual > MATCH_REL_TOL * s_eps:
        raise ConstructionError("matching residual too large", {"residual": match.residual, "s_eps": s_eps})
    kappa = flux_amplitude(match.alpha, n, eps, s_eps) if flux_matched else 1.0
    if not (np.isfinite(kappa) and kappa > 0):
        raise ConstructionError("flux amplitude is not positive", {"kappa": kappa})
    prof = SelfSimilarProfile(n=int(n), eps=float(eps), alpha=float(match.alpha), s_eps=s_eps, kappa=kappa)
    inner = kummer_m(prof.a, prof.b, s_eps ** 2 / 4)
    outer = -kappa * tricomi_u(prof.a, prof.b, eps * s_eps ** 2 / 4)
    if abs(inner) > SEAM_TOL or abs(outer) > SEAM_TOL:
        raise ConstructionError("branch values at s_eps do not vanish",
                                {"inner": inner, "outer": outer, "s_eps": s_eps})
    if check:
        problems = certify_profile(prof)
        if problems:
            raise ConstructionError("profile failed its invariant checks", {"problems": problems})
    return prof


def certify_profile(prof: SelfSimilarProfile, scan_points: int = 10_000) -> list[str]:
    """Check the structural invariants of a profile; returns a list of failures."""
    problems = []
    n, eps, s_eps = prof.n, prof.eps, prof.s_eps
    if prof.eps < 1:
        lo, hi = math.sqrt(2 * n), math.sqrt(2 * n / eps)
        if not lo < s_eps < hi:
            problems.append(f"s_eps = {s_eps} outside ({lo}, {hi})")
    if prof.f(0.0) != 1.0:
        problems.append(f"f(0) = {prof.f(0.0)!r} != 1")
    if prof.fprime(0.0) != 0.0:
        problems.append(f"f'(0) = {prof.fprime(0.0)!r} != 0")
    if sign_change_count(prof, 3 * s_eps, scan_points) != 1:
        problems.append("f does not change sign exactly once on (0, 3 s_eps]")
    # s^-alpha f(s) tends to -kappa (eps/4)^(alpha/2)
    limit = -prof.kappa * (eps / 4) ** (prof.alpha / 2)
    far = np.array([1e2, 1e3]) * s_eps
    ratio = prof.f(far) * far ** (-prof.alpha)
    if not np.all(np.abs(ratio - limit) <= 0.05 * abs(limit)):
        problems.append(f"s^-alpha f(s) = {ratio.tolist()} not close to {limit}")
    return problems


def sign_change_count(prof, s_max: float, samples: int = 10_000) -> int:
    """Number of sign changes of f on a uniform grid of ``samples`` points in [0, s_max]."""
    s = np.linspace(0.0, s_max, samples)
    sg = np.sign(prof.f(s))
    sg = sg[sg != 0]
    return int(np.count_nonzero(sg[1:] != sg[:-1]))


def matched_profile(n: int, eps: float, tol: float = 1e-12, flux_matched: bool = True) -> SelfSimilarProfile:
    """Convenience wrapper: :func:`solve_alpha` followed by :func:`build_profile`."""
    return build_profile(solve_alpha(n, eps, tol), n, eps, flux_matched=flux_matched)


def closed_form_profile(n: int) -> SelfSimilarProfile:
    """The alpha = 2, eps = 1 profile ``f(s) = 1 - s^2/(2n)``."""
    s_eps = math.sqrt(2 * n)
    match = MatchingResult(alpha=2.0, s_eps=s_eps, residual=0.0, bracket=(2.0, 2.0))
    return build_profile(match, n, 1.0)


def ode_residual(profile, s_samples: Sequence[float], h: float = ODE_STEP,
                 band: float = SEAM_BAND) -> float:
    """Maximum absolute residual of the branch ODE at the given points.

    f' is evaluated analytically and f'' by a Richardson-extrapolated
    centered difference of f' (steps h and h/2).

    Raises
    ------
    ArgumentError
        If a sample is not positive or lies within ``band`` of s_eps.
    """
    s = np.atleast_1d(np.asarray(s_samples, dtype=float))
    if s.size == 0:
        return 0.0
    if np.any(s <= 0):
        raise ArgumentError("samples must exclude s <= 0")
    if np.any(np.abs(s - profile.s_eps) < band + h):
        raise ArgumentError(f"samples must avoid the band of width {band} around s_eps = {profile.s_eps}")

    def d2(step):
        return (profile.fprime(s + step) - profile.fprime(s - step)) / (2 * step)

    fpp = (4 * d2(h / 2) - d2(h)) / 3
    p, q = profile.coefficients(s)
    res = fpp + p * profile.fprime(s) + q * profile.f(s)
    return float(np.max(np.abs(res)))


def evaluate_u(profile, x, t):
    """``u(x, t) = (-t)^(alpha/2) f(|x| / sqrt(-t))`` for t < 0.

    ``x`` may be a single point (shape (n,)) or an array of points with the
    spatial coordinates on the last axis.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t >= 0):
        raise ArgumentError("the self-similar solution is defined for t < 0 only")
    r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
    return evaluate_u_radial(profile, r, t)


def evaluate_u_radial(profile, r, t):
    """Radial form of :func:`evaluate_u`, ``r = |x|``."""
    t = np.asarray(t, dtype=float)
    if np.any(t >= 0):
        raise ArgumentError("the self-similar solution is defined for t < 0 only")
    tau = -t
    return tau ** (profile.alpha / 2) * profile.f(np.asarray(r, dtype=float) / np.sqrt(tau))


def gradient_norm(profile, r, t):
    """``|grad u| = (-t)^((alpha-1)/2) |f'(s)|`` at ``|x| = r``, ``s = r / sqrt(-t)``."""
    t = np.asarray(t, dtype=float)
    if np.any(t >= 0):
        raise ArgumentError("the self-similar solution is defined for t < 0 only")
    tau = -t
    return tau ** ((profile.alpha - 1) / 2) * np.abs(profile.fprime(np.asarray(r, dtype=float) / np.sqrt(tau)))


def gradient_sup_ball(profile, t: float, radius: float, samples: int = 4001) -> float:
    """Sampled ``sup_{|x| <= radius} |grad u(x, t)|`` (the field is radial)."""
    r = np.linspace(0.0, radius, samples)
    return float(np.max(gradient_norm(profile, r, t)))


def gradient_blowup_certificate(profile, t_fixed: float, radii: Sequence[float]) -> np.ndarray:
    """``|grad u|`` on the spheres ``|x| = radius`` at time ``t_fixed``.

    Only meaningful when alpha < 1, where ``(-t)^((alpha-1)/2)`` is unbounded
    as t increases to 0.

    Raises
    ------
    CertificateNotApplicable
        If alpha >= 1.
    ArgumentError
        If radii are not positive and strictly decreasing, or t_fixed >= 0.
    """
    if profile.alpha >= 1:
        raise CertificateNotApplicable(f"alpha = {profile.alpha} >= 1: the gradient stays bounded")
    radii = np.asarray(radii, dtype=float)
    if radii.size == 0 or np.any(radii <= 0) or np.any(np.diff(radii) >= 0):
        raise ArgumentError("radii must be positive and strictly decreasing")
    if t_fixed >= 0:
        raise ArgumentError("t_fixed must be negative")
    return gradient_norm(profile, radii, t_fixed)


def gradient_growth_ratios(profile, times: Sequence[float], radius: float = 0.1,
                           samples: int = 4001) -> np.ndarray:
    """Ratios of consecutive ball suprema of ``|grad u|`` along increasing negative times."""
    if profile.alpha >= 1:
        raise CertificateNotApplicable(f"alpha = {profile.alpha} >= 1: the gradient stays bounded")
    sups = np.array([gradient_sup_ball(profile, t, radius, samples) for t in times])
    return sups[1:] / sups[:-1]


def time_difference_quotients(profile, ks: Sequence[int]) -> np.ndarray:
    """``|u(0,t_k) - u(0,t_{k+1})| / |t_k - t_{k+1}|`` along ``t_k = -2^-k``."""
    t = -(2.0 ** -np.asarray(ks, dtype=float))
    u0 = (-t) ** (profile.alpha / 2) * profile.f(0.0)
    return np.abs(np.diff(u0)) / np.abs(np.diff(t))


def figure2_table(profile, s_max_factor: float = 1.5, points: int = 601) -> np.ndarray:
    """Columns ``s, M branch, outer branch, f`` on [0, s_max_factor * s_eps].

    The M and outer branches are evaluated on the whole range so that their
    common zero is visible.
    """
    s = np.linspace(0.0, s_max_factor * profile.s_eps, points)
    m = kummer_m(profile.a, profile.b, s ** 2 / 4)
    u = np.full_like(s, np.nan)
    pos = s > 0
    u[pos] = -profile.kappa * tricomi_u(profile.a, profile.b, profile.eps * s[pos] ** 2 / 4)
    return np.column_stack([s, m, u, profile.f(s)])


def profile_table(profile, s_max: float, ds: float) -> np.ndarray:
    """Columns ``s, f, f', branch`` on a uniform grid."""
    if not (s_max > 0 and ds > 0):
        raise ArgumentError("s_max and ds must be positive")
    s = np.arange(0.0, s_max + 0.5 * ds, ds)
    return np.column_stack([s, profile.f(s), profile.fprime(s), profile.branch(s)])
