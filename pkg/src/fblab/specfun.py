"""Confluent hypergeometric functions M(a, b, z) and U(a, b, z) for real
arguments, and their unique positive zeros for a in [-1, 0), b >= 1.

Evaluation routes
-----------------
M
    Power series with compensated summation; for z > 40 the dominant
    large-z asymptotic expansion, used only when the exponentially large
    part swamps the algebraic one by more than 1e17.
U
    * a a non-positive integer: exact polynomial ``(-1)^m (b)_m M(-m, b, z)``.
    * large z: the asymptotic series ``z^-a sum (a)_k (a-b+1)_k / k! (-z)^-k``
      wherever its optimally truncated error is below 1e-15.
    * small z: the connection formula in terms of two M series; integer (or
      nearly integer) b is handled by averaging b +/- h and Richardson
      extrapolating over h in {1e-3, 5e-4}.
    * in between, the Kummer ODE integrated inwards from the asymptotic
      region (U is the dominant solution in that direction).
"""
from __future__ import annotations

import enum
import math
from typing import NamedTuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import gamma, rgamma

from .errors import ArgumentError, BracketError, NumericError

MAX_TERMS = 100_000
SERIES_REL_TOL = 1e-17
SERIES_QUIET_TERMS = 10
M_ASYMPTOTIC_Z = 40.0
U_CONNECTION_Z = 15.0
U_ASYMPTOTIC_REL_ERR = 1e-15
RICHARDSON_STEPS = (1e-3, 5e-4)
BRACKET_FACTOR = 2.0
BRACKET_CAP = 2.0**60
BISECTION_REL_WIDTH = 1e-12


class Tag(str, enum.Enum):
    KUMMER_M = "M"
    TRICOMI_U = "U"


class HypergeomParams(NamedTuple):
    a: float
    b: float


class ZeroBracket(NamedTuple):
    lo: float
    hi: float
    tag: Tag


def _is_nonpositive_integer(x: float) -> bool:
    return x <= 0 and float(x).is_integer()


def _check_b(b: float) -> None:
    if _is_nonpositive_integer(b):
        raise ArgumentError(f"M(a, b, z) is undefined for b = {b} (non-positive integer)")


# ---------------------------------------------------------------- M series

def _m_series_scalar(a: float, b: float, z: float) -> float:
    total, comp, term = 1.0, 0.0, 1.0
    quiet = 0
    for k in range(MAX_TERMS):
        term *= (a + k) / ((b + k) * (k + 1)) * z
        t = total + term
        if abs(total) >= abs(term):
            comp += (total - t) + term
        else:
            comp += (term - t) + total
        total = t
        if abs(term) <= SERIES_REL_TOL * abs(total + comp):
            quiet += 1
            if quiet >= SERIES_QUIET_TERMS:
                return total + comp
        else:
            quiet = 0
    raise NumericError("M series did not converge", {"a": a, "b": b, "z": z, "terms": MAX_TERMS,
                                                       "last_term": term, "partial_sum": total + comp})


def _m_series_array(a: float, b: float, z: np.ndarray) -> np.ndarray:
    total = np.ones_like(z)
    comp = np.zeros_like(z)
    term = np.ones_like(z)
    quiet = np.zeros(z.shape, dtype=int)
    for k in range(MAX_TERMS):
        term = term * ((a + k) / ((b + k) * (k + 1))) * z
        t = total + term
        comp += np.where(np.abs(total) >= np.abs(term), (total - t) + term, (term - t) + total)
        total = t
        small = np.abs(term) <= SERIES_REL_TOL * np.abs(total + comp)
        quiet = np.where(small, quiet + 1, 0)
        if np.all(quiet >= SERIES_QUIET_TERMS):
            return total + comp
    bad = quiet < SERIES_QUIET_TERMS
    raise NumericError("M series did not converge", {"a": a, "b": b, "z": z[bad].tolist()})


def _m_asymptotic_dominant(a: float, b: float, z: float):
    """Dominant large-z part of M and the size of the neglected algebraic part."""
    s, term = 1.0, 1.0
    for k in range(200):
        nxt = term * (b - a + k) * (1 - a + k) / ((k + 1) * z)
        if abs(nxt) > abs(term) or abs(nxt) < SERIES_REL_TOL * abs(s):
            break
        term = nxt
        s += term
    dominant = gamma(b) * rgamma(a) * math.exp(z) * z ** (a - b) * s
    algebraic = abs(gamma(b) * rgamma(b - a)) * z ** (-a)
    return dominant, algebraic


def _m_scalar(a: float, b: float, z: float) -> float:
    if z >= 700 and not _is_nonpositive_integer(a):
        raise NumericError("M(a, b, z) overflows double precision for z >= 700", {"a": a, "b": b, "z": z})
    if z > M_ASYMPTOTIC_Z and not _is_nonpositive_integer(a):
        dom, alg = _m_asymptotic_dominant(a, b, z)
        if abs(dom) > 1e17 * alg:
            return float(dom)
    return _m_series_scalar(a, b, z)


def kummer_m(a: float, b: float, z):
    """Kummer's function ``M(a, b, z) = sum (a)_k / ((b)_k k!) z^k``.

    ``z`` may be a scalar or an array; a float is returned for scalar input.
    """
    a, b = float(a), float(b)
    _check_b(b)
    if np.ndim(z) == 0:
        return _m_scalar(a, b, float(z))
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    big = (z > M_ASYMPTOTIC_Z) & (not _is_nonpositive_integer(a))
    if np.any(big):
        for idx in np.flatnonzero(big):
            out.flat[idx] = _m_scalar(a, b, float(z.flat[idx]))
    rest = ~big
    if np.any(rest):
        out[rest] = _m_series_array(a, b, z[rest])
    return out


def kummer_m_prime(a: float, b: float, z):
    """``d/dz M(a, b, z) = (a / b) M(a + 1, b + 1, z)``."""
    if a == 0:
        return 0.0 if np.ndim(z) == 0 else np.zeros_like(np.asarray(z, dtype=float))
    return (a / b) * kummer_m(a + 1, b + 1, z)


# ---------------------------------------------------------------- U

def _u_asymptotic(a: float, b: float, z: float):
    """Optimally truncated asymptotic series; returns (value, relative error estimate)."""
    s, term = 1.0, 1.0
    err = math.inf
    for k in range(400):
        nxt = term * (a + k) * (a - b + 1 + k) / ((k + 1) * (-z))
        if nxt == 0.0:
            err = 0.0
            break
        if abs(nxt) > abs(term):
            err = abs(term)
            break
        term = nxt
        s += term
        if abs(term) < SERIES_REL_TOL * abs(s):
            err = abs(term)
            break
    return z ** (-a) * s, err / abs(s) if s != 0 else math.inf


def _u_connection_nonint(a: float, b: float, z):
    c1 = gamma(1 - b) * rgamma(a - b + 1)
    c2 = gamma(b - 1) * rgamma(a)
    first = c1 * kummer_m(a, b, z) if c1 != 0 else 0.0
    second = c2 * np.power(z, 1 - b) * kummer_m(a - b + 1, 2 - b, z) if c2 != 0 else 0.0
    return first + second


def _u_connection(a: float, b: float, z):
    nearest = round(b)
    if abs(b - nearest) < 1e-4:
        def avg(h):
            return 0.5 * (_u_connection_nonint(a, b + h, z) + _u_connection_nonint(a, b - h, z))
        h1, h2 = RICHARDSON_STEPS
        r = (h1 / h2) ** 2
        return (r * avg(h2) - avg(h1)) / (r - 1)
    return _u_connection_nonint(a, b, z)


def _u_asymptotic_start(a: float, b: float, z_min: float) -> float:
    z0 = max(z_min, 2 * M_ASYMPTOTIC_Z)
    while z0 < 700:
        _, e1 = _u_asymptotic(a, b, z0)
        _, e2 = _u_asymptotic(a + 1, b + 1, z0)
        if e1 < U_ASYMPTOTIC_REL_ERR and e2 < U_ASYMPTOTIC_REL_ERR:
            return z0
        z0 *= 1.25
    raise NumericError("no accurate asymptotic region found for U", {"a": a, "b": b})


def _u_ode_bridge(a: float, b: float, zs: np.ndarray) -> np.ndarray:
    """Integrate z g'' + (b - z) g' - a g = 0 inwards from the asymptotic region."""
    z0 = _u_asymptotic_start(a, b, float(np.max(zs)))
    g0, _ = _u_asymptotic(a, b, z0)
    gp0, _ = _u_asymptotic(a + 1, b + 1, z0)
    gp0 *= -a

    def rhs(z, y):
        return [y[1], ((z - b) * y[1] + a * y[0]) / z]

    order = np.argsort(-zs)
    t_eval = zs[order]
    sol = solve_ivp(rhs, (z0, float(t_eval[-1])), [g0, gp0], method="DOP853",
                    t_eval=t_eval, rtol=1e-13, atol=1e-30)
    if not sol.success:
        raise NumericError("U bridge integration failed", {"message": sol.message})
    out = np.empty_like(zs)
    out[order] = sol.y[0]
    return out


def _u_poly(m: int, b: float, z):
    poch = 1.0
    for k in range(m):
        poch *= b + k
    return (-1) ** m * poch * kummer_m(-m, b, z)


def tricomi_u(a: float, b: float, z):
    """Tricomi's function ``U(a, b, z)`` for real ``z > 0``.

    Normalised so that ``z^a U(a, b, z) -> 1`` as ``z -> infinity``.
    """
    a, b = float(a), float(b)
    scalar = np.ndim(z) == 0
    zarr = np.atleast_1d(np.asarray(z, dtype=float))
    if np.any(zarr <= 0) or not np.all(np.isfinite(zarr)):
        raise ArgumentError("U(a, b, z) is only evaluated for finite z > 0")
    if _is_nonpositive_integer(a):
        out = _u_poly(int(-a), b, zarr)
        return float(out[0]) if scalar else out.reshape(np.shape(z))

    if scalar:
        zs = float(zarr[0])
        if zs > U_CONNECTION_Z:
            val, err = _u_asymptotic(a, b, zs)
            if err < U_ASYMPTOTIC_REL_ERR:
                return float(val)
        else:
            return float(_u_connection(a, b, zs))

    out = np.empty_like(zarr)
    done = np.zeros(zarr.shape, dtype=bool)
    for i, zi in enumerate(zarr):
        if zi > U_CONNECTION_Z:
            val, err = _u_asymptotic(a, b, zi)
            if err < U_ASYMPTOTIC_REL_ERR:
                out[i] = val
                done[i] = True
    small = ~done & (zarr <= U_CONNECTION_Z)
    if np.any(small):
        out[small] = _u_connection(a, b, zarr[small])
        done |= small
    if not np.all(done):
        out[~done] = _u_ode_bridge(a, b, zarr[~done])
    if not np.all(np.isfinite(out)):
        raise NumericError("U evaluation produced non-finite values", {"a": a, "b": b})
    return float(out[0]) if scalar else out.reshape(np.shape(z))


def tricomi_u_prime(a: float, b: float, z):
    """``d/dz U(a, b, z) = -a U(a + 1, b + 1, z)``."""
    if a == 0:
        return 0.0 if np.ndim(z) == 0 else np.zeros_like(np.asarray(z, dtype=float))
    return -a * tricomi_u(a + 1, b + 1, z)


# ---------------------------------------------------------------- zeros

def _as_tag(tag) -> Tag:
    try:
        return Tag(tag.value if isinstance(tag, Tag) else str(tag))
    except ValueError:
        raise ArgumentError(f"unknown function tag {tag!r}; expected 'M' or 'U'") from None


def _evaluator(tag: Tag, a: float, b: float):
    if tag is Tag.KUMMER_M:
        return lambda z: kummer_m(a, b, z)
    return lambda z: tricomi_u(a, b, z)


def _check_zero_regime(a: float, b: float) -> None:
    if not (-1.0 <= a < 0.0):
        raise ArgumentError(f"zero finding needs a in [-1, 0), got a = {a}")
    if not b >= 1.0:
        raise ArgumentError(f"zero finding needs b >= 1, got b = {b}")


def bracket_zero(tag, a: float, b: float) -> ZeroBracket:
    """Sign-change bracket around the positive zero, grown geometrically from z = b.

    M starts at 1 > 0 and ends negative; U is negative near 0 and positive
    at infinity. The bracket is oriented so that ``lo`` is on the near-origin
    side of the zero.
    """
    tag = _as_tag(tag)
    a, b = float(a), float(b)
    _check_zero_regime(a, b)
    f = _evaluator(tag, a, b)
    near_sign = 1.0 if tag is Tag.KUMMER_M else -1.0

    z = b
    fz = f(z)
    if fz == 0.0:
        return ZeroBracket(z, z, tag)
    if np.sign(fz) == near_sign:
        lo, hi = z, z * BRACKET_FACTOR
        while np.sign(f(hi)) == near_sign:
            lo, hi = hi, hi * BRACKET_FACTOR
            if hi > BRACKET_CAP * b:
                raise BracketError("no sign change found while expanding", {"a": a, "b": b, "tag": tag.value, "hi": hi})
    else:
        lo, hi = z / BRACKET_FACTOR, z
        while np.sign(f(lo)) != near_sign:
            lo, hi = lo / BRACKET_FACTOR, lo
            if lo < b / BRACKET_CAP:
                raise BracketError("no sign change found while shrinking", {"a": a, "b": b, "tag": tag.value, "lo": lo})
    return ZeroBracket(lo, hi, tag)


def unique_positive_zero(tag, a: float, b: float, tol: float = BISECTION_REL_WIDTH) -> float:
    """The unique positive zero of M(a, b, .) or U(a, b, .) for a in [-1, 0), b >= 1.

    Bisection on a geometrically grown bracket until its relative width is
    below ``tol``.
    """
    if not tol > 0:
        raise ArgumentError("tol must be positive")
    br = bracket_zero(tag, a, b)
    lo, hi = br.lo, br.hi
    if lo == hi:
        return lo
    f = _evaluator(br.tag, float(a), float(b))
    near_sign = 1.0 if br.tag is Tag.KUMMER_M else -1.0
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if np.sign(fm) == near_sign:
            lo = mid
        else:
            hi = mid
        if mid in (lo, hi) and hi - lo <= 4 * np.spacing(hi):
            break
    return 0.5 * (lo + hi)


def sign_changes(tag, a: float, b: float, z_max: float, samples: int = 2000) -> int:
    """Number of sign changes of the function on a uniform grid in (0, z_max]."""
    f = _evaluator(_as_tag(tag), float(a), float(b))
    z = np.linspace(z_max / samples, z_max, samples)
    s = np.sign(f(z))
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def scaled_zero_m(alpha: float, n: int, tol: float = BISECTION_REL_WIDTH) -> float:
    """Positive zero in s of ``M(-alpha/2, n/2, s^2/4)``."""
    _check_alpha_n(alpha, n)
    return 2.0 * math.sqrt(unique_positive_zero(Tag.KUMMER_M, -alpha / 2, n / 2, tol))


def scaled_zero_u(alpha: float, n: int, eps: float, tol: float = BISECTION_REL_WIDTH) -> float:
    """Positive zero in s of ``U(-alpha/2, n/2, eps s^2/4)``."""
    _check_alpha_n(alpha, n)
    if not 0 < eps <= 1:
        raise ArgumentError(f"eps must lie in (0, 1], got {eps}")
    return 2.0 * math.sqrt(unique_positive_zero(Tag.TRICOMI_U, -alpha / 2, n / 2, tol) / eps)


def _check_alpha_n(alpha: float, n: int) -> None:
    if not 0 < alpha <= 2:
        raise ArgumentError(f"alpha must lie in (0, 2], got {alpha}")
    if int(n) != n or n < 3:
        raise ArgumentError(f"dimension n must be an integer >= 3, got {n}")
