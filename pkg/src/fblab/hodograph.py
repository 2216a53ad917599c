"""Hodograph change of variables for solutions monotone in ``x_n``.

With ``psi(x, t) = (x', u(x, t), t) = (y, t)`` the hodograph function is
defined by ``h(y', u(x, t), t) = x_n``. It turns the free boundary into the
fixed hyperplane ``{y_n = 0}`` and ``a_pm u_t - Delta u = 0`` into

    a_pm h_t - b_ij(grad h) D_ij h = 0   in {+- y_n > 0},   h_n^+ = h_n^- on {y_n = 0},

where ``B(p) = F(p)^T F(p)`` and ``F(p)`` is the identity except for its
last column ``(-p_1/p_n, ..., -p_{n-1}/p_n, 1/p_n)``. Explicitly

    B(p) = [[I, -p'/p_n], [-p'^T/p_n, (1 + |p'|^2)/p_n^2]].

The inverse of each ``x_n`` column is built by cubic-spline interpolation,
separately in each phase, with the interface point obtained by one-sided
cubic extrapolation. Interpolating across ``{u = 0}``, where ``u_nn`` jumps,
would put O(1) errors into the second differences of h.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ArgumentError, ConstructionError, TransformError
from .geometry import GridField, ParabolicCylinder

TINY_KNOT = 0.25


class HodographCoefficients(NamedTuple):
    p: np.ndarray
    B: np.ndarray
    F: np.ndarray


def hodograph_factor(p) -> np.ndarray:
    """``F(p)``: identity with last column ``(-p'/p_n, 1/p_n)``; vectorised over
    leading axes of ``p``."""
    p = np.asarray(p, dtype=float)
    n = p.shape[-1]
    pn = p[..., -1]
    if np.any(pn == 0):
        raise ArgumentError("p_n = 0: the hodograph coefficients are singular")
    F = np.broadcast_to(np.eye(n), p.shape[:-1] + (n, n)).copy()
    F[..., :-1, -1] = -p[..., :-1] / pn[..., None]
    F[..., -1, -1] = 1.0 / pn
    return F


def coefficient_field(p) -> np.ndarray:
    """Closed-form ``B(p)``, vectorised over leading axes of ``p``."""
    p = np.asarray(p, dtype=float)
    n = p.shape[-1]
    pn = p[..., -1]
    if np.any(pn == 0):
        raise ArgumentError("p_n = 0: the hodograph coefficients are singular")
    B = np.broadcast_to(np.eye(n), p.shape[:-1] + (n, n)).copy()
    off = -p[..., :-1] / pn[..., None]
    B[..., :-1, -1] = off
    B[..., -1, :-1] = off
    B[..., -1, -1] = (1.0 + np.sum(p[..., :-1] ** 2, axis=-1)) / pn**2
    return B


def coefficient_matrix(p) -> HodographCoefficients:
    """``B(p)`` for a single vector p, checked against ``F^T F`` to 1e-14.

    Raises
    ------
    ArgumentError
        If ``p_n = 0``.
    ConstructionError
        If the closed form and the factorisation disagree.
    """
    p = np.asarray(p, dtype=float).ravel()
    B = coefficient_field(p)
    F = hodograph_factor(p)
    gap = float(np.max(np.abs(B - F.T @ F)))
    if gap > 1e-14 * max(1.0, float(np.max(np.abs(B)))):
        raise ConstructionError("B(p) differs from F^T F", {"gap": gap})
    return HodographCoefficients(p, B, F)


def ellipticity_constant(C0: float, lam_bar: float, n: int) -> float:
    """A constant ``Lambda > 1`` with ``Lambda^-1 <= eig B(p) <= Lambda`` whenever
    ``|p| <= C0`` and ``1/|p_n| <= lam_bar``.

    Uses ``eig_max <= trace B <= (n - 1) + (1 + C0^2) lam_bar^2`` and
    ``eig_min >= det B / eig_max^(n-1)`` with ``det B = p_n^-2 >= C0^-2``.
    """
    if not (C0 > 0 and lam_bar > 0 and n >= 1):
        raise ArgumentError("C0, lam_bar must be positive and n >= 1")
    upper = (n - 1) + (1 + C0**2) * lam_bar**2
    lower = C0**-2 / upper ** (n - 1)
    return max(upper, 1.0 / lower, 1.0 + 1e-12)


class EllipticitySweep(NamedTuple):
    min_eigenvalue: float
    max_eigenvalue: float
    Lambda: float
    samples: int


def ellipticity_sweep(C0: float, lam_bar: float, n: int, points: int = 9) -> EllipticitySweep:
    """Eigenvalue range of ``B(p)`` over a grid of admissible gradients.

    The grid covers ``p'`` in the cube ``[-C0/sqrt(n-1), C0/sqrt(n-1)]^(n-1)``
    and ``|p_n|`` in ``[1/lam_bar, C0]`` (both signs), so ``|p| <= sqrt(2) C0``
    and ``1/|p_n| <= lam_bar``. ``Lambda`` is :func:`ellipticity_constant`
    evaluated with ``sqrt(2) C0``.
    """
    if not C0 * lam_bar >= 1:
        raise ArgumentError("need C0 * lam_bar >= 1 for an admissible p_n")
    side = C0 / math.sqrt(max(n - 1, 1))
    axes = [np.linspace(-side, side, points)] * (n - 1)
    pn = np.linspace(1.0 / lam_bar, C0, points)
    axes.append(np.concatenate([-pn[::-1], pn]))
    P = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    ev = np.linalg.eigvalsh(coefficient_field(P))
    return EllipticitySweep(float(ev.min()), float(ev.max()),
                            ellipticity_constant(math.sqrt(2) * C0, lam_bar, n), int(P.shape[0]))


# ---------------------------------------------------------------- transform

@dataclass(frozen=True)
class HodographPatch:
    """Source field, monotonicity floor and hodograph field on the image grid.

    ``h_field`` has axes ``(y_1, .., y_{n-1}, y_n, t)`` with ``y' = x'`` and the
    same time levels as ``source_field``.
    """
    source_field: GridField
    lam: float
    h_field: GridField
    un_range: tuple
    method: str = "cubic"

    @property
    def has_interface(self) -> bool:
        yn = self.h_field.axes[-1]
        return bool(yn[0] < 0 < yn[-1] and np.any(np.isclose(yn, 0.0, atol=1e-12 * self.h_field.spatial_step[-1])))


def _box_indices(field_: GridField, window: ParabolicCylinder | None):
    if window is None:
        return tuple(slice(None) for _ in range(field_.dim + 1))
    if window.dim != field_.dim:
        raise ArgumentError(f"window has dimension {window.dim}, field has {field_.dim}")
    idx = []
    tol = 1e-12
    for a, c in zip(field_.axes, window.center_x):
        sel = np.nonzero(np.abs(a - c) <= window.radius + tol)[0]
        if sel.size < 2:
            raise ArgumentError("window covers fewer than two nodes along an axis")
        idx.append(slice(sel[0], sel[-1] + 1))
    t = field_.times
    sel = np.nonzero((t >= window.t_start - tol) & (t <= window.center_t + tol))[0]
    if sel.size < 1:
        raise ArgumentError("window covers no time level")
    idx.append(slice(sel[0], sel[-1] + 1))
    return tuple(idx)


def _subfield(field_: GridField, idx) -> GridField:
    axes = [a[s] for a, s in zip(field_.axes, idx[:-1])]
    times = field_.times[idx[-1]]
    return GridField.from_axes(axes, times, field_.values[idx])


def _interface_point(u: np.ndarray, x: np.ndarray, i: int) -> float:
    """x at u = 0 from cubic fits on each side of the crossing ``u[i-1] < 0 <= u[i]``."""
    if u[i] == 0.0:
        return float(x[i])
    est = []
    plus = slice(i, min(i + 4, u.size))
    minus = slice(max(i - 4, 0), i)
    for sl in (plus, minus):
        uu, xx = u[sl], x[sl]
        if uu.size >= 2:
            coef = np.polyfit(uu, xx, uu.size - 1)
            est.append(float(np.polyval(coef, 0.0)))
    if not est:
        return float(np.interp(0.0, u, x))
    return float(np.mean(est))


def _phase_splines(u: np.ndarray, x: np.ndarray, step: float):
    """Callables for the inverse on each phase; returns ``(minus, plus)``."""
    if u[0] >= 0 or u[-1] <= 0:
        s = CubicSpline(u, x) if u.size >= 3 else (lambda q: np.interp(q, u, x))
        return s, s
    i = int(np.searchsorted(u, 0.0))
    xs = _interface_point(u, x, i)
    # nodes much closer to the interface than the local spacing are left to
    # the interface estimate; keeping them makes nearly coincident knots
    tiny = TINY_KNOT * (u[i] - u[i - 1])
    up, xp = u[i:], x[i:]
    if up[0] < tiny:
        up, xp = up[1:], xp[1:]
    um, xm = u[:i], x[:i]
    if um.size and um[-1] > -tiny:
        um, xm = um[:-1], xm[:-1]
    up = np.concatenate([[0.0], up])
    xp = np.concatenate([[xs], xp])
    um = np.concatenate([um, [0.0]])
    xm = np.concatenate([xm, [xs]])

    def make(uu, xx):
        if uu.size >= 3:
            return CubicSpline(uu, xx)
        return lambda q: np.interp(q, uu, xx)

    return make(um, xm), make(up, xp)


def _column_inverse(u: np.ndarray, x: np.ndarray, yq: np.ndarray, method: str, step: float) -> np.ndarray:
    if method == "linear":
        return np.interp(yq, u, x)
    minus, plus = _phase_splines(u, x, step)
    out = np.empty_like(yq)
    pos = yq >= 0
    if pos.any():
        out[pos] = plus(yq[pos])
    if (~pos).any():
        out[~pos] = minus(yq[~pos])
    return out


def forward_transform(field_: GridField, window: ParabolicCylinder | None, lam: float,
                      method: str = "cubic", y_step: float | None = None) -> HodographPatch:
    """Hodograph function of ``field_`` on the box circumscribing ``window``.

    Parameters
    ----------
    field_ : GridField
    window : ParabolicCylinder or None
        The transform uses the grid box ``|x_i - c_i| <= r``,
        ``t0 - r^2 <= t <= t0``; None means the whole field.
    lam : float
        Required lower bound for the one-sided differences of u in x_n.
    method : {"cubic", "linear"}
        Inverse interpolation per column.
    y_step : float, optional
        Image grid step in y_n (default: the x_n step). The image nodes are
        the multiples of ``y_step`` inside the range attained by every
        column, so ``y_n = 0`` is a node whenever the interface is inside.

    Raises
    ------
    TransformError
        If some column is not increasing at rate ``lam``, or the columns
        share no common range.
    """
    if not 0 < lam:
        raise ArgumentError(f"lam must be positive, got {lam}")
    if method not in ("cubic", "linear"):
        raise ArgumentError(f"unknown interpolation method {method!r}")
    src = _subfield(field_, _box_indices(field_, window))
    n = src.dim
    V = np.moveaxis(src.values, n - 1, -1)  # (..x'.., t, x_n)
    xn = src.axes[-1]
    hstep = src.spatial_step[-1]
    un = np.diff(V, axis=-1) / hstep
    bad = un.min(axis=-1) < lam
    if bad.any():
        lead_axes = list(src.axes[:-1]) + [src.times]
        cols = [tuple(float(lead_axes[j][i[j]]) for j in range(len(i))) for i in np.argwhere(bad)[:50]]
        raise TransformError(f"u_n < {lam} in {int(bad.sum())} columns", cols)
    lo = float(V[..., 0].max())
    hi = float(V[..., -1].min())
    k = hstep if y_step is None else float(y_step)
    if not k > 0:
        raise ArgumentError("y_step must be positive")
    j0 = math.ceil(lo / k - 1e-9)
    j1 = math.floor(hi / k + 1e-9)
    if j1 - j0 < 2:
        raise TransformError("columns share too small a common range of u", [])
    yn = k * np.arange(j0, j1 + 1)
    yn = np.clip(yn, lo, hi)
    lead_shape = V.shape[:-1]
    H = np.empty(lead_shape + (yn.size,))
    for idx in np.ndindex(*lead_shape):
        H[idx] = _column_inverse(V[idx], xn, yn, method, hstep)
    Hvals = np.moveaxis(H, -1, n - 1)
    h_field = GridField(tuple(src.spatial_origin[:-1]) + (float(yn[0]),),
                        tuple(src.spatial_step[:-1]) + (k,), src.time_origin, src.time_step, Hvals)
    return HodographPatch(src, float(lam), h_field, (float(un.min()), float(un.max())), method)


def round_trip_error(patch: HodographPatch) -> float:
    """``max |h(x', u(x, t), t) - x_n|`` over source nodes whose u lies in the image range."""
    src, hf = patch.source_field, patch.h_field
    n = src.dim
    V = np.moveaxis(src.values, n - 1, -1)
    H = np.moveaxis(hf.values, n - 1, -1)
    xn = src.axes[-1]
    yn = hf.axes[-1]
    worst = 0.0
    for idx in np.ndindex(*V.shape[:-1]):
        u = V[idx]
        inside = (u >= yn[0]) & (u <= yn[-1])
        if not inside.any():
            continue
        xr = _column_inverse_image(yn, H[idx], u[inside], patch.method)
        worst = max(worst, float(np.max(np.abs(xr - xn[inside]))))
    return worst


def _column_inverse_image(yn: np.ndarray, hcol: np.ndarray, q: np.ndarray, method: str) -> np.ndarray:
    """Evaluate one image column at y_n = q, phase by phase."""
    if method == "linear":
        return np.interp(q, yn, hcol)
    out = np.empty_like(q)
    zero = np.isclose(yn, 0.0, atol=1e-12 * (yn[1] - yn[0]))
    if yn[0] < 0 < yn[-1] and zero.any():
        j = int(np.nonzero(zero)[0][0])
        parts = ((q >= 0, yn[j:], hcol[j:]), (q < 0, yn[:j + 1], hcol[:j + 1]))
    else:
        parts = ((np.ones(q.shape, dtype=bool), yn, hcol),)
    for sel, yy, hh in parts:
        if not sel.any():
            continue
        f = CubicSpline(yy, hh) if yy.size >= 3 else (lambda z, yy=yy, hh=hh: np.interp(z, yy, hh))
        out[sel] = f(q[sel])
    return out


# ---------------------------------------------------------------- checks

class DerivativeResiduals(NamedTuple):
    time: float
    gradient: float
    reciprocal: float
    hn_range: tuple


def _phase_gradient(values: np.ndarray, step: float, axis: int, level: np.ndarray) -> np.ndarray:
    """First derivative along ``axis`` that avoids differencing across the interface.

    ``level`` is a signed array (u itself, or y_n) whose sign marks the
    phase. Each node uses the centred, forward or backward three-point
    stencil whose minority-phase nodes lie closest to the interface
    (smallest sum of ``|level|`` over them), preferring the centred one. Across a kink of the second derivative a stencil crossing the
    interface at distance d costs O(d^2/step), so the choice keeps the
    derivative second-order accurate away from the grid edges.
    """
    v = np.moveaxis(values, axis, -1)
    lv = np.moveaxis(np.broadcast_to(level, values.shape), axis, -1)
    N = v.shape[-1]
    if N < 3:
        raise ArgumentError("need at least three nodes along every axis")
    p = lv >= 0
    mag = np.abs(lv)
    big = np.inf
    cen = np.gradient(v, step, axis=-1, edge_order=2)
    fwd = np.zeros(v.shape)
    bwd = np.zeros(v.shape)
    fwd[..., :-2] = (-3 * v[..., :-2] + 4 * v[..., 1:-1] - v[..., 2:]) / (2 * step)
    bwd[..., 2:] = (3 * v[..., 2:] - 4 * v[..., 1:-1] + v[..., :-2]) / (2 * step)

    def cost(offsets, valid):
        c = np.full(v.shape, big)
        lo = -min(offsets)
        hi = N - max(offsets)
        neg = np.zeros(v.shape[:-1] + (hi - lo,))
        pos = np.zeros_like(neg)
        for o in offsets:
            sl = slice(lo + o, hi + o)
            pos = pos + np.where(p[..., sl], mag[..., sl], 0.0)
            neg = neg + np.where(p[..., sl], 0.0, mag[..., sl])
        c[..., lo:hi] = np.minimum(pos, neg)
        return np.where(valid, c, big)

    idx = np.arange(N)
    cc = cost((-1, 0, 1), (idx > 0) & (idx < N - 1))
    cf = cost((0, 1, 2), idx < N - 2)
    cb = cost((-2, -1, 0), idx > 1)
    out = np.where(np.isfinite(cc), cen, np.where(idx == 0, fwd, bwd))
    out = np.where((cf < cc) & (cf <= cb), fwd, out)
    out = np.where((cb < cc) & (cb < cf), bwd, out)
    return np.moveaxis(out, -1, axis)


def derivative_identity_check(patch: HodographPatch) -> DerivativeResiduals:
    """Compare ``u_t = -h_t/h_n`` and ``grad u = -(grad' h, -1)/h_n``.

    Both sides use centred differences on their own grids, switched to
    second-order one-sided differences where a stencil would straddle the
    interface (``u`` changing sign, or ``y_n = 0``). The source derivatives
    are carried to the image nodes by linear interpolation along ``x_n``. Only image nodes with a one-cell margin are used. Also
    returns ``max |h_n u_n - 1|`` and the range of ``h_n``.
    """
    src, hf = patch.source_field, patch.h_field
    n = src.dim
    if src.shape[-1] < 3:
        raise ArgumentError("need at least three time levels")
    ut = _phase_gradient(src.values, src.time_step, n, src.values)
    gu = [_phase_gradient(src.values, src.spatial_step[i], i, src.values) for i in range(n)]
    yshape = [1] * (n + 1)
    yshape[n - 1] = -1
    yn = hf.axes[-1].reshape(yshape)
    k = hf.spatial_step[-1]
    ht = np.gradient(hf.values, hf.time_step, axis=n, edge_order=2)
    gh = [np.gradient(hf.values, hf.spatial_step[i], axis=i, edge_order=2) for i in range(n - 1)]
    # the interface node belongs to both sides: average its two one-sided slopes
    hn = 0.5 * (_phase_gradient(hf.values, k, n - 1, yn - 0.5 * k)
                + _phase_gradient(hf.values, k, n - 1, yn + 0.5 * k))
    gh.append(hn)
    if np.any(hn <= 0):
        raise ConstructionError("h_n is not positive on the patch")

    core = tuple(slice(1, -1) for _ in range(n + 1))
    H = hf.values
    xn = src.axes[-1]

    def carry(A):
        """Source array A evaluated at x_n = h(y) along each column."""
        Am = np.moveaxis(A, n - 1, -1)
        Hm = np.moveaxis(H, n - 1, -1)
        out = np.empty(Hm.shape)
        for idx in np.ndindex(*Hm.shape[:-1]):
            out[idx] = np.interp(Hm[idx], xn, Am[idx])
        return np.moveaxis(out, -1, n - 1)

    ut_y = carry(ut)
    gu_y = [carry(g) for g in gu]
    time_res = float(np.max(np.abs(ut_y + ht / hn)[core]))
    grad_res = 0.0
    for i in range(n - 1):
        grad_res = max(grad_res, float(np.max(np.abs(gu_y[i] + gh[i] / hn)[core])))
    grad_res = max(grad_res, float(np.max(np.abs(gu_y[-1] - 1.0 / hn)[core])))
    recip = float(np.max(np.abs(hn * gu_y[-1] - 1.0)[core]))
    return DerivativeResiduals(time_res, grad_res, recip, (float(hn[core].min()), float(hn[core].max())))


class TransmissionResidual(NamedTuple):
    residual_plus: float
    residual_minus: float
    interface_jump: float


def _interface_index(hf: GridField) -> int:
    yn = hf.axes[-1]
    k = hf.spatial_step[-1]
    zero = np.nonzero(np.abs(yn) <= 1e-9 * k)[0]
    if zero.size == 0 or not (yn[0] < 0 < yn[-1]):
        raise ArgumentError("the interface y_n = 0 is not a node inside the patch")
    return int(zero[0])


def transmission_residual(patch: HodographPatch, a_plus: float, a_minus: float,
                          band: float = 0.0) -> TransmissionResidual:
    """Residuals of ``a_pm h_t - b_ij(grad h) D_ij h`` on each side and the jump of h_n.

    Stencils never cross ``{y_n = 0}``: the branch equations are evaluated at
    nodes with ``|y_n| >= step`` (centred stencils), the jump from
    second-order one-sided differences at the interface nodes. A margin of
    one node is kept on the tangential and time axes and two in y_n.

    ``band`` additionally excludes ``|y_n| < band`` from the branch
    equations. Use it for patches computed with a regularised coefficient,
    which solve a blended equation in ``|u| < reg_width`` instead of the
    sharp branch equations.

    Raises
    ------
    ArgumentError
        If ``y_n = 0`` is not an interior node of the image grid, or
        ``band`` is negative.
    """
    if band < 0:
        raise ArgumentError("band must be non-negative")
    hf = patch.h_field
    n = hf.dim
    j0 = _interface_index(hf)
    H = hf.values
    N = H.shape[n - 1]
    if j0 < 2 or j0 > N - 3:
        raise ArgumentError("need at least two image nodes on each side of the interface")
    steps = hf.spatial_step
    dt = hf.time_step

    def sh(off):
        idx = []
        for ax in range(n + 1):
            o = off.get(ax, 0)
            idx.append(slice(1 + o, H.shape[ax] - 1 + o))
        return H[tuple(idx)]

    c = sh({})
    grad = [(sh({i: 1}) - sh({i: -1})) / (2 * steps[i]) for i in range(n)]
    ht = (sh({n: 1}) - sh({n: -1})) / (2 * dt)
    D = np.empty(c.shape + (n, n))
    for i in range(n):
        D[..., i, i] = (sh({i: 1}) - 2 * c + sh({i: -1})) / steps[i] ** 2
        for j in range(i + 1, n):
            D[..., i, j] = D[..., j, i] = (sh({i: 1, j: 1}) - sh({i: 1, j: -1}) - sh({i: -1, j: 1})
                                           + sh({i: -1, j: -1})) / (4 * steps[i] * steps[j])
    B = coefficient_field(np.stack(grad, axis=-1))
    div = np.einsum("...ij,...ij->...", B, D)
    # position of each core node along y_n relative to the interface node
    jj = np.arange(1, N - 1) - j0
    shape = [1] * (n + 1)
    shape[n - 1] = -1
    jj = jj.reshape(shape)
    yc = hf.axes[-1][1:-1].reshape(shape)
    plus = np.broadcast_to((jj >= 1) & (yc >= band), c.shape)
    minus = np.broadcast_to((jj <= -1) & (yc <= -band), c.shape)
    rp = np.abs(a_plus * ht - div)[plus]
    rm = np.abs(a_minus * ht - div)[minus]

    k = steps[-1]
    Hm = np.moveaxis(H, n - 1, 0)
    hp = (-3 * Hm[j0] + 4 * Hm[j0 + 1] - Hm[j0 + 2]) / (2 * k)
    hm = (3 * Hm[j0] - 4 * Hm[j0 - 1] + Hm[j0 - 2]) / (2 * k)
    inner = tuple(slice(1, -1) for _ in range(n))
    jump = float(np.max(np.abs(hp - hm)[inner]))
    return TransmissionResidual(float(rp.max()) if rp.size else 0.0, float(rm.max()) if rm.size else 0.0, jump)
