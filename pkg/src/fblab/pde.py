"""Finite-difference solvers for two-phase parabolic problems.

Two problems are covered.

* The linear transmission problem with a flat interface ``{x_n = 0}``::

      a_+ v_t - a_ij D_ij v = f_+   in {x_n > 0},
      a_- v_t - a_ij D_ij v = f_-   in {x_n < 0},
      v_n^+ = v_n^-                 on {x_n = 0},

  solved through the regularized equation ``a(x_n) w_t - a_ij D_ij w = f(x_n)``
  where ``a`` and ``f`` blend the two phases over a band of half-width
  ``reg_width``.
* The nonlinear free transmission problem ``d_t c(u) - Delta u = 0`` with
  ``c(s) = a_+ s^+ - a_- s^-``, again through a smooth ``a_reg(u)``.

Both use backward Euler in time and second-order centred differences in
space, so every time step is a sparse linear solve.
"""
from __future__ import annotations

import time as _time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ArgumentError, NumericError, SpecError
from .geometry import GridField

LINEAR_RESIDUAL_TOL = 1e-10
NEWTON_MAX_ITER = 50


# ---------------------------------------------------------------- Pucci operators

def _sym_eigvals(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise ArgumentError(f"expected square matrices, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M), initial=0.0)))
    if np.max(np.abs(M - np.swapaxes(M, -1, -2)), initial=0.0) > 1e-12 * scale:
        raise ArgumentError("matrix is not symmetric")
    return np.linalg.eigvalsh(M)


def _check_ellipticity_constants(lam: float, Lam: float) -> None:
    if not 0 < lam <= Lam:
        raise ArgumentError(f"need 0 < lambda <= Lambda, got {lam}, {Lam}")


def pucci_minus(M, lam: float, Lam: float):
    """``lam * sum(e_i > 0) + Lam * sum(e_i < 0)`` over the eigenvalues of M.

    Vectorised over leading axes of ``M``.
    """
    _check_ellipticity_constants(lam, Lam)
    e = _sym_eigvals(M)
    return lam * np.sum(np.clip(e, 0, None), axis=-1) + Lam * np.sum(np.clip(e, None, 0), axis=-1)


def pucci_plus(M, lam: float, Lam: float):
    """``Lam * sum(e_i > 0) + lam * sum(e_i < 0)`` over the eigenvalues of M."""
    _check_ellipticity_constants(lam, Lam)
    e = _sym_eigvals(M)
    return Lam * np.sum(np.clip(e, 0, None), axis=-1) + lam * np.sum(np.clip(e, None, 0), axis=-1)


# ---------------------------------------------------------------- problem data

@dataclass(frozen=True)
class TransmissionSpec:
    """Coefficients of the linear transmission problem.

    Parameters
    ----------
    a_plus, a_minus : float
        Positive time-derivative coefficients of the two phases.
    coeff : callable or array or None
        ``coeff(X, t)`` returning symmetric matrices of shape ``X.shape[:-1] + (n, n)``,
        or a constant ``(n, n)`` matrix; None means the identity.
    rhs_plus, rhs_minus : callable or float or None
        ``f(X, t)``; None means zero.
    ellipticity : (float, float) or None
        Stored bounds ``(a_low, a_high)``. If None they are measured from the
        samples on the first assembly.
    coeff_time_dependent : bool
        Reassemble the spatial operator at every step.
    """
    a_plus: float
    a_minus: float
    coeff: object = None
    rhs_plus: object = None
    rhs_minus: object = None
    ellipticity: tuple | None = None
    coeff_time_dependent: bool = False

    def __post_init__(self):
        if not (self.a_plus > 0 and self.a_minus > 0):
            raise SpecError(f"a_plus and a_minus must be positive, got {self.a_plus}, {self.a_minus}")
        if self.ellipticity is not None:
            lo, hi = self.ellipticity
            if not 0 < lo <= hi:
                raise SpecError(f"ellipticity bounds must satisfy 0 < low <= high, got {self.ellipticity}")

    @property
    def homogeneous(self) -> bool:
        return _is_zero(self.rhs_plus) and _is_zero(self.rhs_minus)

    def coeff_at(self, X: np.ndarray, t: float) -> np.ndarray:
        n = X.shape[-1]
        if self.coeff is None:
            return np.broadcast_to(np.eye(n), X.shape[:-1] + (n, n))
        if callable(self.coeff):
            A = np.asarray(self.coeff(X, t), dtype=float)
        else:
            A = np.asarray(self.coeff, dtype=float)
        return np.broadcast_to(A, X.shape[:-1] + (n, n))

    def ellipticity_bounds(self, X: np.ndarray, t: float) -> tuple[float, float]:
        """Sampled eigenvalue range of the coefficients; raises SpecError when
        it leaves the stored bounds or is not positive."""
        A = self.coeff_at(X, t)
        try:
            e = _sym_eigvals(A.reshape(-1, *A.shape[-2:]))
        except ArgumentError as exc:
            raise SpecError(f"coefficient matrix: {exc}") from None
        lo, hi = float(e.min()), float(e.max())
        if not lo > 0:
            raise SpecError(f"coefficients are not elliptic: smallest eigenvalue {lo}")
        if self.ellipticity is not None:
            blo, bhi = self.ellipticity
            slack = 1e-12 * bhi
            if lo < blo - slack or hi > bhi + slack:
                raise SpecError(f"sampled eigenvalues [{lo}, {hi}] leave the bounds {self.ellipticity}")
            return float(blo), float(bhi)
        return lo, hi

    def pucci_constants(self, X: np.ndarray | None = None, t: float = 0.0) -> tuple[float, float]:
        """``lambda = a_low / max(a_+, a_-)`` and ``Lambda = a_high / min(a_+, a_-)``."""
        if self.ellipticity is not None:
            lo, hi = self.ellipticity
        elif X is not None:
            lo, hi = self.ellipticity_bounds(X, t)
        else:
            raise ArgumentError("ellipticity bounds unknown: pass sample points")
        return lo / max(self.a_plus, self.a_minus), hi / min(self.a_plus, self.a_minus)


def _is_zero(f) -> bool:
    return f is None or (not callable(f) and float(f) == 0.0)


def _eval_rhs(f, X: np.ndarray, t: float) -> np.ndarray:
    if f is None:
        return np.zeros(X.shape[:-1])
    if callable(f):
        return np.broadcast_to(np.asarray(f(X, t), dtype=float), X.shape[:-1])
    return np.full(X.shape[:-1], float(f))


# ---------------------------------------------------------------- regularization

def smoothstep(tau):
    """C^2 step ``6 tau^5 - 15 tau^4 + 10 tau^3`` clipped to [0, 1]."""
    tau = np.clip(tau, 0.0, 1.0)
    return tau**3 * (tau * (6 * tau - 15) + 10)


def _smoothstep_integral(tau):
    """Antiderivative of :func:`smoothstep` on [0, 1], zero at 0."""
    return tau**4 * (tau * (tau - 3) + 2.5)


@dataclass(frozen=True)
class RegularizedCoefficient:
    """Smooth blend equal to ``a_minus`` for ``s < -width`` and ``a_plus`` for ``s > width``.

    The transition uses the quintic smoothstep, so the blend is C^2, monotone
    and symmetric about its midpoint ``(a_plus + a_minus) / 2`` at s = 0.
    """
    a_plus: float
    a_minus: float
    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise ArgumentError(f"regularization width must be positive, got {self.width}")

    def weight(self, s):
        """Blend weight in [0, 1]: 0 in the minus plateau, 1 in the plus plateau."""
        return smoothstep((np.asarray(s, dtype=float) + self.width) / (2 * self.width))

    def __call__(self, s):
        return self.a_minus + self.weight(s) * (self.a_plus - self.a_minus)

    def blend(self, s, f_plus, f_minus):
        """The same blend applied to arbitrary values ``f_plus``, ``f_minus``."""
        w = self.weight(s)
        return f_minus + w * (np.asarray(f_plus) - np.asarray(f_minus))

    def primitive(self, s):
        """``C(s) = int_0^s a(r) dr``, the regularized enthalpy."""
        s = np.asarray(s, dtype=float)
        w = self.width
        tau = np.clip((s + w) / (2 * w), 0.0, 1.0)
        # int_{-w}^{s} weight = 2w * I(tau) inside the band, plus (s - w) beyond it
        ramp = 2 * w * (_smoothstep_integral(tau) - _smoothstep_integral(0.5)) + np.clip(s - w, 0.0, None)
        return self.a_minus * s + (self.a_plus - self.a_minus) * ramp


def regularized_coefficient(spec: RegularizedCoefficient) -> Callable:
    """The C^2 function ``s -> a(s)`` described by ``spec``."""
    return spec


def enthalpy(u, a_plus: float, a_minus: float):
    """``c(u) = a_+ u^+ - a_- u^-``."""
    u = np.asarray(u, dtype=float)
    return a_plus * np.clip(u, 0, None) + a_minus * np.clip(u, None, 0)


# ---------------------------------------------------------------- piecewise quadratics

@dataclass(frozen=True)
class PiecewiseQuadratic:
    """``P(x, t) = x^T A(x_n) x / 2 + b.x + c t + d`` with ``A = A_plus`` for
    ``x_n >= 0`` and ``A_minus`` otherwise; the two matrices may differ only
    in the (n, n) entry."""
    A_plus: np.ndarray
    A_minus: np.ndarray
    b: np.ndarray
    c: float = 0.0
    d: float = 0.0

    def __post_init__(self):
        Ap = np.array(self.A_plus, dtype=float)
        Am = np.array(self.A_minus, dtype=float)
        b = np.array(self.b, dtype=float).ravel()
        n = b.size
        for M, name in ((Ap, "A_plus"), (Am, "A_minus")):
            if M.shape != (n, n):
                raise ArgumentError(f"{name} must be {n}x{n}, got {M.shape}")
            if not np.allclose(M, M.T, rtol=0, atol=1e-14):
                raise ArgumentError(f"{name} must be symmetric")
        diff = Ap - Am
        diff[-1, -1] = 0.0
        if np.any(diff != 0):
            raise ArgumentError("A_plus and A_minus may differ only in the (n, n) entry")
        for arr in (Ap, Am, b):
            arr.setflags(write=False)
        object.__setattr__(self, "A_plus", Ap)
        object.__setattr__(self, "A_minus", Am)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "d", float(self.d))

    @property
    def n(self) -> int:
        return self.b.size

    @classmethod
    def from_relations(cls, A_common, a_plus: float, a_minus: float, c: float,
                       f_plus: float, f_minus: float, b, d: float = 0.0,
                       coeff=None) -> "PiecewiseQuadratic":
        """Choose the (n, n) entries so that ``a_+- c = tr(a A^+-) + f_+-``.

        ``A_common`` supplies every entry except (n, n); ``coeff`` is the
        constant matrix a_ij (identity by default). Then P solves both branch
        equations exactly and has continuous normal derivative.
        """
        A = np.array(A_common, dtype=float)
        n = A.shape[0]
        a = np.eye(n) if coeff is None else np.asarray(coeff, dtype=float)
        if a[-1, -1] == 0:
            raise ArgumentError("a_nn must be nonzero")
        A0 = A.copy()
        A0[-1, -1] = 0.0
        base = np.sum(a * A0)
        Ap, Am = A0.copy(), A0.copy()
        Ap[-1, -1] = (a_plus * c - f_plus - base) / a[-1, -1]
        Am[-1, -1] = (a_minus * c - f_minus - base) / a[-1, -1]
        return cls(Ap, Am, b, c, d)

    def __call__(self, X, t):
        return piecewise_quadratic_eval(self, X, t)

    def hessian(self, X):
        X = np.asarray(X, dtype=float)
        up = (X[..., -1] >= 0)[..., None, None]
        return np.where(up, self.A_plus, self.A_minus)

    def gradient(self, X):
        X = np.asarray(X, dtype=float)
        return np.einsum("...ij,...j->...i", self.hessian(X), X) + self.b


def piecewise_quadratic_eval(P: PiecewiseQuadratic, x, t):
    """``x^T A(x_n) x / 2 + b.x + c t + d``; vectorised over leading axes of x."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != P.n:
        raise ArgumentError(f"expected {P.n} coordinates, got {x.shape[-1]}")
    quad = 0.5 * np.einsum("...i,...ij,...j->...", x, P.hessian(x), x)
    return quad + x @ P.b + P.c * np.asarray(t, dtype=float) + P.d


# ---------------------------------------------------------------- grids and stencils

class _Grid:
    """Node bookkeeping for a tensor grid over a box."""

    def __init__(self, bounds: Sequence[tuple], cells: Sequence[int]):
        if len(bounds) != len(cells):
            raise ArgumentError("bounds and spatial step counts have different lengths")
        if not 1 <= len(bounds) <= 3:
            raise ArgumentError("1 to 3 spatial dimensions are supported")
        self.axes = []
        for (lo, hi), N in zip(bounds, cells):
            if not hi > lo:
                raise ArgumentError(f"empty interval ({lo}, {hi})")
            if int(N) != N or N < 2:
                raise ArgumentError(f"need at least 2 cells per axis, got {N}")
            self.axes.append(np.linspace(lo, hi, int(N) + 1))
        self.steps = [a[1] - a[0] for a in self.axes]
        self.shape = tuple(a.size for a in self.axes)
        self.dim = len(self.shape)
        self.X = np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)
        self.size = int(np.prod(self.shape))
        boundary = np.zeros(self.shape, dtype=bool)
        for i in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[i] = 0
            boundary[tuple(idx)] = True
            idx[i] = -1
            boundary[tuple(idx)] = True
        self.boundary = boundary.ravel()
        self.interior = ~self.boundary

    def axis_operator(self, op1d: sp.spmatrix, axis: int) -> sp.csr_matrix:
        mats = [sp.identity(N, format="csr") for N in self.shape]
        mats[axis] = op1d
        out = mats[0]
        for m in mats[1:]:
            out = sp.kron(out, m, format="csr")
        return out.tocsr()


def _second_difference(N: int, h: float) -> sp.csr_matrix:
    main = np.full(N, -2.0)
    off = np.ones(N - 1)
    D = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    D[0, :] = 0
    D[N - 1, :] = 0
    return (D / h**2).tocsr()


def _first_difference(N: int, h: float) -> sp.csr_matrix:
    off = np.ones(N - 1)
    D = sp.diags([-off, off], [-1, 1], format="lil")
    D[0, :] = 0
    D[N - 1, :] = 0
    return (D / (2 * h)).tocsr()


def _elliptic_operator(grid: _Grid, A: np.ndarray) -> sp.csr_matrix:
    """``a_ij D_ij`` with centred differences (cross stencil for i != j)."""
    n = grid.dim
    D1 = [grid.axis_operator(_first_difference(grid.shape[i], grid.steps[i]), i) for i in range(n)]
    L = sp.csr_matrix((grid.size, grid.size))
    for i in range(n):
        D2 = grid.axis_operator(_second_difference(grid.shape[i], grid.steps[i]), i)
        L = L + sp.diags(A[..., i, i].ravel()) @ D2
        for j in range(i + 1, n):
            coef = A[..., i, j] + A[..., j, i]
            if np.any(coef != 0):
                L = L + sp.diags(coef.ravel()) @ (D1[i] @ D1[j])
    return L.tocsr()


def _laplacian(grid: _Grid) -> sp.csr_matrix:
    L = sp.csr_matrix((grid.size, grid.size))
    for i in range(grid.dim):
        L = L + grid.axis_operator(_second_difference(grid.shape[i], grid.steps[i]), i)
    return L.tocsr()


def _radial_laplacian(r: np.ndarray, n: int) -> sp.csr_matrix:
    """Conservative ``r^(1-n) (r^(n-1) u_r)_r``; ``2n (u_1 - u_0)/h^2`` at r = 0.

    The last row (outer Dirichlet node) is left empty.
    """
    N = r.size
    h = r[1] - r[0]
    rows, cols, vals = [0, 0], [0, 1], [-2.0 * n / h**2, 2.0 * n / h**2]
    for i in range(1, N - 1):
        wm = ((r[i] - h / 2) / r[i]) ** (n - 1) / h**2
        wp = ((r[i] + h / 2) / r[i]) ** (n - 1) / h**2
        rows += [i, i, i]
        cols += [i - 1, i, i + 1]
        vals += [wm, -(wm + wp), wp]
    return sp.csr_matrix((vals, (rows, cols)), shape=(N, N))


def _check_finite(u: np.ndarray, step: int, t: float) -> None:
    if not np.all(np.isfinite(u)):
        raise NumericError("non-finite values after time step", {"step": step, "time": t})


def _solve_checked(lu, A: sp.csr_matrix, rhs: np.ndarray, step: int) -> tuple[np.ndarray, float]:
    x = lu.solve(rhs)
    res = float(np.max(np.abs(A @ x - rhs), initial=0.0) / max(1.0, float(np.max(np.abs(rhs), initial=0.0))))
    if not res <= LINEAR_RESIDUAL_TOL:
        raise NumericError("linear solve did not reach the residual target",
                           {"step": step, "residual": res})
    return x, res


def _time_grid(t_span: tuple, steps_t: int) -> np.ndarray:
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ArgumentError(f"time span must be increasing, got {t_span}")
    if int(steps_t) != steps_t or steps_t < 1:
        raise ArgumentError(f"need a positive number of time steps, got {steps_t}")
    return np.linspace(t0, t1, int(steps_t) + 1)


def _log(run_log, **entry) -> None:
    if run_log is not None:
        run_log.append(entry)


# ---------------------------------------------------------------- linear solver

def solve_linear_transmission(spec: TransmissionSpec, bounds: Sequence[tuple], t_span: tuple,
                              steps: Sequence[int], boundary_data: Callable, reg_width: float,
                              run_log: list | None = None) -> GridField:
    """Backward Euler for ``a(x_n) w_t - a_ij D_ij w = f(x_n; x, t)`` on a box.

    Parameters
    ----------
    spec : TransmissionSpec
    bounds : sequence of (lo, hi)
        Spatial box, one pair per axis; the interface is ``x_n = 0`` on the
        last axis.
    t_span : (t0, t1)
    steps : sequence of int
        Cells per spatial axis followed by the number of time steps.
    boundary_data : callable
        ``g(X, t)`` giving the initial values at t0 and the lateral
        Dirichlet data afterwards.
    reg_width : float
        Half-width of the band over which the phases are blended.
    run_log : list, optional
        Receives one dict per step (step, time, residual, wall).

    Returns
    -------
    GridField
        Values at every node and time level.
    """
    steps = list(steps)
    grid = _Grid(bounds, steps[:-1])
    times = _time_grid(t_span, steps[-1])
    reg = RegularizedCoefficient(spec.a_plus, spec.a_minus, reg_width)
    X = grid.X
    xn = X[..., -1].ravel()
    a_diag = reg(xn)
    I, B = grid.interior, grid.boundary

    def operator(t):
        A = spec.coeff_at(X, t)
        spec.ellipticity_bounds(X, t)
        return _elliptic_operator(grid, A)

    u = np.asarray(np.broadcast_to(boundary_data(X, times[0]), grid.shape), dtype=float).ravel()
    _check_finite(u, 0, times[0])
    out = [u.reshape(grid.shape)]
    L = lu = None
    M_matrix = True
    for k in range(1, times.size):
        tic = _time.perf_counter()
        t, dt = times[k], times[k] - times[k - 1]
        if L is None or spec.coeff_time_dependent:
            L = operator(t)
            LII = L[I][:, I]
            LIB = L[I][:, B]
            Amat = (sp.diags(a_diag[I] / dt) - LII).tocsc()
            lu = splu(Amat)
            off = Amat - sp.diags(Amat.diagonal())
            M_matrix = M_matrix and bool(np.all(off.data <= 1e-14))
        g = np.asarray(np.broadcast_to(boundary_data(X, t), grid.shape), dtype=float).ravel()
        f = reg.blend(xn, _eval_rhs(spec.rhs_plus, X, t).ravel(), _eval_rhs(spec.rhs_minus, X, t).ravel())
        rhs = a_diag[I] / dt * u[I] + f[I] + LIB @ g[B]
        uI, res = _solve_checked(lu, Amat, rhs, k)
        u = g.copy()
        u[I] = uI
        _check_finite(u, k, t)
        out.append(u.reshape(grid.shape))
        _log(run_log, step=k, time=float(t), residual=res, wall=_time.perf_counter() - tic)
    field_ = GridField.from_axes(grid.axes, times, np.stack(out, axis=-1))
    if spec.homogeneous and M_matrix:
        viol = max_principle_violation(field_)
        _log(run_log, max_principle_violation=viol)
        scale = max(1.0, float(np.max(np.abs(field_.values))))
        if viol > 1e-9 * scale:
            raise NumericError("discrete maximum principle violated", {"violation": viol})
    return field_


def parabolic_boundary_mask(shape: tuple) -> np.ndarray:
    """Nodes of the initial slice and of the lateral faces of a Cartesian grid field."""
    mask = np.zeros(shape, dtype=bool)
    mask[..., 0] = True
    for i in range(len(shape) - 1):
        idx = [slice(None)] * len(shape)
        idx[i] = 0
        mask[tuple(idx)] = True
        idx[i] = -1
        mask[tuple(idx)] = True
    return mask


def max_principle_violation(field_: GridField) -> float:
    """How far interior values exceed the parabolic-boundary range (0 if they do not)."""
    v = field_.values
    pb = parabolic_boundary_mask(v.shape)
    hi, lo = v[pb].max(), v[pb].min()
    inner = v[~pb]
    if inner.size == 0:
        return 0.0
    return float(max(0.0, inner.max() - hi, lo - inner.min()))


# ---------------------------------------------------------------- nonlinear solver

def solve_nonlinear(a_plus: float, a_minus: float, bounds: Sequence[tuple], t_span: tuple,
                    steps: Sequence[int], initial: Callable, boundary: Callable,
                    reg_width: float, geometry: str = "cartesian", n: int | None = None,
                    newton: bool = False, newton_tol: float = 1e-11,
                    run_log: list | None = None) -> GridField:
    """Backward Euler for ``d_t c(u) - Delta u = 0`` with a regularized ``c``.

    Parameters
    ----------
    a_plus, a_minus : float
        Phase coefficients.
    bounds, steps, t_span
        As in :func:`solve_linear_transmission`. For ``geometry="radial"``
        ``bounds`` is ``[(0, R)]``.
    initial : callable
        ``u0(X)`` at ``t_span[0]``.
    boundary : callable
        ``g(X, t)`` on the Dirichlet boundary (for radial geometry only the
        outer node r = R).
    reg_width : float
        Half-width (in units of u) of the smoothing of ``a``.
    geometry : {"cartesian", "radial"}
        Cartesian grids in 1 or 2 dimensions, or the radial reduction in
        dimension ``n``.
    newton : bool
        False: the semi-implicit step ``a(u^k)(u^{k+1} - u^k)/dt = Delta u^{k+1}``.
        True: Newton iterations on the conservative step
        ``(C(u^{k+1}) - C(u^k))/dt = Delta u^{k+1}`` with ``C' = a``,
        seeded by the semi-implicit step.

    Raises
    ------
    NumericError
        If Newton does not converge within 50 iterations (the residual
        history is attached) or values become non-finite.
    """
    if not (a_plus > 0 and a_minus > 0):
        raise SpecError("a_plus and a_minus must be positive")
    steps = list(steps)
    if geometry == "radial":
        if len(bounds) != 1 or float(bounds[0][0]) != 0.0:
            raise ArgumentError("radial geometry needs bounds [(0, R)]")
        if n is None or int(n) != n or n < 1:
            raise ArgumentError("radial geometry needs the ambient dimension n")
        grid = _Grid(bounds, steps[:-1])
        L = _radial_laplacian(grid.axes[0], int(n))
        fixed = np.zeros(grid.size, dtype=bool)
        fixed[-1] = True
    elif geometry == "cartesian":
        if len(bounds) not in (1, 2):
            raise ArgumentError("the nonlinear solver supports 1 or 2 Cartesian dimensions")
        grid = _Grid(bounds, steps[:-1])
        L = _laplacian(grid)
        fixed = grid.boundary
    else:
        raise ArgumentError(f"unknown geometry {geometry!r}")
    times = _time_grid(t_span, steps[-1])
    reg = RegularizedCoefficient(a_plus, a_minus, reg_width)
    X = grid.X
    free = ~fixed
    LII = L[free][:, free].tocsr()
    LIB = L[free][:, fixed].tocsr()

    u = np.asarray(np.broadcast_to(initial(X), grid.shape), dtype=float).ravel()
    _check_finite(u, 0, times[0])
    out = [u.reshape(grid.shape)]
    for k in range(1, times.size):
        tic = _time.perf_counter()
        t, dt = times[k], times[k] - times[k - 1]
        g = np.asarray(np.broadcast_to(boundary(X, t), grid.shape), dtype=float).ravel()
        bterm = LIB @ g[fixed]
        uk = u[free]
        ak = reg(uk)
        Amat = (sp.diags(ak / dt) - LII).tocsc()
        v, res = _solve_checked(splu(Amat), Amat, ak / dt * uk + bterm, k)
        iters = 0
        if newton:
            Ck = reg.primitive(uk)
            history = []
            for iters in range(1, NEWTON_MAX_ITER + 1):
                F = (reg.primitive(v) - Ck) / dt - LII @ v - bterm
                J = (sp.diags(reg(v) / dt) - LII).tocsc()
                dv = splu(J).solve(-F)
                v = v + dv
                step_size = float(np.max(np.abs(dv)))
                history.append(step_size)
                if not np.isfinite(step_size):
                    break
                if step_size <= newton_tol * max(1.0, float(np.max(np.abs(v)))):
                    break
            else:
                iters = NEWTON_MAX_ITER + 1
            if iters > NEWTON_MAX_ITER or not np.isfinite(history[-1]):
                raise NumericError("Newton iteration did not converge",
                                   {"step": k, "time": float(t), "history": history})
            F = (reg.primitive(v) - Ck) / dt - LII @ v - bterm
            res = float(np.max(np.abs(F)) * dt / max(1.0, float(np.max(np.abs(v)))))
        u = g.copy()
        u[free] = v
        _check_finite(u, k, t)
        out.append(u.reshape(grid.shape))
        _log(run_log, step=k, time=float(t), residual=res, newton_iterations=iters,
             wall=_time.perf_counter() - tic)
    return GridField.from_axes(grid.axes, times, np.stack(out, axis=-1))


# ---------------------------------------------------------------- diagnostics on solved fields

def _hessian_and_time_derivative(field_: GridField):
    """Centred D^2 v and v_t at interior space-time nodes.

    Returns arrays over the interior index box (one-node margin in every
    axis) together with the node coordinates and times of that box.
    """
    v = field_.values
    n = field_.dim
    h = field_.spatial_step
    core = tuple(slice(1, -1) for _ in range(n + 1))

    def shifted(offsets):
        idx = []
        for ax in range(n + 1):
            o = offsets.get(ax, 0)
            N = v.shape[ax]
            idx.append(slice(1 + o, N - 1 + o))
        return v[tuple(idx)]

    H = np.empty(v[core].shape + (n, n))
    for i in range(n):
        H[..., i, i] = (shifted({i: 1}) - 2 * v[core] + shifted({i: -1})) / h[i] ** 2
        for j in range(i + 1, n):
            H[..., i, j] = H[..., j, i] = (shifted({i: 1, j: 1}) - shifted({i: 1, j: -1})
                                           - shifted({i: -1, j: 1}) + shifted({i: -1, j: -1})) / (4 * h[i] * h[j])
    vt = (shifted({n: 1}) - shifted({n: -1})) / (2 * field_.time_step)
    X = field_.node_coordinates()[tuple(slice(1, -1) for _ in range(n))]
    T = field_.times[1:-1]
    return H, vt, X, T


def pucci_sandwich_check(field_: GridField, spec: TransmissionSpec, fbar=None, funder=None,
                         band: float | None = None) -> float:
    """Largest violation of ``f_low + M^-(D^2 v) <= v_t <= M^+(D^2 v) + f_high``.

    Derivatives are centred differences; nodes within ``band`` (default two
    cells) of ``{x_n = 0}`` are skipped. ``fbar``/``funder`` are callables
    ``(X, t)``; by default ``max``/``min`` of ``f_+/a_+`` and ``f_-/a_-``.
    A positive return value means the inequalities fail by that much.
    """
    H, vt, X, T = _hessian_and_time_derivative(field_)
    if band is None:
        band = 2 * field_.spatial_step[-1]
    lam, Lam = spec.pucci_constants(X, float(T[0]) if T.size else 0.0)
    Xb = np.broadcast_to(X[..., None, :], X.shape[:-1] + (T.size, X.shape[-1]))
    keep = np.abs(Xb[..., -1]) > band + 1e-12
    mminus = pucci_minus(H, lam, Lam)
    mplus = pucci_plus(H, lam, Lam)
    worst = -np.inf
    for k, t in enumerate(T):
        Xk = X
        fp = _eval_rhs(spec.rhs_plus, Xk, t) / spec.a_plus
        fm = _eval_rhs(spec.rhs_minus, Xk, t) / spec.a_minus
        hi = np.maximum(fp, fm) if fbar is None else _eval_rhs(fbar, Xk, t)
        lo = np.minimum(fp, fm) if funder is None else _eval_rhs(funder, Xk, t)
        sel = keep[..., k]
        if not np.any(sel):
            continue
        lower = (lo + mminus[..., k] - vt[..., k])[sel]
        upper = (vt[..., k] - mplus[..., k] - hi)[sel]
        worst = max(worst, float(lower.max()), float(upper.max()))
    if worst == -np.inf:
        raise ArgumentError("no interior nodes outside the interface band")
    return worst


def half_space_second_differences(field_: GridField, k: int = -1) -> tuple[float, float]:
    """Sup of |second differences| at time level k whose stencils stay in
    ``{x_n >= 0}`` and in ``{x_n <= 0}`` respectively."""
    v = field_.values[..., k]
    n = field_.dim
    h = field_.spatial_step
    xn = field_.axes[-1]
    core = tuple(slice(1, -1) for _ in range(n))

    def sh(offsets):
        return v[tuple(slice(1 + offsets.get(a, 0), v.shape[a] - 1 + offsets.get(a, 0)) for a in range(n))]

    diffs = []
    for i in range(n):
        diffs.append((sh({i: 1}) - 2 * v[core] + sh({i: -1})) / h[i] ** 2)
        for j in range(i + 1, n):
            diffs.append((sh({i: 1, j: 1}) - sh({i: 1, j: -1}) - sh({i: -1, j: 1})
                          + sh({i: -1, j: -1})) / (4 * h[i] * h[j]))
    D = np.max(np.abs(np.stack(diffs)), axis=0)
    xc = xn[1:-1]
    tol = 1e-12 * max(1.0, float(np.max(np.abs(xn))))
    up = (xc - h[-1]) >= -tol
    down = (xc + h[-1]) <= tol
    shape = (1,) * (n - 1) + (-1,)
    sup_plus = float(np.max(np.where(up.reshape(shape), D, 0.0)))
    sup_minus = float(np.max(np.where(down.reshape(shape), D, 0.0)))
    return sup_plus, sup_minus


@dataclass(frozen=True)
class TravelingWave:
    """Exact two-phase travelling wave ``u = Phi(e.x - V t)`` of the transmission problem.

    ``Phi(xi) = (1 - exp(-a V xi)) / (a V)`` with ``a = a_plus`` for
    ``xi > 0`` and ``a = a_minus`` for ``xi < 0``. Then ``Phi(0) = 0``,
    ``Phi'(0^+) = Phi'(0^-) = 1`` and ``Phi'' = -a V Phi'``, so that
    ``a_pm u_t = -a V Phi' = Delta u`` in each phase for any unit vector ``e``.
    """
    a_plus: float
    a_minus: float
    speed: float
    direction: tuple

    def __post_init__(self):
        if not (self.a_plus > 0 and self.a_minus > 0 and self.speed > 0):
            raise ArgumentError("a_plus, a_minus and speed must be positive")
        e = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(e) - 1.0) > 1e-12:
            raise ArgumentError("direction must be a unit vector")

    def _a(self, xi):
        return np.where(xi > 0, self.a_plus, self.a_minus)

    def phase(self, X, t):
        return np.asarray(X, dtype=float) @ np.asarray(self.direction, dtype=float) - self.speed * t

    def __call__(self, X, t):
        xi = self.phase(X, t)
        k = self._a(xi) * self.speed
        return -np.expm1(-k * xi) / k

    def gradient(self, X, t):
        xi = self.phase(X, t)
        d = np.exp(-self._a(xi) * self.speed * xi)
        return d[..., None] * np.asarray(self.direction, dtype=float)

    def time_derivative(self, X, t):
        xi = self.phase(X, t)
        return -self.speed * np.exp(-self._a(xi) * self.speed * xi)
