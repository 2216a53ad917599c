"""Diagnostics of the free boundary ``{u = 0}`` of solved fields.

The zero set is read off as a graph ``x_n = g(x', t)`` column by column, and
the quantities that the regularity theory controls are measured on it:
flatness against planes, geometric decay of the oscillation of ``u - x_n``
on nested cylinders, the decay rate of the best-plane deviation, and Hölder
continuity of the normal.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import ArgumentError, EmptyResultError, GraphViolationError, NumericError
from .geometry import GridField, HolderFit, ParabolicCylinder, holder_seminorm_fit

ZERO_DEVIATION = 1e-12
MIN_CELLS_PER_RADIUS = 4


@dataclass(frozen=True)
class FreeBoundaryGraph:
    """Samples ``x_n = g(x', t)`` of a free boundary.

    Attributes
    ----------
    xprime : ndarray, shape (m, n-1)
    t : ndarray, shape (m,)
    g : ndarray, shape (m,)
    normals : ndarray, shape (m, n) or None
        Unit normals ``grad u / |grad u|`` at the samples, pointing into the
        positive phase.
    """
    xprime: np.ndarray
    t: np.ndarray
    g: np.ndarray
    normals: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return int(self.g.size)

    @property
    def points(self) -> np.ndarray:
        """Space-time points ``(x', g, t)`` of the samples."""
        return np.column_stack([self.xprime, self.g, self.t])

    @property
    def samples(self) -> list:
        return [(tuple(xp), float(t), float(g)) for xp, t, g in zip(self.xprime, self.t, self.g)]

    def at_time(self, t: float, atol: float = 1e-12) -> "FreeBoundaryGraph":
        sel = np.abs(self.t - t) <= atol
        return FreeBoundaryGraph(self.xprime[sel], self.t[sel], self.g[sel],
                                 None if self.normals is None else self.normals[sel])


def extract_free_boundary(field_: GridField, window: ParabolicCylinder,
                          with_normals: bool = True) -> FreeBoundaryGraph:
    """Zero set of ``field_`` inside ``window`` as a graph over ``(x', t)``.

    In every ``x_n`` column (restricted to the window) u must change sign at
    most once, from negative below to nonnegative above. The crossing is
    located by linear interpolation between the bracketing nodes; columns
    without a sign change are omitted.

    Raises
    ------
    GraphViolationError
        If some column has several sign changes or a decreasing crossing;
        the offending ``(x', t)`` are listed in ``columns``.
    EmptyResultError
        If the window contains no grid node.
    """
    mask = field_.window_mask(window, closed=True)
    if not mask.any():
        raise EmptyResultError("window does not contain any grid node")
    n = field_.dim
    # columns along x_n: move that axis last
    V = np.moveaxis(field_.values, n - 1, -1)
    M = np.moveaxis(mask, n - 1, -1)
    xn = field_.axes[-1]
    pos = V >= 0
    pair = M[..., :-1] & M[..., 1:]
    change = pair & (pos[..., :-1] != pos[..., 1:])
    count = change.sum(axis=-1)
    upward = change & ~pos[..., :-1]
    bad = (count > 1) | ((count == 1) & ~upward.any(axis=-1))
    lead_axes = [a for a in field_.axes[:-1]] + [field_.times]
    if bad.any():
        idx = np.argwhere(bad)
        cols = [tuple(float(lead_axes[j][i[j]]) for j in range(len(i))) for i in idx[:50]]
        raise GraphViolationError(f"zero set is not a graph over (x', t) in {len(idx)} columns", cols)
    sel = np.argwhere(count == 1)
    if sel.size == 0:
        empty = np.zeros((0, n - 1))
        return FreeBoundaryGraph(empty, np.zeros(0), np.zeros(0), np.zeros((0, n)) if with_normals else None)
    crossing = np.argmax(change, axis=-1)
    lead = tuple(sel.T)
    i = crossing[lead]
    u0 = V[lead + (i,)]
    u1 = V[lead + (i + 1,)]
    h = field_.spatial_step[-1]
    theta = -u0 / (u1 - u0)
    g = xn[i] + theta * h
    xprime = np.column_stack([field_.axes[j][sel[:, j]] for j in range(n - 1)]) if n > 1 else np.zeros((len(sel), 0))
    t = field_.times[sel[:, -1]]
    normals = None
    if with_normals:
        normals = _interpolated_normals(field_, sel, i, theta)
    return FreeBoundaryGraph(xprime, t, g, normals)


def _interpolated_normals(field_: GridField, sel: np.ndarray, i: np.ndarray, theta: np.ndarray) -> np.ndarray:
    n = field_.dim
    v = field_.values
    grads = np.gradient(v, *field_.spatial_step, axis=tuple(range(n))) if n > 1 else [np.gradient(v, field_.spatial_step[0], axis=0)]
    out = np.empty((len(sel), n))
    for comp in range(n):
        G = np.moveaxis(grads[comp], n - 1, -1)
        lead = tuple(sel.T)
        out[:, comp] = (1 - theta) * G[lead + (i,)] + theta * G[lead + (i + 1,)]
    norm = np.linalg.norm(out, axis=1)
    if np.any(norm == 0):
        raise NumericError("vanishing gradient at a free-boundary sample")
    return out / norm[:, None]


def flatness(field_: GridField, Q: ParabolicCylinder, nu) -> float:
    """``max |u - nu.(x - x0)|`` over the grid nodes in Q (closed)."""
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (field_.dim,):
        raise ArgumentError(f"nu must have {field_.dim} components")
    mask = field_.window_mask(Q, closed=True)
    if not mask.any():
        raise EmptyResultError("window does not contain any grid node")
    X = field_.node_coordinates() - np.asarray(Q.center_x)
    plane = np.broadcast_to((X @ nu)[..., None], field_.shape)
    return float(np.max(np.abs(field_.values - plane)[mask]))


def best_plane(field_: GridField, Q: ParabolicCylinder) -> tuple[np.ndarray, float]:
    """Direction nu minimising :func:`flatness` over Q, and the minimum.

    This is a Chebyshev fit, solved exactly as a linear program in
    ``(nu, tau)``: minimise tau subject to ``|u_i - nu.y_i| <= tau``.
    """
    mask = field_.window_mask(Q, closed=True)
    if not mask.any():
        raise EmptyResultError("window does not contain any grid node")
    n = field_.dim
    Y = np.broadcast_to((field_.node_coordinates() - np.asarray(Q.center_x))[..., None, :],
                        field_.shape + (n,))[mask]
    u = field_.values[mask]
    return _chebyshev_plane(Y, u)


def _solve_plane_lp(Y: np.ndarray, u: np.ndarray) -> np.ndarray:
    m, n = Y.shape
    c = np.zeros(n + 1)
    c[-1] = 1.0
    ones = np.ones((m, 1))
    A = np.block([[-Y, -ones], [Y, -ones]])
    b = np.concatenate([-u, u])
    res = linprog(c, A_ub=A, b_ub=b, bounds=[(None, None)] * n + [(0, None)], method="highs")
    if res.status != 0:
        raise NumericError("best-plane linear program failed", {"message": res.message})
    return res.x[:n]


def _chebyshev_plane(Y: np.ndarray, u: np.ndarray, seed_size: int = 512, max_rounds: int = 50):
    """Exact minimiser of ``max |u_i - nu.y_i|`` by constraint generation.

    The LP is solved on a working subset; the worst violators among all
    points are added until the subset optimum is feasible for every point.
    """
    m = u.size
    if m <= 4 * seed_size:
        nu = _solve_plane_lp(Y, u)
        return nu, float(np.max(np.abs(u - Y @ nu)))
    idx = np.unique(np.linspace(0, m - 1, seed_size).astype(int))
    nu = np.zeros(Y.shape[1])
    for _ in range(max_rounds):
        nu = _solve_plane_lp(Y[idx], u[idx])
        r = np.abs(u - Y @ nu)
        tau_sub = float(r[idx].max())
        worst = float(r.max())
        if worst <= tau_sub * (1 + 1e-12) + 1e-15:
            return nu, worst
        new = np.argsort(r)[-seed_size:]
        idx = np.union1d(idx, new[r[new] > tau_sub])
    raise NumericError("constraint generation for the best plane did not settle", {"size": int(idx.size)})


class FlatnessReport(NamedTuple):
    radii: np.ndarray
    deviations: np.ndarray
    normals: np.ndarray
    fitted_exponent: float


def fit_exponent(radii, deviations, floor: float = ZERO_DEVIATION) -> float:
    """Least-squares slope of ``log deviation`` against ``log radius``.

    Radii with deviation below ``floor`` are dropped; if all are dropped the
    result is ``+inf``, and with a single survivor it is nan.
    """
    r = np.asarray(radii, dtype=float)
    d = np.asarray(deviations, dtype=float)
    keep = d >= floor
    if not keep.any():
        return math.inf
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(r[keep]), np.log(d[keep]), 1)[0])


def improvement_of_flatness_probe(field_: GridField, center, radii: Sequence[float]) -> FlatnessReport:
    """Best-plane deviation ``inf_nu sup_{Q_r} |u - nu.(x - x0)|`` for each radius.

    Parameters
    ----------
    field_ : GridField
    center : (x0, t0)
        A free-boundary point; ``x0`` is a spatial vector.
    radii : sequence of float
        Decreasing radii. Radii below four grid cells are dropped with a
        warning.
    """
    x0, t0 = center
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    radii = np.asarray(radii, dtype=float)
    if radii.size == 0 or np.any(radii <= 0):
        raise ArgumentError("radii must be positive")
    min_r = MIN_CELLS_PER_RADIUS * field_.h
    if np.any(radii < min_r):
        warnings.warn(f"dropping radii below {MIN_CELLS_PER_RADIUS} grid cells ({min_r:g})", RuntimeWarning)
        radii = radii[radii >= min_r]
    devs, normals = [], []
    for r in radii:
        nu, dev = best_plane(field_, ParabolicCylinder(tuple(x0), float(t0), float(r)))
        devs.append(dev)
        normals.append(nu)
    devs = np.array(devs)
    normals = np.array(normals).reshape(len(devs), field_.dim)
    return FlatnessReport(radii, devs, normals, fit_exponent(radii, devs))


class HarnackReport(NamedTuple):
    radii: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    oscillations: np.ndarray
    ratios: np.ndarray


def harnack_decay_probe(field_: GridField, Q: ParabolicCylinder, iterations: int,
                        delta: float | None = None) -> HarnackReport:
    """Trapping constants of ``u - x_n`` on ``Q_{r/3^i}``, ``i = 0..iterations``.

    ``alpha_i = min(u - x_n)``, ``beta_i = max(u - x_n)`` over the nested
    cylinders (same centre); ``ratios[i] = osc_{i+1} / osc_i``. Oscillations
    below ``ZERO_DEVIATION`` are round-off and are reported as 0; a ratio
    with a zero denominator is 0.

    Raises
    ------
    ArgumentError
        If ``delta`` is given and ``|u - x_n| > delta`` somewhere in Q, or a
        nested cylinder contains no grid node.
    """
    if int(iterations) != iterations or iterations < 0:
        raise ArgumentError("iterations must be a non-negative integer")
    X = field_.node_coordinates()
    dev = field_.values - X[..., -1][..., None]
    radii, alphas, betas = [], [], []
    for i in range(int(iterations) + 1):
        Qi = Q.scaled(3.0 ** (-i))
        mask = field_.window_mask(Qi, closed=True)
        if not mask.any():
            raise ArgumentError(f"cylinder of radius {Qi.radius:g} contains no grid node")
        d = dev[mask]
        if i == 0 and delta is not None and np.max(np.abs(d)) > delta:
            raise ArgumentError(f"field is not {delta}-flat on the top cylinder (max |u - x_n| = {np.max(np.abs(d)):g})")
        radii.append(Qi.radius)
        alphas.append(float(d.min()))
        betas.append(float(d.max()))
    alphas, betas = np.array(alphas), np.array(betas)
    osc = betas - alphas
    osc[osc < ZERO_DEVIATION] = 0.0
    ratios = np.where(osc[:-1] > 0, osc[1:] / np.where(osc[:-1] > 0, osc[:-1], 1.0), 0.0)
    return HarnackReport(np.array(radii), alphas, betas, osc, ratios)


def normal_holder_probe(graph: FreeBoundaryGraph, exponent_grid: Sequence[float] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
                        cap: float = 1e3, max_samples: int = 2000, seed: int = 0) -> HolderFit:
    """Hölder fit of the normal field over the free-boundary points.

    Pairs use the parabolic distance between ``(x', g, t)`` points. Large
    graphs are subsampled deterministically to ``max_samples`` points.
    """
    if graph.normals is None:
        raise ArgumentError("graph has no fitted normals")
    if len(graph) < 8:
        raise ArgumentError(f"need at least 8 samples, got {len(graph)}")
    P, N = graph.points, graph.normals
    if len(graph) > max_samples:
        idx = np.sort(np.random.default_rng(seed).choice(len(graph), max_samples, replace=False))
        P, N = P[idx], N[idx]
    return holder_seminorm_fit(P, N, exponent_grid, cap=cap, time_axis=True)


# ---------------------------------------------------------------- fixtures

def flat_fixture(delta: float = 0.01, cells: int = 160, steps_t: int = 80, a_plus: float = 1.0,
                 a_minus: float = 0.5, perturbation: Callable | None = None,
                 reg_width: float | None = None, newton: bool = False) -> GridField:
    """Two-phase solution on ``[-1, 1]^2 x [-1, 0]`` from ``delta``-flat data.

    Initial and lateral data are ``x_2 + delta * p(x)`` with ``|p| <= 1``;
    the default ``p`` is ``sin(pi (x_1 + 1) / 2) cos(pi x_2 / 4)``.
    """
    if perturbation is None:
        def perturbation(X):
            return np.sin(np.pi * (X[..., 0] + 1) / 2) * np.cos(np.pi * X[..., 1] / 4)
    h = 2.0 / cells
    w = 2 * h if reg_width is None else reg_width

    def data(X, t=None):
        return X[..., -1] + delta * perturbation(X)

    from .pde import solve_nonlinear
    return solve_nonlinear(a_plus, a_minus, [(-1, 1), (-1, 1)], (-1.0, 0.0), [cells, cells, steps_t],
                           initial=data, boundary=data, reg_width=w, newton=newton)
