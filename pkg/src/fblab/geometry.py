"""Parabolic geometry: cylinders, uniform space-time grids, distances and
Hölder fits.

Space-time points are stored as flat arrays ``(x_1, ..., x_n, t)``; the last
coordinate is always time.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ArgumentError, EmptyResultError, NumericError

MAX_GRID_DIM = 3


@dataclass(frozen=True)
class ParabolicCylinder:
    """``Q_r(x0, t0) = B_r(x0) x (t0 - r^2, t0]``."""

    center_x: tuple
    center_t: float
    radius: float

    def __post_init__(self):
        cx = tuple(float(c) for c in np.atleast_1d(self.center_x))
        if not cx:
            raise ArgumentError("cylinder center needs at least one spatial coordinate")
        object.__setattr__(self, "center_x", cx)
        object.__setattr__(self, "center_t", float(self.center_t))
        if not self.radius > 0:
            raise ArgumentError(f"cylinder radius must be positive, got {self.radius}")
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return len(self.center_x)

    @property
    def t_start(self) -> float:
        return self.center_t - self.radius**2

    def contains(self, x, t, closed: bool = False):
        """Membership test; vectorised over leading axes of ``x`` and ``t``.

        ``x`` has the spatial coordinates on its last axis.
        """
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        if x.shape[-1] != self.dim:
            raise ArgumentError(f"expected {self.dim} spatial coordinates, got {x.shape[-1]}")
        d = np.linalg.norm(x - np.asarray(self.center_x), axis=-1)
        if closed:
            # small slack so that grid nodes lying on the closure are kept
            tol = 1e-12 * max(1.0, self.radius)
            return (d <= self.radius + tol) & (t >= self.t_start - tol) & (t <= self.center_t + tol)
        return (d < self.radius) & (t > self.t_start) & (t <= self.center_t)

    def scaled(self, factor: float) -> "ParabolicCylinder":
        return ParabolicCylinder(self.center_x, self.center_t, self.radius * factor)


@dataclass(frozen=True)
class GridField:
    """Scalar field sampled on a uniform axis-aligned space-time grid.

    ``values`` has shape ``(N_1, ..., N_n, N_t)``; node ``(i_1, .., i_n, k)``
    sits at ``x_j = spatial_origin[j] + i_j * spatial_step[j]`` and
    ``t = time_origin + k * time_step``.
    """

    spatial_origin: tuple
    spatial_step: tuple
    time_origin: float
    time_step: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        origin = tuple(float(o) for o in np.atleast_1d(self.spatial_origin))
        step = tuple(float(s) for s in np.atleast_1d(self.spatial_step))
        n = len(origin)
        if not 1 <= n <= MAX_GRID_DIM:
            raise ArgumentError(f"grid dimension must be in 1..{MAX_GRID_DIM}, got {n}")
        if len(step) != n:
            raise ArgumentError("spatial_step and spatial_origin lengths differ")
        if any(not s > 0 for s in step):
            raise ArgumentError(f"spatial steps must be positive, got {step}")
        if not self.time_step > 0:
            raise ArgumentError(f"time step must be positive, got {self.time_step}")
        values = np.array(self.values, dtype=float)
        if values.ndim != n + 1:
            raise ArgumentError(f"values must have {n + 1} axes, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NumericError("grid field contains non-finite values",
                               {"bad_count": int(np.sum(~np.isfinite(values)))})
        values.setflags(write=False)
        object.__setattr__(self, "spatial_origin", origin)
        object.__setattr__(self, "spatial_step", step)
        object.__setattr__(self, "time_origin", float(self.time_origin))
        object.__setattr__(self, "time_step", float(self.time_step))
        object.__setattr__(self, "values", values)

    @classmethod
    def from_axes(cls, axes: Sequence[np.ndarray], times: np.ndarray, values) -> "GridField":
        """Build from explicit (uniform) coordinate arrays."""
        axes = [np.asarray(a, dtype=float) for a in axes]
        times = np.atleast_1d(np.asarray(times, dtype=float))
        steps = [_uniform_step(a, f"axis {i}") for i, a in enumerate(axes)]
        dt = _uniform_step(times, "time axis") if times.size > 1 else 1.0
        return cls(tuple(a[0] for a in axes), tuple(steps), times[0], dt, values)

    @classmethod
    def sample(cls, func, axes, times) -> "GridField":
        """Evaluate ``func(X, t)`` (``X`` with coordinates on the last axis)
        at every node."""
        axes = [np.asarray(a, dtype=float) for a in axes]
        times = np.atleast_1d(np.asarray(times, dtype=float))
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        vals = np.stack([np.broadcast_to(func(mesh, t), mesh.shape[:-1]) for t in times], axis=-1)
        return cls.from_axes(axes, times, vals)

    @property
    def dim(self) -> int:
        return len(self.spatial_origin)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def axes(self) -> list:
        return [self.spatial_origin[i] + self.spatial_step[i] * np.arange(self.shape[i])
                for i in range(self.dim)]

    @property
    def times(self) -> np.ndarray:
        return self.time_origin + self.time_step * np.arange(self.shape[-1])

    @property
    def h(self) -> float:
        """Largest spatial step."""
        return max(self.spatial_step)

    def node_coordinates(self) -> np.ndarray:
        """Spatial coordinates of all nodes, shape ``(N_1, .., N_n, n)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def window_mask(self, window: ParabolicCylinder, closed: bool = True) -> np.ndarray:
        """Boolean mask, same shape as ``values``, of nodes inside ``window``."""
        if window.dim != self.dim:
            raise ArgumentError(f"window has dimension {window.dim}, field has {self.dim}")
        X = self.node_coordinates()[..., None, :]
        T = self.times.reshape((1,) * self.dim + (-1,))
        X, T = np.broadcast_arrays(X, T[..., None])
        return window.contains(X, T[..., 0], closed=closed)

    def with_values(self, values) -> "GridField":
        return GridField(self.spatial_origin, self.spatial_step, self.time_origin,
                         self.time_step, values)

    def time_slice(self, k: int) -> np.ndarray:
        return self.values[..., k]

    def to_csv(self, path_or_buf=None) -> str | None:
        """Write ``x1,...,xn,t,value`` rows with 17 significant digits."""
        return write_pointset_csv(field_to_points(self), self.dim, path_or_buf)

    @classmethod
    def from_csv(cls, path_or_buf) -> "GridField":
        pts = read_pointset_csv(path_or_buf)
        n = pts.shape[1] - 2
        coords = [np.unique(pts[:, j]) for j in range(n + 1)]
        shape = tuple(len(c) for c in coords)
        if np.prod(shape) != len(pts):
            raise ArgumentError("CSV nodes do not form a complete tensor grid")
        idx = [np.searchsorted(c, pts[:, j]) for j, c in enumerate(coords)]
        vals = np.empty(shape)
        vals[tuple(idx)] = pts[:, -1]
        return cls.from_axes(coords[:n], coords[n], vals)


def _uniform_step(a: np.ndarray, name: str) -> float:
    if a.ndim != 1 or a.size < 2:
        raise ArgumentError(f"{name} needs at least two nodes")
    d = np.diff(a)
    step = (a[-1] - a[0]) / (a.size - 1)
    if step <= 0 or np.max(np.abs(d - step)) > 1e-9 * max(abs(step), np.max(np.abs(a))):
        raise ArgumentError(f"{name} is not uniformly increasing")
    return float(step)


def parabolic_distance(p, q) -> float:
    """``(|x - y|^2 + |t - s|)^(1/2)`` for space-time points ``(x, t)``, ``(y, s)``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 1 or p.size < 2:
        raise ArgumentError(f"space-time points must have equal length >= 2, got {p.shape} and {q.shape}")
    dx = p[:-1] - q[:-1]
    return float(math.sqrt(dx @ dx + abs(p[-1] - q[-1])))


def parabolic_distance_matrix(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Pairwise parabolic distances between rows of ``P`` and ``Q``."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if P.shape[1] != Q.shape[1]:
        raise ArgumentError("point sets have different dimensions")
    sq = cdist(P[:, :-1], Q[:, :-1], "sqeuclidean") if P.shape[1] > 1 else 0.0
    return np.sqrt(sq + np.abs(P[:, -1:] - Q[:, -1][None, :]))


def hausdorff_distance(X, Y, chunk: int = 2048) -> float:
    """Exact Hausdorff distance between two finite point sets (rows).

    Brute force over all pairs, processed in row chunks to bound memory.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] == 0 or Y.shape[0] == 0:
        raise ArgumentError("Hausdorff distance needs two nonempty sets")
    if X.shape[1] != Y.shape[1]:
        raise ArgumentError(f"point dimensions differ: {X.shape[1]} vs {Y.shape[1]}")

    def directed(A, B):
        worst = 0.0
        for i in range(0, A.shape[0], chunk):
            d = cdist(A[i:i + chunk], B)
            worst = max(worst, float(d.min(axis=1).max()))
        return worst

    return max(directed(X, Y), directed(Y, X))


class HolderFit(NamedTuple):
    best_exponent: float
    constant: float
    residual: float
    constants: dict


def holder_seminorm_fit(points, values, exponent_grid, cap: float = 1e3,
                        time_axis: bool = True) -> HolderFit:
    """Largest exponent in ``exponent_grid`` whose Hölder quotient stays below ``cap``.

    For every candidate alpha the sup over sample pairs of
    ``|v_i - v_j| / d(p_i, p_j)^alpha`` is computed, with ``d`` the parabolic
    distance when ``time_axis`` is set (last coordinate is time) and the
    Euclidean one otherwise. Vector-valued samples use the Euclidean norm of
    the difference. ``residual`` is the least-squares slope of
    ``log|dv|`` against ``log d`` over pairs with ``dv > 0`` (nan if none).
    If no exponent passes the cap, ``best_exponent`` is nan.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    V = np.asarray(values, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if P.shape[0] != V.shape[0]:
        raise ArgumentError("points and values have different lengths")
    if P.shape[0] < 8:
        raise ArgumentError(f"need at least 8 samples, got {P.shape[0]}")
    if time_axis:
        D = parabolic_distance_matrix(P, P)
    else:
        D = cdist(P, P)
    dV = cdist(V, V)
    iu = np.triu_indices(P.shape[0], k=1)
    d, dv = D[iu], dV[iu]
    if np.any(d <= 0):
        raise ArgumentError("sample points must be pairwise distinct")

    constants = {}
    best, best_const = math.nan, math.inf
    for alpha in sorted(float(a) for a in exponent_grid):
        c = float(np.max(dv / d**alpha))
        constants[alpha] = c
        if c < cap:
            best, best_const = alpha, c

    pos = dv > 0
    if np.count_nonzero(pos) >= 2 and np.ptp(np.log(d[pos])) > 0:
        slope = float(np.polyfit(np.log(d[pos]), np.log(dv[pos]), 1)[0])
    else:
        slope = math.nan
    return HolderFit(best, best_const, slope, constants)


def field_to_points(field_: GridField, mask: np.ndarray | None = None) -> np.ndarray:
    """Rows ``(x_1..x_n, t, value)`` for the nodes selected by ``mask``."""
    X = field_.node_coordinates()
    T = field_.times
    full = np.concatenate([
        np.broadcast_to(X[..., None, :], field_.shape + (field_.dim,)),
        np.broadcast_to(T.reshape((1,) * field_.dim + (-1, 1)), field_.shape + (1,)),
        field_.values[..., None],
    ], axis=-1)
    if mask is None:
        return full.reshape(-1, field_.dim + 2).copy()
    return full[mask]


def graph_to_pointset(field_: GridField, window: ParabolicCylinder) -> np.ndarray:
    """Graph ``{(x, t, u(x, t))}`` of the field restricted to ``window``."""
    mask = field_.window_mask(window, closed=True)
    if not mask.any():
        raise EmptyResultError("window does not contain any grid node")
    return field_to_points(field_, mask)


def write_pointset_csv(points: np.ndarray, n: int, path_or_buf=None) -> str | None:
    header = [f"x{i + 1}" for i in range(n)] + ["t", "value"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in np.asarray(points, dtype=float):
        w.writerow([f"{v:.17g}" for v in row])
    text = buf.getvalue()
    if path_or_buf is None:
        return text
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return None


def read_pointset_csv(path_or_buf) -> np.ndarray:
    if hasattr(path_or_buf, "read"):
        text = path_or_buf.read()
    else:
        with open(path_or_buf, encoding="utf-8") as fh:
            text = fh.read()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ArgumentError("empty CSV")
    header = rows[0]
    if len(header) < 3 or header[-2:] != ["t", "value"]:
        raise ArgumentError(f"unexpected CSV header {header}")
    return np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float).reshape(-1, len(header))
