"""Command-line interface and experiment recipes.

Subcommands ``specfun``, ``selfsim``, ``pde``, ``fbdiag``, ``barrier`` and
``hodograph`` expose single operations; ``run <config>`` executes a named
recipe from a line-oriented ``key = value`` file and appends a JSON-lines
run record to ``<output_dir>/runs.jsonl``.

Exit codes: 0 all assertions pass, 1 an assertion failed, 2 configuration
or argument error, 3 numerical error. ``FBLAB_THREADS`` caps the BLAS and
OpenMP thread pools (it must be set before numpy is first imported, which
is the case when the ``fblab`` console script starts).
"""
from __future__ import annotations

import os

_THREADS = os.environ.get("FBLAB_THREADS")
if _THREADS is not None and _THREADS.strip().isdigit() and int(_THREADS) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _THREADS.strip())

import argparse
import contextlib
import io
import json
import math
import sys
import tempfile
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import barriers, fbdiag, hodograph, pde, selfsim, specfun
from .errors import ArgumentError, ConfigError, FblabError
from .geometry import GridField, ParabolicCylinder

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


# ---------------------------------------------------------------- parameters

@dataclass(frozen=True)
class Param:
    kind: str  # "int", "float", "floats", "ints", "str"
    default: object
    check: Callable | None = None
    requirement: str = ""


def _positive(v):
    return v > 0


def _eps_open(v):
    return 0 < v < 1


def _dim(v):
    return v >= 1


EPS = Param("float", 0.1, _eps_open, "ε ∈ (0,1)")
DIM = Param("int", 3, _dim, "n ≥ 1")

COMMON = {"seed": Param("int", 0, lambda v: v >= 0, "seed ≥ 0")}

RECIPE_PARAMS: dict[str, dict[str, Param]] = {
    "figure2": {"n": DIM, "eps": EPS, "points": Param("int", 601, lambda v: v >= 3, "points ≥ 3")},
    "counterexample_sweep": {
        "n": DIM,
        "eps_factors": Param("floats", (1.1, 0.9, 0.5, 0.25, 0.125, 0.0625),
                             lambda v: len(v) >= 2 and all(x > 0 for x in v), "positive factors, at least two"),
    },
    "linear_quadratic": {
        "cells": Param("ints", (32, 64), lambda v: len(v) >= 2 and all(x >= 4 for x in v), "at least two sizes ≥ 4"),
        "a_plus": Param("float", 1.0, _positive, "a_plus > 0"),
        "a_minus": Param("float", 0.5, _positive, "a_minus > 0"),
    },
    "selfsim_evolution": {
        "n": DIM, "eps": EPS,
        "cells": Param("int", 2048, lambda v: v >= 16, "cells ≥ 16"),
        "steps_t": Param("int", 500, lambda v: v >= 1, "steps_t ≥ 1"),
        "reg_width": Param("float", 0.01, _positive, "reg_width > 0"),
        "radius": Param("float", 4.0, lambda v: v > 2, "radius > 2"),
        "refine": Param("int", 1, lambda v: v in (0, 1), "refine ∈ {0, 1}"),
        "newton": Param("int", 0, lambda v: v in (0, 1), "newton ∈ {0, 1}"),
    },
    "flatness_decay": {
        "delta": Param("float", 0.01, _positive, "delta > 0"),
        "cells": Param("int", 120, lambda v: v >= 16, "cells ≥ 16"),
        "steps_t": Param("int", 60, lambda v: v >= 2, "steps_t ≥ 2"),
        "a_minus": Param("float", 0.5, _positive, "a_minus > 0"),
    },
    "harnack_decay": {
        "delta": Param("float", 0.01, _positive, "delta > 0"),
        "cells": Param("int", 120, lambda v: v >= 16, "cells ≥ 16"),
        "steps_t": Param("int", 60, lambda v: v >= 2, "steps_t ≥ 2"),
        "a_minus": Param("float", 0.5, _positive, "a_minus > 0"),
        "iterations": Param("int", 3, lambda v: v >= 1, "iterations ≥ 1"),
    },
    "barrier_certificate": {
        "n": Param("int", 2, lambda v: v >= 2, "n ≥ 2"),
        "a_plus": Param("float", 1.0, _positive, "a_plus > 0"),
        "a_minus": Param("float", 0.5, _positive, "a_minus > 0"),
        "delta": Param("float", 0.01, _positive, "delta > 0"),
        "c0": Param("float", 0.1, _positive, "c0 > 0"),
        "grid": Param("int", 40, lambda v: v >= 4, "grid ≥ 4"),
    },
    "hodograph_roundtrip": {
        "cells": Param("ints", (32, 64), lambda v: len(v) >= 2 and all(x >= 8 for x in v), "at least two sizes ≥ 8"),
        "a_plus": Param("float", 1.0, _positive, "a_plus > 0"),
        "a_minus": Param("float", 0.5, _positive, "a_minus > 0"),
        "speed": Param("float", 1.0, _positive, "speed > 0"),
        "angle": Param("float", 0.3, lambda v: abs(v) < 1.2, "|angle| < 1.2"),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    parameters: dict
    output_dir: str = "fblab_out"


@dataclass
class RunRecord:
    experiment: str
    parameters: dict
    artifacts: list = field(default_factory=list)
    assertions: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return all(self.assertions.values())

    def to_json(self) -> str:
        d = asdict(self)
        d["passed"] = self.passed
        return json.dumps(d, sort_keys=True)


def _convert(kind: str, raw: str):
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "floats":
        return tuple(float(x) for x in raw.split(","))
    if kind == "ints":
        return tuple(int(x) for x in raw.split(","))
    return raw


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines into an :class:`ExperimentConfig`.

    Blank lines and lines starting with ``#`` are ignored. Every problem is
    collected before raising.

    Raises
    ------
    ConfigError
        With the full list of problems: malformed lines, duplicate keys
        (naming both lines), unknown experiment or keys, unparsable or
        out-of-range values.
    """
    errors: list[str] = []
    seen: dict[str, tuple[int, str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            errors.append(f"line {lineno}: expected 'key = value', got {s!r}")
            continue
        key, value = (part.strip() for part in s.split("=", 1))
        if not key:
            errors.append(f"line {lineno}: empty key")
            continue
        if key in seen:
            errors.append(f"duplicate key {key!r} on lines {seen[key][0]} and {lineno}")
            continue
        seen[key] = (lineno, value)

    experiment = seen.pop("experiment", (None, None))[1]
    output_dir = seen.pop("output_dir", (None, "fblab_out"))[1]
    params: dict = {}
    if experiment is None:
        errors.append("missing key 'experiment'")
        schema = None
    elif experiment not in RECIPE_PARAMS:
        errors.append(f"unknown experiment {experiment!r}; expected one of {', '.join(RECIPE_PARAMS)}")
        schema = None
    else:
        schema = {**COMMON, **RECIPE_PARAMS[experiment]}
    if schema is not None:
        for key, (lineno, raw) in seen.items():
            if key not in schema:
                errors.append(f"line {lineno}: unknown key {key!r} for experiment {experiment!r}")
                continue
            p = schema[key]
            try:
                v = _convert(p.kind, raw)
            except ValueError:
                errors.append(f"line {lineno}: cannot parse {key} = {raw!r} as {p.kind}")
                continue
            if p.check is not None and not p.check(v):
                errors.append(f"line {lineno}: {key} = {raw} out of range: requires {p.requirement}")
                continue
            params[key] = v
        for key, p in schema.items():
            params.setdefault(key, p.default)
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(experiment, params, output_dir)


# ---------------------------------------------------------------- output helpers

def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v) + 0.0:.17g}"


def table_csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


class _Stage(contextlib.AbstractContextManager):
    """Prefix errors raised inside a recipe stage with the stage name."""

    def __init__(self, name: str):
        self.name = name

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, FblabError) and exc.args:
            exc.args = (f"[{self.name}] {exc.args[0]}",) + tuple(exc.args[1:])
        return False


def _order(h_coarse, e_coarse, h_fine, e_fine) -> float:
    if e_fine <= 0 or e_coarse <= 0:
        return math.inf
    return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine)


# ---------------------------------------------------------------- recipes

def _recipe_figure2(p, out: Path, rec: RunRecord):
    with _Stage("selfsim.match"):
        prof = selfsim.matched_profile(p["n"], p["eps"])
    with _Stage("selfsim.figure2"):
        tab = selfsim.figure2_table(prof, points=p["points"])
        issues = selfsim.certify_profile(prof)
    csv = out / "figure2.csv"
    _atomic_write(csv, table_csv(["s", "M", "outer", "f"], tab))
    gp = out / "figure2.gp"
    _atomic_write(gp, _figure2_script(csv.name, prof))
    rec.artifacts += [str(csv), str(gp)]
    z_m = 2 * math.sqrt(specfun.unique_positive_zero(specfun.Tag.KUMMER_M, prof.a, prof.b))
    z_u = 2 * math.sqrt(specfun.unique_positive_zero(specfun.Tag.TRICOMI_U, prof.a, prof.b) / prof.eps)
    rec.assertions["branches share the zero within 1e-8"] = abs(z_m - z_u) <= 1e-8
    rec.assertions["profile certificate"] = not issues
    return {"alpha": prof.alpha, "s_eps": prof.s_eps, "zero_gap": abs(z_m - z_u)}


def _figure2_script(csv_name: str, prof) -> str:
    return (
        "set datafile separator ','\n"
        "set key top right\n"
        "set xlabel 's'\n"
        f"set title 'n = {prof.n}, eps = {prof.eps:g}, alpha = {prof.alpha:.6f}'\n"
        f"set arrow from {prof.s_eps:.17g}, graph 0 to {prof.s_eps:.17g}, graph 1 nohead dt 2\n"
        "set yrange [-1.5:1.5]\n"
        "set yzeroaxis\n"
        f"plot '{csv_name}' using 1:2 every ::1 with lines lc rgb 'blue' title 'M branch', \\\n"
        f"     '{csv_name}' using 1:3 every ::1 with lines lc rgb 'red' title 'U branch'\n"
    )


def _recipe_counterexample_sweep(p, out: Path, rec: RunRecord):
    n = p["n"]
    with _Stage("selfsim.eps0"):
        e0 = selfsim.eps0(n)
    rows = []
    for fac in p["eps_factors"]:
        eps = fac * e0
        if not 0 < eps < 1:
            raise ConfigError([f"eps_factors: {fac} * eps0 = {eps} violates ε ∈ (0,1)"])
        with _Stage(f"selfsim.solve_alpha(eps={eps:.6g})"):
            m = selfsim.solve_alpha(n, eps)
        rows.append((eps, m.alpha, m.s_eps, m.residual))
    rows.sort()
    csv = out / "counterexample_sweep.csv"
    _atomic_write(csv, table_csv(["eps", "alpha", "s_eps", "residual"], rows))
    rec.artifacts.append(str(csv))
    eps_arr = np.array([r[0] for r in rows])
    alpha = np.array([r[1] for r in rows])
    rec.assertions["alpha strictly increasing in eps"] = bool(np.all(np.diff(alpha) > 0))
    below = eps_arr < e0
    above = eps_arr > e0
    rec.assertions["alpha < 1 below eps0"] = bool(np.all(alpha[below] < 1))
    rec.assertions["alpha >= 1 above eps0"] = bool(np.all(alpha[above] >= 1))
    rec.assertions["matching residual <= 1e-9"] = all(r[3] <= 1e-9 for r in rows)
    return {"eps0": e0}


def linear_quadratic_fixture(a_plus: float = 1.0, a_minus: float = 0.5):
    """Piecewise quadratic solution and matching linear problem on [-1, 1]^2."""
    P = pde.PiecewiseQuadratic.from_relations([[0.2, 0.3], [0.3, 0.0]], a_plus, a_minus, c=1.0,
                                              f_plus=0.5, f_minus=-0.25, b=[0.2, 1.0], d=0.1)
    spec = pde.TransmissionSpec(a_plus, a_minus, rhs_plus=0.5, rhs_minus=-0.25)
    return P, spec


def linear_quadratic_error(N: int, a_plus: float = 1.0, a_minus: float = 0.5):
    """Sup error of the linear solver on the quadratic fixture with ``N`` cells per axis."""
    P, spec = linear_quadratic_fixture(a_plus, a_minus)
    h = 2.0 / N
    F = pde.solve_linear_transmission(spec, [(-1, 1), (-1, 1)], (-1, 0), [N, N, N], P, reg_width=2 * h)
    X = F.node_coordinates()
    ex = np.stack([P(X, t) for t in F.times], axis=-1)
    return float(np.max(np.abs(F.values - ex))), h, 2 * h


def _recipe_linear_quadratic(p, out: Path, rec: RunRecord):
    rows = []
    for N in p["cells"]:
        with _Stage(f"pde.solve_linear_transmission(N={N})"):
            err, h, w = linear_quadratic_error(N, p["a_plus"], p["a_minus"])
        rows.append((h, w, err, 5 * (h * h + w)))
    rows.sort(reverse=True)
    csv = out / "linear_quadratic.csv"
    _atomic_write(csv, table_csv(["h", "reg_width", "sup_error", "bound"], rows))
    rec.artifacts.append(str(csv))
    orders = [_order(rows[i][0], rows[i][2], rows[i + 1][0], rows[i + 1][2]) for i in range(len(rows) - 1)]
    rec.assertions["sup error <= 5 (h^2 + reg_width)"] = all(r[2] <= r[3] for r in rows)
    rec.assertions["convergence order >= 1.5"] = all(o >= 1.5 for o in orders)
    return {"orders": orders}


def selfsim_evolution_error(prof, cells: int, steps_t: int, reg_width: float, radius: float = 4.0,
                            newton: bool = False) -> float:
    """Sup error on r in [0.05, 2] at t = -1/2 of the radial solve started from the profile at t = -1."""
    F = pde.solve_nonlinear(1.0, prof.eps, [(0.0, radius)], (-1.0, -0.5), [cells, steps_t],
                            initial=lambda X: selfsim.evaluate_u_radial(prof, X[..., 0], -1.0),
                            boundary=lambda X, t: selfsim.evaluate_u_radial(prof, X[..., 0], t),
                            reg_width=reg_width, geometry="radial", n=prof.n, newton=newton)
    r = F.axes[0]
    sel = (r >= 0.05) & (r <= 2.0)
    return float(np.max(np.abs(F.values[sel, -1] - selfsim.evaluate_u_radial(prof, r[sel], -0.5))))


def _recipe_selfsim_evolution(p, out: Path, rec: RunRecord):
    with _Stage("selfsim.match"):
        prof = selfsim.matched_profile(p["n"], p["eps"])
    runs = [(p["cells"], p["steps_t"], p["reg_width"])]
    if p["refine"]:
        runs.append((2 * p["cells"], 2 * p["steps_t"], p["reg_width"] / 2))
    rows = []
    for cells, steps, w in runs:
        with _Stage(f"pde.solve_nonlinear(cells={cells})"):
            err = selfsim_evolution_error(prof, cells, steps, w, p["radius"], bool(p["newton"]))
        rows.append((p["radius"] / cells, w, steps, err))
    csv = out / "selfsim_evolution.csv"
    _atomic_write(csv, table_csv(["h", "reg_width", "steps_t", "sup_error"], rows))
    rec.artifacts.append(str(csv))
    rec.assertions["sup error <= 0.02"] = rows[0][3] <= 0.02
    if len(rows) > 1:
        rec.assertions["halving h and reg_width reduces the error by >= 1.5x"] = rows[0][3] >= 1.5 * rows[1][3]
    return {"alpha": prof.alpha}


def _flat_field(p):
    with _Stage("fbdiag.flat_fixture"):
        return fbdiag.flat_fixture(delta=p["delta"], cells=p["cells"], steps_t=p["steps_t"], a_minus=p["a_minus"])


def _linear_field(cells: int = 40) -> GridField:
    ax = np.linspace(-1, 1, cells + 1)
    return GridField.sample(lambda X, t: X[..., -1], [ax, ax], np.linspace(-1, 0, cells // 2 + 1))


def flatness_center(F: GridField):
    """Free-boundary point of the fixture closest to ``x' = 0`` at the final time."""
    G = fbdiag.extract_free_boundary(F, ParabolicCylinder((0.0,) * F.dim, float(F.times[-1]), 1.0))
    G0 = G.at_time(float(F.times[-1]))
    j = int(np.argmin(np.abs(G0.xprime[:, 0])))
    return (tuple(G0.xprime[j]) + (float(G0.g[j]),), float(F.times[-1]))


FLATNESS_RADII = tuple(0.9 * 0.7 ** np.arange(12))


def _recipe_flatness_decay(p, out: Path, rec: RunRecord):
    F = _flat_field(p)
    with _Stage("fbdiag.improvement_of_flatness_probe"):
        center = flatness_center(F)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = fbdiag.improvement_of_flatness_probe(F, center, FLATNESS_RADII)
            flat = fbdiag.improvement_of_flatness_probe(_linear_field(), ((0.0, 0.0), 0.0), FLATNESS_RADII[:6])
    rows = [(r, d, *nu) for r, d, nu in zip(rep.radii, rep.deviations, rep.normals)]
    csv = out / "flatness_decay.csv"
    _atomic_write(csv, table_csv(["radius", "deviation"] + [f"nu{i + 1}" for i in range(F.dim)], rows))
    rec.artifacts.append(str(csv))
    rec.assertions["fitted exponent > 1.05"] = rep.fitted_exponent > 1.05
    rec.assertions["linear field gives the zero sentinel"] = bool(np.all(flat.deviations == 0))
    return {"exponent": rep.fitted_exponent, "center": center}


def _recipe_harnack_decay(p, out: Path, rec: RunRecord):
    F = _flat_field(p)
    Q = ParabolicCylinder((0.0, 0.0), 0.0, 1.0)
    with _Stage("fbdiag.harnack_decay_probe"):
        rep = fbdiag.harnack_decay_probe(F, Q, p["iterations"], delta=p["delta"])
        flat = fbdiag.harnack_decay_probe(_linear_field(), Q, p["iterations"], delta=p["delta"])
    ratios = np.concatenate([[math.nan], rep.ratios])
    rows = list(zip(range(len(rep.radii)), rep.radii, rep.oscillations, ratios))
    csv = out / "harnack_decay.csv"
    _atomic_write(csv, table_csv(["level", "radius", "oscillation", "ratio_to_previous"], rows))
    rec.artifacts.append(str(csv))
    rec.assertions["oscillation ratios < 1"] = bool(np.all(np.asarray(rep.ratios) < 1))
    rec.assertions["flat field gives zero oscillations"] = bool(np.all(np.asarray(flat.oscillations) == 0))
    return {"ratios": [float(r) for r in rep.ratios]}


def _recipe_barrier_certificate(p, out: Path, rec: RunRecord):
    with _Stage("barriers.subsolution_check"):
        spec = barriers.BarrierSpec.minimal(p["n"], p["a_plus"], p["a_minus"], delta=p["delta"], c0=p["c0"])
        rep = barriers.subsolution_check(spec, grid_resolution=p["grid"])
        viol = barriers.lower_bound_violation(spec.with_K(rep.K_used), rep.c)
        below = barriers.BarrierSpec(p["n"], p["delta"], p["c0"], 0.0, p["a_plus"], p["a_minus"],
                                     enforce_threshold=False)
        bad = barriers.subsolution_check(below, grid_resolution=p["grid"], auto_increase=False)
    rows = [(rep.K_used, rep.max_operator_value, rep.c, rep.log_c, rep.inf_phi),
            (0.0, bad.max_operator_value, bad.c, bad.log_c, bad.inf_phi)]
    csv = out / "barrier_certificate.csv"
    _atomic_write(csv, table_csv(["K", "max_operator_value", "c", "log_c", "inf_phi"], rows))
    rec.artifacts.append(str(csv))
    rec.assertions["max operator value < 0"] = rep.passed and rep.max_operator_value < 0
    rec.assertions["c > 0"] = rep.c > 0
    rec.assertions["lower bound holds"] = viol <= 0
    rec.assertions["K = 0 gives a positive operator value"] = bad.max_operator_value > 0
    return {"K": rep.K_used, "c": rep.c}


def hodograph_refinement(cells, a_plus=1.0, a_minus=0.5, speed=1.0, angle=0.3):
    """Transform the travelling wave on Q_{1/2} at each resolution.

    Returns rows ``(h, round_trip, time_res, grad_res, res_plus, res_minus, jump)``.
    """
    tw = pde.TravelingWave(a_plus, a_minus, speed, (math.sin(angle), math.cos(angle)))
    Q = ParabolicCylinder((0.0, 0.0), 0.0, 0.5)
    rows = []
    for N in cells:
        ax = np.linspace(-0.5, 0.5, N + 1)
        nt = max(N // 4, 2)
        ts = np.linspace(-0.25, 0.0, nt + 1)
        F = GridField.sample(tw, [ax, ax], ts)
        P = hodograph.forward_transform(F, Q, lam=0.1)
        d = hodograph.derivative_identity_check(P)
        t = hodograph.transmission_residual(P, a_plus, a_minus)
        rows.append((1.0 / N, hodograph.round_trip_error(P), d.time, d.gradient,
                     t.residual_plus, t.residual_minus, t.interface_jump))
    return rows


def _recipe_hodograph_roundtrip(p, out: Path, rec: RunRecord):
    with _Stage("hodograph.refinement"):
        rows = hodograph_refinement(sorted(p["cells"]), p["a_plus"], p["a_minus"], p["speed"], p["angle"])
    csv = out / "hodograph_roundtrip.csv"
    _atomic_write(csv, table_csv(["h", "round_trip", "time_identity", "gradient_identity",
                                  "residual_plus", "residual_minus", "interface_jump"], rows))
    rec.artifacts.append(str(csv))
    rec.assertions["round trip <= 10 h^2"] = all(r[1] <= 10 * r[0] ** 2 for r in rows)
    names = ["time identity", "gradient identity", "plus residual", "minus residual", "interface jump"]
    orders = {}
    for k, name in enumerate(names, start=2):
        o = min(_order(rows[i][0], rows[i][k], rows[i + 1][0], rows[i + 1][k]) for i in range(len(rows) - 1))
        orders[name] = o
        rec.assertions[f"{name} order >= 0.9"] = o >= 0.9
    with _Stage("hodograph.coefficient_matrix"):
        I = hodograph.coefficient_matrix([0.0, 1.0]).B
        rec.assertions["B(e_n) = I"] = bool(np.array_equal(I, np.eye(2)))
    return {"orders": orders}


RECIPES: dict[str, Callable] = {
    "figure2": _recipe_figure2,
    "counterexample_sweep": _recipe_counterexample_sweep,
    "linear_quadratic": _recipe_linear_quadratic,
    "selfsim_evolution": _recipe_selfsim_evolution,
    "flatness_decay": _recipe_flatness_decay,
    "harnack_decay": _recipe_harnack_decay,
    "barrier_certificate": _recipe_barrier_certificate,
    "hodograph_roundtrip": _recipe_hodograph_roundtrip,
}


def run_experiment(config: ExperimentConfig) -> RunRecord:
    """Run a recipe, write its CSVs and append the run record to ``runs.jsonl``.

    The run record file is rewritten atomically (read, append, replace).
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rec = RunRecord(config.experiment, dict(sorted(config.parameters.items())))
    t0 = time.perf_counter()
    np.random.seed(config.parameters.get("seed", 0))
    RECIPES[config.experiment](config.parameters, out, rec)
    rec.wall_time = time.perf_counter() - t0
    log = out / "runs.jsonl"
    previous = log.read_text(encoding="utf-8") if log.exists() else ""
    _atomic_write(log, previous + rec.to_json() + "\n")
    return rec


# ---------------------------------------------------------------- subcommands

def _print_values(values) -> None:
    for v in np.atleast_1d(values):
        print(_fmt(v))


def _cmd_specfun(args) -> int:
    tag = specfun.Tag(args.fn)
    if args.action == "eval":
        fn = specfun.kummer_m if tag is specfun.Tag.KUMMER_M else specfun.tricomi_u
        _print_values(fn(args.a, args.b, np.asarray(args.z, dtype=float)))
    else:
        if tag is specfun.Tag.KUMMER_M:
            _print_values(specfun.scaled_zero_m(args.alpha, args.n))
        else:
            if args.eps is None:
                raise ArgumentError("--eps is required for the U branch")
            _print_values(specfun.scaled_zero_u(args.alpha, args.n, args.eps))
    return EXIT_OK


def _write_or_print(text: str, path: str | None) -> None:
    if path:
        _atomic_write(Path(path), text)
    else:
        sys.stdout.write(text)


def _cmd_selfsim(args) -> int:
    if args.action == "match":
        m = selfsim.solve_alpha(args.n, args.eps, tol=args.tol)
        print(f"alpha {_fmt(m.alpha)}")
        print(f"s_eps {_fmt(m.s_eps)}")
        print(f"residual {_fmt(m.residual)}")
        return EXIT_OK
    prof = selfsim.matched_profile(args.n, args.eps)
    if args.action == "profile":
        tab = selfsim.profile_table(prof, args.smax, args.ds)
        _write_or_print(table_csv(["s", "f", "fprime", "branch"], tab), args.out)
        return EXIT_OK
    out = Path(args.out or ".")
    cfg = ExperimentConfig("figure2", {"n": args.n, "eps": args.eps, "points": 601, "seed": 0}, str(out))
    rec = RunRecord("figure2", cfg.parameters)
    _recipe_figure2(cfg.parameters, out, rec)
    for a in rec.artifacts:
        print(a)
    return EXIT_OK if rec.passed else EXIT_FAIL


PDE_KEYS = {
    "dims": Param("int", 2, lambda v: v in (1, 2), "dims ∈ {1, 2}"),
    "geometry": Param("str", "cartesian", lambda v: v in ("cartesian", "radial"), "geometry ∈ {cartesian, radial}"),
    "n": Param("int", 3, _dim, "n ≥ 1"),
    "a_plus": Param("float", 1.0, _positive, "a_plus > 0"),
    "a_minus": Param("float", 0.5, _positive, "a_minus > 0"),
    "reg_width": Param("float", 0.05, _positive, "reg_width > 0"),
    "steps_x": Param("int", 32, lambda v: v >= 4, "steps_x ≥ 4"),
    "steps_t": Param("int", 32, lambda v: v >= 1, "steps_t ≥ 1"),
    "lo": Param("float", -1.0, None),
    "hi": Param("float", 1.0, None),
    "t0": Param("float", -1.0, None),
    "t1": Param("float", 0.0, None),
    "data": Param("str", "", lambda v: v in ("quadratic", "traveling_wave", "selfsim"),
                  "data ∈ {quadratic, traveling_wave, selfsim}"),
    "speed": Param("float", 1.0, _positive, "speed > 0"),
    "angle": Param("float", 0.0, None),
    "eps": EPS,
}


def parse_pde_config(text: str) -> dict:
    """Flat ``key = value`` file for ``pde solve``; errors are collected."""
    errors, vals, lines = [], {}, {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        k, v = (x.strip() for x in s.split("=", 1))
        if k in lines:
            errors.append(f"duplicate key {k!r} on lines {lines[k]} and {lineno}")
            continue
        lines[k] = lineno
        if k not in PDE_KEYS:
            errors.append(f"line {lineno}: unknown key {k!r}")
            continue
        p = PDE_KEYS[k]
        try:
            val = _convert(p.kind, v)
        except ValueError:
            errors.append(f"line {lineno}: cannot parse {k} = {v!r} as {p.kind}")
            continue
        if p.check is not None and not p.check(val):
            errors.append(f"line {lineno}: {k} = {v} out of range: requires {p.requirement}")
            continue
        vals[k] = val
    if "data" not in vals and "data" not in lines:
        errors.append("missing key 'data'")
    if errors:
        raise ConfigError(errors)
    for k, p in PDE_KEYS.items():
        vals.setdefault(k, p.default)
    return vals


def _cmd_pde(args) -> int:
    cfg = parse_pde_config(Path(args.config).read_text(encoding="utf-8"))
    log: list = []
    out = Path(args.out or ".")
    bounds = [(cfg["lo"], cfg["hi"])] * cfg["dims"]
    steps = [cfg["steps_x"]] * cfg["dims"] + [cfg["steps_t"]]
    span = (cfg["t0"], cfg["t1"])
    if args.case == "linear":
        if cfg["data"] != "quadratic" or cfg["dims"] != 2:
            raise ConfigError(["the linear case supports data = quadratic with dims = 2"])
        P, spec = linear_quadratic_fixture(cfg["a_plus"], cfg["a_minus"])
        F = pde.solve_linear_transmission(spec, bounds, span, steps, P, cfg["reg_width"], run_log=log)
        exact = P
    elif cfg["data"] == "selfsim":
        prof = selfsim.matched_profile(cfg["n"], cfg["eps"])
        R = cfg["hi"]
        F = pde.solve_nonlinear(1.0, cfg["eps"], [(0.0, R)], span, [cfg["steps_x"], cfg["steps_t"]],
                                initial=lambda X: selfsim.evaluate_u_radial(prof, X[..., 0], span[0]),
                                boundary=lambda X, t: selfsim.evaluate_u_radial(prof, X[..., 0], t),
                                reg_width=cfg["reg_width"], geometry="radial", n=cfg["n"], run_log=log)

        def exact(X, t):
            return selfsim.evaluate_u_radial(prof, X[..., 0], t)
    elif cfg["data"] == "traveling_wave":
        d = cfg["dims"]
        e = (math.sin(cfg["angle"]), math.cos(cfg["angle"])) if d == 2 else (1.0,)
        tw = pde.TravelingWave(cfg["a_plus"], cfg["a_minus"], cfg["speed"], e)
        F = pde.solve_nonlinear(cfg["a_plus"], cfg["a_minus"], bounds, span, steps,
                                initial=lambda X: tw(X, span[0]), boundary=tw,
                                reg_width=cfg["reg_width"], run_log=log)
        exact = tw
    else:
        raise ConfigError([f"data = {cfg['data']} is not available for the nonlinear case"])
    field_csv = out / "field.csv"
    _atomic_write(field_csv, F.to_csv())
    _atomic_write(out / "run_log.jsonl", "".join(json.dumps(e, sort_keys=True) + "\n" for e in log))
    X = F.node_coordinates()
    err = max(float(np.max(np.abs(F.values[..., k] - exact(X, t)))) for k, t in enumerate(F.times))
    print(f"field {field_csv}")
    print(f"run_log {out / 'run_log.jsonl'}")
    print(f"sup_error_vs_exact {_fmt(err)}")
    return EXIT_OK


def _window(args, dim: int) -> ParabolicCylinder:
    center = tuple(args.center) if args.center else (0.0,) * dim
    return ParabolicCylinder(center, args.t0, args.radius)


def _cmd_fbdiag(args) -> int:
    F = GridField.from_csv(args.field)
    Q = _window(args, F.dim)
    if args.action == "extract":
        G = fbdiag.extract_free_boundary(F, Q)
        hdr = [f"x{i + 1}" for i in range(F.dim - 1)] + ["g", "t"]
        _write_or_print(table_csv(hdr, G.points), args.out)
    elif args.action == "flatness":
        nu, dev = fbdiag.best_plane(F, Q)
        _write_or_print(table_csv(["radius", "deviation"] + [f"nu{i + 1}" for i in range(F.dim)],
                                  [(Q.radius, dev, *nu)]), args.out)
    elif args.action == "improve":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = fbdiag.improvement_of_flatness_probe(F, (Q.center_x, Q.center_t), args.radii or FLATNESS_RADII)
        rows = [(r, d, *nu) for r, d, nu in zip(rep.radii, rep.deviations, rep.normals)]
        _write_or_print(table_csv(["radius", "deviation"] + [f"nu{i + 1}" for i in range(F.dim)], rows), args.out)
        print(f"fitted_exponent {_fmt(rep.fitted_exponent)}", file=sys.stderr)
    elif args.action == "harnack":
        rep = fbdiag.harnack_decay_probe(F, Q, args.iterations, delta=args.delta)
        # ratio to the previous level; level 0 has none
        ratios = np.concatenate([[math.nan], rep.ratios])
        rows = list(zip(range(len(rep.radii)), rep.radii, rep.oscillations, ratios))
        _write_or_print(table_csv(["level", "radius", "oscillation", "ratio_to_previous"], rows), args.out)
    else:
        G = fbdiag.extract_free_boundary(F, Q)
        fit = fbdiag.normal_holder_probe(G, seed=args.seed)
        _write_or_print(table_csv(["exponent", "constant"], sorted(fit.constants.items())), args.out)
        print(f"best_exponent {_fmt(fit.best_exponent)} constant {_fmt(fit.constant)}", file=sys.stderr)
    return EXIT_OK


def _cmd_barrier(args) -> int:
    spec = barriers.BarrierSpec.minimal(args.n, args.a_plus, args.a_minus, delta=args.delta, c0=args.c0)
    if args.K is not None:
        spec = barriers.BarrierSpec(args.n, args.delta, args.c0, args.K, args.a_plus, args.a_minus,
                                    enforce_threshold=False)
    rep = barriers.subsolution_check(spec, grid_resolution=args.grid, auto_increase=args.K is None)
    print(f"K_used {_fmt(rep.K_used)}")
    print(f"max_operator_value {_fmt(rep.max_operator_value)}")
    print(f"passed {rep.passed}")
    print(f"c {_fmt(rep.c)}")
    print(f"log_c {_fmt(rep.log_c)}")
    return EXIT_OK if rep.passed else EXIT_FAIL


def _cmd_hodograph(args) -> int:
    if args.action == "transform":
        F = GridField.from_csv(args.field)
        Q = _window(args, F.dim) if args.radius is not None else None
        P = hodograph.forward_transform(F, Q, args.lam, method=args.method)
        _write_or_print(P.h_field.to_csv(), args.out)
        print(f"round_trip {_fmt(hodograph.round_trip_error(P))}", file=sys.stderr)
        return EXIT_OK
    H = GridField.from_csv(args.patch)
    src = GridField.from_csv(args.source) if args.source else None
    P = hodograph.HodographPatch(src, args.lam, H, (math.nan, math.nan), args.method)
    if src is not None:
        print(f"round_trip {_fmt(hodograph.round_trip_error(P))}")
        d = hodograph.derivative_identity_check(P)
        print(f"time_identity {_fmt(d.time)}")
        print(f"gradient_identity {_fmt(d.gradient)}")
        print(f"reciprocal_identity {_fmt(d.reciprocal)}")
    t = hodograph.transmission_residual(P, args.a_plus, args.a_minus, band=args.band)
    print(f"residual_plus {_fmt(t.residual_plus)}")
    print(f"residual_minus {_fmt(t.residual_minus)}")
    print(f"interface_jump {_fmt(t.interface_jump)}")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = parse_config(Path(args.config).read_text(encoding="utf-8"))
    if args.output_dir:
        cfg = ExperimentConfig(cfg.experiment, cfg.parameters, args.output_dir)
    rec = run_experiment(cfg)
    for name, ok in rec.assertions.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"wall_time {rec.wall_time:.3f}")
    return EXIT_OK if rec.passed else EXIT_FAIL


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fblab", description="Two-phase parabolic free transmission laboratory.")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("specfun", help="confluent hypergeometric functions and zeros")
    ssp = sp.add_subparsers(dest="action", required=True)
    e = ssp.add_parser("eval")
    e.add_argument("--fn", choices=["M", "U"], required=True)
    e.add_argument("--a", type=float, required=True)
    e.add_argument("--b", type=float, required=True)
    e.add_argument("--z", type=float, nargs="+", required=True)
    z = ssp.add_parser("zero")
    z.add_argument("--fn", choices=["M", "U"], required=True)
    z.add_argument("--alpha", type=float, required=True)
    z.add_argument("--n", type=int, required=True)
    z.add_argument("--eps", type=float)
    sp.set_defaults(func=_cmd_specfun)

    sp = sub.add_parser("selfsim", help="self-similar solutions")
    ssp = sp.add_subparsers(dest="action", required=True)
    for name in ("match", "profile", "figure2"):
        q = ssp.add_parser(name)
        q.add_argument("--n", type=int, required=True)
        q.add_argument("--eps", type=float, required=True)
        if name == "match":
            q.add_argument("--tol", type=float, default=1e-12)
        if name == "profile":
            q.add_argument("--smax", type=float, required=True)
            q.add_argument("--ds", type=float, required=True)
        if name != "match":
            q.add_argument("--out")
    sp.set_defaults(func=_cmd_selfsim)

    sp = sub.add_parser("pde", help="transmission solvers")
    ssp = sp.add_subparsers(dest="action", required=True)
    q = ssp.add_parser("solve")
    q.add_argument("--case", choices=["linear", "nonlinear"], required=True)
    q.add_argument("--config", required=True)
    q.add_argument("--out")
    sp.set_defaults(func=_cmd_pde)

    sp = sub.add_parser("fbdiag", help="free-boundary diagnostics")
    sp.add_argument("action", choices=["extract", "flatness", "improve", "harnack", "normals"])
    sp.add_argument("--field", required=True)
    sp.add_argument("--center", type=_floats)
    sp.add_argument("--t0", type=float, default=0.0)
    sp.add_argument("--radius", type=float, default=1.0)
    sp.add_argument("--radii", type=_floats)
    sp.add_argument("--iterations", type=int, default=3)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=_cmd_fbdiag)

    sp = sub.add_parser("barrier", help="barrier subsolution certificate")
    ssp = sp.add_subparsers(dest="action", required=True)
    q = ssp.add_parser("check")
    q.add_argument("--n", type=int, required=True)
    q.add_argument("--a-plus", type=float, default=1.0)
    q.add_argument("--a-minus", type=float, required=True)
    q.add_argument("--delta", type=float, default=0.01)
    q.add_argument("--c0", type=float, default=0.1)
    q.add_argument("--grid", type=int, default=40)
    q.add_argument("--K", type=float, help="fixed K (no automatic increase)")
    sp.set_defaults(func=_cmd_barrier)

    sp = sub.add_parser("hodograph", help="hodograph transform")
    ssp = sp.add_subparsers(dest="action", required=True)
    q = ssp.add_parser("transform")
    q.add_argument("--field", required=True)
    q.add_argument("--lambda", dest="lam", type=float, required=True)
    q.add_argument("--center", type=_floats)
    q.add_argument("--t0", type=float, default=0.0)
    q.add_argument("--radius", type=float)
    q.add_argument("--method", choices=["cubic", "linear"], default="cubic")
    q.add_argument("--out")
    q = ssp.add_parser("verify")
    q.add_argument("--patch", required=True)
    q.add_argument("--source")
    q.add_argument("--lambda", dest="lam", type=float, default=0.1)
    q.add_argument("--method", choices=["cubic", "linear"], default="cubic")
    q.add_argument("--a-plus", type=float, default=1.0)
    q.add_argument("--a-minus", type=float, default=1.0)
    q.add_argument("--band", type=float, default=0.0)
    sp.set_defaults(func=_cmd_hodograph)

    sp = sub.add_parser("run", help="run an experiment recipe from a config file")
    sp.add_argument("config")
    sp.add_argument("--output-dir")
    sp.set_defaults(func=_cmd_run)
    return ap


def main(argv: list[str] | None = None) -> int:
    if _THREADS is not None and not (_THREADS.strip().isdigit() and int(_THREADS) > 0):
        print(f"error: FBLAB_THREADS must be a positive integer, got {_THREADS!r}", file=sys.stderr)
        return EXIT_CONFIG
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArgumentError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FblabError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
