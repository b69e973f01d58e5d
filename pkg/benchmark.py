"""Rotational-flow benchmark on the biconcave surface.

A forcing concentrated on a ring around the x axis drives a flow whose
vortex on the x > 0 face sits away from the axis point x_c. The reported
quantity is |x_v - x_c|.
"""
import csv
import io
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np
import jax.numpy as jnp

from errors import DegenerateInput, VortexNotFound
from forms_assembly import AssemblyContext
from levelset_geometry import (
    ExtendedOps, LevelSetField, batched, biconcave, center_point, closest_point, d_presets, resolve_d,
)
from parametric_surface import build_curved, longest_edge, map_points
from results_store import write_text_atomic
from runlog import logger
from stokes_solvers import SolverOptions, solve_stream_function, solve_taylor_hood
from surface_mesh import build_base_mesh

CSV_COLUMNS = ("d", "formulation", "k", "level", "h", "xv_x", "xv_y", "xv_z", "distance")
LATTICE = 15
NEWTON_STEPS = 30
NEWTON_TOL = 1e-12


@dataclass(frozen=True)
class BenchmarkConfig:
    c: float = 0.95
    d: float = 0.96
    R: float = 1.1
    eps: float = 0.2
    formulation: str = "sf"
    order: int = 3
    level: int = 3
    base_level: int = 1
    smooth: bool = True
    degree: Optional[int] = None
    eta: Optional[float] = None

    def __post_init__(self):
        if self.d < 0:
            raise DegenerateInput("d must be non-negative")
        if self.formulation not in ("th", "sf"):
            raise DegenerateInput(f"Unknown formulation {self.formulation!r}")

    @property
    def field(self) -> LevelSetField:
        return biconcave(self.c, self.d)

    @classmethod
    def preset(cls, name: str, **kwargs) -> "BenchmarkConfig":
        c = kwargs.get("c", 0.95)
        return cls(d=d_presets(c)[name], **kwargs)


@dataclass
class VortexResult:
    x_v: np.ndarray
    x_c: np.ndarray
    distance: float
    mirror_distance: float
    h: float
    dofs: int


def _bump(r, eps):
    phi = 0.5 * (1.0 - jnp.tanh(3.0 * r / eps))
    return 36.0 * phi ** 2 * (1.0 - phi) ** 2


def forcing_function(cfg: BenchmarkConfig):
    """Single-point jax callable of the benchmark forcing."""
    ops = ExtendedOps(cfg.field)
    axis = jnp.array([1.0, 0.0, 0.0])

    def force(x):
        ring = _bump(x[0], cfg.eps) * _bump(jnp.sqrt(x[1] ** 2 + x[2] ** 2) - cfg.R, cfg.eps)
        alpha = jnp.arctan2(x[1], x[2])
        return ring * 0.5 * (1.0 + jnp.sin(alpha)) * jnp.cross(ops.normal(x), axis)
    return force


def benchmark_forcing(cfg: BenchmarkConfig, x) -> np.ndarray:
    return batched(forcing_function(cfg))(np.asarray(x, dtype=float)[None, :])[0]


def _lattice(n: int = LATTICE) -> np.ndarray:
    m = n - 1
    return np.array([[i / m, j / m] for j in range(n) for i in range(n - j)])


class _Objective:
    """Objective on one discrete field, with value, reference gradient and
    Hessian; always maximised (sign folds in minimisation)."""

    def __init__(self, space, coeffs, kind: str, sign: float = 1.0):
        self.space = space
        self.coeffs = coeffs
        self.kind = kind
        self.sign = sign

    def __call__(self, triangles, points):
        ref = self.space.reference
        triangles = np.atleast_1d(triangles)
        local = np.asarray(self.coeffs).reshape(self.space.n_nodes, -1)[self.space.node_map[triangles]]
        values = np.einsum("tic,qi->tqc", local, ref.values(points))
        grads = np.einsum("tic,qia->tqca", local, ref.gradients(points))
        hess = np.einsum("tic,qiab->tqcab", local, ref.hessians(points))
        if self.kind == "stream":
            return self.sign * values[..., 0], self.sign * grads[..., 0, :], self.sign * hess[..., 0, :, :]
        speed = np.sum(values ** 2, axis=-1)
        d_speed = 2.0 * np.einsum("tqc,tqca->tqa", values, grads)
        dd_speed = 2.0 * (np.einsum("tqca,tqcb->tqab", grads, grads) + np.einsum("tqc,tqcab->tqab", values, hess))
        return -speed, -d_speed, -dd_speed


def _inside(point, slack=0.0) -> bool:
    return point[0] >= -slack and point[1] >= -slack and point[0] + point[1] <= 1.0 + slack


def _clip(point) -> np.ndarray:
    s, t = max(point[0], 0.0), max(point[1], 0.0)
    total = s + t
    if total > 1.0:
        s, t = s / total, t / total
    return np.array([s, t])


def _newton(objective: _Objective, triangle: int, start: np.ndarray):
    """Damped Newton ascent in reference coordinates, kept inside the triangle.

    Returns (point, value, interior) where interior says the iteration
    converged away from the triangle boundary.
    """
    point = start.copy()
    value, grad, hess = objective(triangle, point[None, :])
    value, grad, hess = value[0, 0], grad[0, 0], hess[0, 0]
    for _ in range(NEWTON_STEPS):
        if np.linalg.norm(grad) < NEWTON_TOL:
            break
        try:
            eigen = np.linalg.eigvalsh(hess)
            step = -np.linalg.solve(hess, grad) if np.all(eigen < 0) else grad / max(np.abs(eigen).max(), 1.0)
        except np.linalg.LinAlgError:
            step = grad
        damping = 1.0
        while damping > 1e-8:
            trial = _clip(point + damping * step)
            trial_value, trial_grad, trial_hess = objective(triangle, trial[None, :])
            if trial_value[0, 0] >= value:
                break
            damping *= 0.5
        else:
            break
        moved = np.linalg.norm(trial - point)
        point, value, grad, hess = trial, trial_value[0, 0], trial_grad[0, 0], trial_hess[0, 0]
        if moved < NEWTON_TOL:
            break
    interior = _inside(point, -1e-9)
    return point, value, interior


def locate_extremum(surface, space, coeffs, kind: str, side: float = 1.0, sign: Optional[float] = None):
    """Vortex position on the face with sign(x) == side.

    kind "stream" maximises sign * psi_h (sign chosen from the dominant
    extremum when not given), kind "speed" minimises |u_h|^2.
    """
    lattice = _lattice()
    triangles = np.arange(surface.base.F)
    positions = map_points(surface, triangles, lattice)
    on_side = side * positions[..., 0] > 0
    if not np.any(on_side):
        raise VortexNotFound("No sample point on the requested face")
    if kind == "stream" and sign is None:
        values = _Objective(space, coeffs, kind)(triangles, lattice)[0]
        sign = 1.0 if values[on_side].max() >= -values[on_side].min() else -1.0
    objective = _Objective(space, coeffs, kind, sign if sign is not None else 1.0)
    values = objective(triangles, lattice)[0]
    masked = np.where(on_side, values, -np.inf)
    best = np.unravel_index(np.argmax(masked), masked.shape)
    best_triangle = int(best[0])

    candidates = [best_triangle] + [int(t) for t in surface.base.triangle_neighbors(best_triangle)]
    found = []
    for tri in candidates:
        local = np.where(on_side[tri], values[tri], -np.inf)
        if not np.isfinite(local.max()):
            continue
        point, value, interior = _newton(objective, tri, lattice[int(np.argmax(local))])
        x = map_points(surface, [tri], point[None, :])[0, 0]
        if side * x[0] > 0:
            found.append((value, interior, tri, point, x))
    if not found:
        raise VortexNotFound("Local optimisation left the requested face")
    found.sort(key=lambda item: (item[1], item[0]), reverse=True)
    value, interior, tri, point, x = found[0]
    if not interior:
        logger.warning("Vortex search ended on an element boundary, using the best sample instead")
        x = positions[best]
    if not np.all(np.isfinite(x)):
        raise VortexNotFound("Vortex position is not finite")
    return x, sign


def run_benchmark(cfg: BenchmarkConfig, options: Optional[SolverOptions] = None) -> VortexResult:
    field = cfg.field
    mesh = build_base_mesh(field, cfg.level, cfg.base_level, cfg.smooth)
    surface = build_curved(mesh, field, cfg.order)
    ctx = AssemblyContext(surface, degree=cfg.degree, eta=cfg.eta)
    force = batched(forcing_function(cfg))
    if cfg.formulation == "sf":
        solution = solve_stream_function(surface, cfg.order, force, ctx, options)
        x_v, sign = locate_extremum(surface, solution.stream_space, solution.psi, "stream", 1.0)
        x_m, _ = locate_extremum(surface, solution.stream_space, solution.psi, "stream", -1.0, -sign)
    else:
        solution = solve_taylor_hood(surface, cfg.order, force, ctx, options)
        x_v, _ = locate_extremum(surface, solution.velocity_space, solution.u, "speed", 1.0)
        x_m, _ = locate_extremum(surface, solution.velocity_space, solution.u, "speed", -1.0)
    x_v = closest_point(field, x_v)
    x_m = closest_point(field, x_m)
    x_c = center_point(field)
    distance = float(np.linalg.norm(x_v - x_c))
    mirror = float(np.linalg.norm(x_m - x_c * np.array([-1.0, 1.0, 1.0])))
    logger.info(f"Benchmark d={cfg.d:.6g} {cfg.formulation} k={cfg.order} level={cfg.level}: "
                f"distance {distance:.6f} (x<0 face {mirror:.6f})")
    return VortexResult(x_v=x_v, x_c=x_c, distance=distance, mirror_distance=mirror,
                        h=longest_edge(surface), dofs=solution.dofs)


def run_all(template: BenchmarkConfig, presets: Sequence[str] = ("0", "d0", "0.8", "0.96"),
            options: Optional[SolverOptions] = None) -> List[dict]:
    """One result row per d; entries are preset names or numbers."""
    rows = []
    for name in presets:
        cfg = replace(template, d=resolve_d(name, template.c))
        row = result_row(cfg, run_benchmark(cfg, options))
        row["preset"] = str(name)
        rows.append(row)
    return rows


def result_row(cfg: BenchmarkConfig, result: VortexResult) -> dict:
    return {
        "d": cfg.d, "formulation": cfg.formulation, "k": cfg.order, "level": cfg.level, "h": result.h,
        "xv_x": float(result.x_v[0]), "xv_y": float(result.x_v[1]), "xv_z": float(result.x_v[2]),
        "distance": result.distance, "mirror_distance": result.mirror_distance,
    }


def format_csv(rows: Sequence[dict]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in CSV_COLUMNS])
    return buffer.getvalue()


def write_csv(path: str, rows: Sequence[dict]) -> None:
    write_text_atomic(path, format_csv(rows), ".vortex.")


def reference_distances() -> dict:
    """Reference SFEM vortex distances at k=3, keyed by d preset."""
    return {"0": 0.255577, "d0": 0.308290, "0.8": 0.295497, "0.96": 0.245279}
