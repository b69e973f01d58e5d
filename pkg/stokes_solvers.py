"""Taylor-Hood and stream-function/vorticity solvers for surface Stokes.

Orders: geometry k, velocity k, Taylor-Hood pressure k-1, stream function
and vorticity k+1, reconstructed pressure k.

Field dump format written by ``write_fields`` (plain text, one block per field):

    # surfstokes fields formulation=<th|sf> order=<k> triangles=<F>
    field <name> <scalar|vector> order=<m> nodes=<N>
    x y z value            (scalar, N lines)
    x y z v1 v2 v3         (vector, N lines)

Coordinates are the positions of the Lagrange nodes on Gamma_h; values are
the DOF coefficients. Numbers are written with repr() so files round-trip.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np
from scipy.sparse import bmat

from errors import InvalidOrder, NotSimplyConnected, SolverError
from fem_spaces import ScalarSpace, VectorSpace, node_positions
from forms_assembly import (
    AssemblyContext, assemble_a_Th, assemble_b, assemble_mass_scalar, assemble_mass_vector,
    assemble_penalty, assemble_stiffness, assemble_stiffness_K, constant_load, load_f, load_g,
    load_pressure_reconstruction, load_velocity_reconstruction,
)
from linear_solve import RESIDUAL_TOL, SolveDiagnostics, build_system, solve
from parametric_surface import CurvedSurface
from runlog import logger

VectorField = Callable[[np.ndarray], np.ndarray]


@dataclass
class SolverOptions:
    kind: str = "direct"
    tol: float = RESIDUAL_TOL
    refine_steps: int = 2

    @classmethod
    def from_config(cls, cfg) -> "SolverOptions":
        return cls(cfg["solver.kind"], cfg["solver.tol"], cfg["solver.refine_steps"])


@dataclass
class TaylorHoodSolution:
    surface: CurvedSurface
    order: int
    velocity_space: VectorSpace
    pressure_space: ScalarSpace
    u: np.ndarray
    p: np.ndarray
    diagnostics: Dict[str, SolveDiagnostics]
    area: float
    operators: Dict[str, object] = field(default_factory=dict)
    formulation: str = "th"

    @property
    def dofs(self) -> int:
        return self.velocity_space.dim + self.pressure_space.dim


@dataclass
class StreamFunctionSolution:
    surface: CurvedSurface
    order: int
    stream_space: ScalarSpace
    psi: np.ndarray
    vorticity: np.ndarray
    velocity_space: VectorSpace
    u: np.ndarray
    pressure_space: ScalarSpace
    p: np.ndarray
    diagnostics: Dict[str, SolveDiagnostics]
    area: float
    operators: Dict[str, object] = field(default_factory=dict)
    formulation: str = "sf"

    @property
    def dofs(self) -> int:
        return 2 * self.stream_space.dim


def _context(surface: CurvedSurface, ctx: Optional[AssemblyContext]) -> AssemblyContext:
    if ctx is None:
        return AssemblyContext(surface)
    if ctx.surface is not surface:
        raise ValueError("Assembly context belongs to a different surface")
    return ctx


def _check_mean(name: str, diagnostics: SolveDiagnostics, area: float, tol: float) -> None:
    for value in diagnostics.constraint_residuals:
        if value > tol * area:
            raise SolverError(f"{name}: mean constraint residual {value:.3e} exceeds {tol * area:.3e}")


def solve_taylor_hood(surface: CurvedSurface, k: int, f: Optional[VectorField],
                      ctx: Optional[AssemblyContext] = None,
                      options: Optional[SolverOptions] = None) -> TaylorHoodSolution:
    if k < 2:
        raise InvalidOrder(f"Taylor-Hood needs k >= 2, got {k}")
    options = options or SolverOptions()
    ctx = _context(surface, ctx)
    velocity = VectorSpace(surface, k)
    pressure = ScalarSpace(surface, k - 1)
    logger.info(f"Taylor-Hood k={k}: {velocity.dim} velocity + {pressure.dim} pressure unknowns, eta={ctx.eta:.4g}")

    a = assemble_a_Th(ctx, velocity) + assemble_penalty(ctx, velocity)
    b = assemble_b(ctx, velocity, pressure)
    m = constant_load(ctx, pressure)
    matrix = bmat([[a, b.T], [b, None]], format="csr")
    rhs = np.concatenate([load_f(ctx, velocity, f), np.zeros(pressure.dim)])
    system = build_system(matrix, rhs, [(velocity.dim, m)])
    x, diagnostics = solve(system, options.kind, options.tol, options.refine_steps)
    area = float(np.sum(m))
    _check_mean("pressure", diagnostics, area, options.tol)

    u = x[:velocity.dim]
    p = x[velocity.dim:velocity.dim + pressure.dim]
    return TaylorHoodSolution(
        surface=surface, order=k, velocity_space=velocity, pressure_space=pressure, u=u, p=p,
        diagnostics={"stokes": diagnostics}, area=area,
        operators={"A": a, "B": b, "m": m, "context": ctx},
    )


def solve_stream_function(surface: CurvedSurface, k: int, f: Optional[VectorField],
                          ctx: Optional[AssemblyContext] = None,
                          options: Optional[SolverOptions] = None) -> StreamFunctionSolution:
    if k < 1:
        raise InvalidOrder(f"Stream-function formulation needs k >= 1, got {k}")
    chi = surface.base.euler_characteristic
    if chi != 2:
        raise NotSimplyConnected(f"Stream function needs a sphere-like surface, Euler characteristic is {chi}")
    options = options or SolverOptions()
    ctx = _context(surface, ctx)
    stream = ScalarSpace(surface, k + 1)
    n = stream.dim
    logger.info(f"Stream function k={k}: 2 x {n} unknowns")

    mass = assemble_mass_scalar(ctx, stream)
    stiffness = assemble_stiffness(ctx, stream)
    stiffness_k = assemble_stiffness_K(ctx, stream)
    m = constant_load(ctx, stream)
    area = float(np.sum(m))
    matrix = bmat([[mass, stiffness], [stiffness, -stiffness_k]], format="csr")
    rhs = np.concatenate([np.zeros(n), load_g(ctx, stream, f)])
    system = build_system(matrix, rhs, [(n, m)])
    x, coupled = solve(system, options.kind, options.tol, options.refine_steps)
    _check_mean("stream function", coupled, area, options.tol)
    vorticity, psi = x[:n], x[n:2 * n]

    velocity = VectorSpace(surface, k)
    velocity_mass = assemble_mass_vector(ctx, velocity)
    rhs_u = load_velocity_reconstruction(ctx, velocity, stream, psi)
    u, velocity_diag = solve(build_system(velocity_mass, rhs_u), options.kind, options.tol, options.refine_steps)

    pressure = ScalarSpace(surface, k)
    laplace_p = assemble_stiffness(ctx, pressure)
    m_p = constant_load(ctx, pressure)
    rhs_p = load_pressure_reconstruction(ctx, pressure, stream, psi, f)
    x_p, pressure_diag = solve(build_system(laplace_p, rhs_p, [(0, m_p)]), options.kind, options.tol,
                               options.refine_steps)
    _check_mean("pressure", pressure_diag, area, options.tol)

    return StreamFunctionSolution(
        surface=surface, order=k, stream_space=stream, psi=psi, vorticity=vorticity,
        velocity_space=velocity, u=u, pressure_space=pressure, p=x_p[:pressure.dim],
        diagnostics={"stream": coupled, "velocity": velocity_diag, "pressure": pressure_diag},
        area=area,
        operators={"M": mass, "L": stiffness, "L_K": stiffness_k, "m": m, "context": ctx},
    )


def divergence_residual(solution: TaylorHoodSolution) -> float:
    """|B u_h| / |u_h|, the weak discrete divergence."""
    norm_u = np.linalg.norm(solution.u)
    if norm_u == 0.0:
        return 0.0
    return float(np.linalg.norm(solution.operators["B"] @ solution.u) / norm_u)


def _write_block(handle, name, space, coeffs):
    positions = node_positions(space)
    kind = "scalar" if space.components == 1 else "vector"
    values = np.asarray(coeffs, dtype=float).reshape(space.n_nodes, space.components)
    handle.write(f"field {name} {kind} order={space.order} nodes={space.n_nodes}\n")
    for point, value in zip(positions, values):
        handle.write(" ".join(repr(float(v)) for v in (*point, *value)) + "\n")


def write_fields(path: str, solution) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# surfstokes fields formulation={solution.formulation} order={solution.order} "
                f"triangles={solution.surface.base.F}\n")
        if solution.formulation == "sf":
            _write_block(f, "psi_h", solution.stream_space, solution.psi)
            _write_block(f, "vorticity_h", solution.stream_space, solution.vorticity)
        _write_block(f, "u_h", solution.velocity_space, solution.u)
        _write_block(f, "p_h", solution.pressure_space, solution.p)


def read_fields(path: str) -> Dict[str, np.ndarray]:
    """Parse a field dump into {name: (N, 3 + C) array}."""
    fields: Dict[str, list] = {}
    current = None
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.startswith("#") or not line.strip():
                continue
            if line.startswith("field "):
                current = line.split()[1]
                fields[current] = []
                continue
            fields[current].append([float(v) for v in line.split()])
    return {name: np.array(rows) for name, rows in fields.items()}
