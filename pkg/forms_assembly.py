"""Sparse assembly of the discrete bilinear forms and load vectors.

Element contributions are computed for chunks of triangles with vectorised
quadrature, then merged in ascending triangle order, so the assembled
matrices are identical for any worker count.

Orientation: ``assemble_b`` returns rows indexed by the pressure space and
columns by the velocity space, b(u, q) = q^T B u.
"""
from concurrent.futures import ThreadPoolExecutor
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy import sparse

from config import thread_count
from fem_spaces import ScalarSpace, VectorSpace, default_degree, eval_basis, evaluate
from parametric_surface import CurvedSurface, QuadPointGeometry, evaluate_geometry, longest_edge, quadrature_rule
from runlog import logger

CHUNK_SIZE = 128

VectorField = Callable[[np.ndarray], np.ndarray]


class AssemblyContext:
    def __init__(self, surface: CurvedSurface, degree: Optional[int] = None, eta: Optional[float] = None,
                 threads: Optional[int] = None, chunk_size: int = CHUNK_SIZE):
        self.surface = surface
        self.rule = quadrature_rule(default_degree(surface.order) if degree is None else int(degree))
        self.h = longest_edge(surface)
        self.eta = float(eta) if eta is not None else self.h ** -2
        self.threads = thread_count() if threads is None else max(1, int(threads))
        self.chunk_size = int(chunk_size)

    @classmethod
    def from_config(cls, surface: CurvedSurface, cfg) -> "AssemblyContext":
        return cls(surface, degree=cfg["quadrature.degree"], eta=cfg["penalty.eta_override"])

    @cached_property
    def geometry(self) -> QuadPointGeometry:
        return evaluate_geometry(self.surface, self.rule.points)

    @property
    def area(self) -> float:
        return float(np.sum(self.geometry.measure * self.rule.weights[None, :]))

    def chunks(self):
        n = self.surface.base.F
        return [np.arange(start, min(start + self.chunk_size, n)) for start in range(0, n, self.chunk_size)]

    def geometry_chunk(self, triangles) -> QuadPointGeometry:
        return QuadPointGeometry(**{name: value[triangles] for name, value in vars(self.geometry).items()})

    def weights(self, geo: QuadPointGeometry) -> np.ndarray:
        """Quadrature weight times surface measure, (T, nq)."""
        return geo.measure * self.rule.weights[None, :]

    def map(self, fn, items):
        if self.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(fn, items))
        return [fn(item) for item in items]


def merge_triplets(rows, cols, values, shape) -> sparse.csr_matrix:
    """Sum duplicate entries in input order and build a CSR matrix."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    if len(values) == 0:
        return sparse.csr_matrix(shape)
    key = rows * shape[1] + cols
    order = np.argsort(key, kind="stable")
    key = key[order]
    starts = np.flatnonzero(np.concatenate([[True], key[1:] != key[:-1]]))
    sums = np.add.reduceat(values[order], starts)
    unique = key[starts]
    return sparse.csr_matrix((sums, (unique // shape[1], unique % shape[1])), shape=shape)


def assemble_local(ctx: AssemblyContext, row_map: np.ndarray, col_map: np.ndarray, shape, local_fn,
                   symmetric: bool = False) -> sparse.csr_matrix:
    """Generic element loop; ``local_fn(triangles, geometry)`` returns (T, nr, nc)."""
    def run(triangles):
        local = local_fn(triangles, ctx.geometry_chunk(triangles))
        if symmetric:
            local = 0.5 * (local + np.swapaxes(local, 1, 2))
        rows = np.broadcast_to(row_map[triangles][:, :, None], local.shape)
        cols = np.broadcast_to(col_map[triangles][:, None, :], local.shape)
        return rows.reshape(-1), cols.reshape(-1), local.reshape(-1)

    parts = ctx.map(run, ctx.chunks())
    return merge_triplets(
        np.concatenate([p[0] for p in parts]),
        np.concatenate([p[1] for p in parts]),
        np.concatenate([p[2] for p in parts]),
        shape,
    )


def assemble_vector(ctx: AssemblyContext, dof_map: np.ndarray, size: int, local_fn) -> np.ndarray:
    def run(triangles):
        return dof_map[triangles].reshape(-1), local_fn(triangles, ctx.geometry_chunk(triangles)).reshape(-1)

    parts = ctx.map(run, ctx.chunks())
    index = np.concatenate([p[0] for p in parts])
    values = np.concatenate([p[1] for p in parts])
    return np.bincount(index, weights=values, minlength=size)


def _basis(ctx: AssemblyContext, space, triangles, geo):
    return eval_basis(space, triangles, ctx.rule.points, geo)


def assemble_mass_scalar(ctx: AssemblyContext, space: ScalarSpace) -> sparse.csr_matrix:
    def local(tri, geo):
        phi, _ = _basis(ctx, space, tri, geo)
        return np.einsum("tq,qi,qj->tij", ctx.weights(geo), phi, phi)
    return assemble_local(ctx, space.dof_map, space.dof_map, (space.dim, space.dim), local, symmetric=True)


def assemble_mass_vector(ctx: AssemblyContext, space: VectorSpace) -> sparse.csr_matrix:
    eye = np.eye(3)

    def local(tri, geo):
        phi, _ = _basis(ctx, space, tri, geo)
        scalar = np.einsum("tq,qa,qb->tab", ctx.weights(geo), phi, phi)
        return np.einsum("tab,cd->tacbd", scalar, eye).reshape(len(tri), 3 * len(phi[0]), -1)
    return assemble_local(ctx, space.dof_map, space.dof_map, (space.dim, space.dim), local, symmetric=True)


def assemble_stiffness(ctx: AssemblyContext, space: ScalarSpace) -> sparse.csr_matrix:
    def local(tri, geo):
        _, grads = _basis(ctx, space, tri, geo)
        return np.einsum("tq,tqic,tqjc->tij", ctx.weights(geo), grads, grads)
    return assemble_local(ctx, space.dof_map, space.dof_map, (space.dim, space.dim), local, symmetric=True)


def assemble_stiffness_K(ctx: AssemblyContext, space: ScalarSpace) -> sparse.csr_matrix:
    """2 * int (1 - K~_h) grad xi . grad eta."""
    def local(tri, geo):
        _, grads = _basis(ctx, space, tri, geo)
        weight = 2.0 * (1.0 - geo.gauss_improved) * ctx.weights(geo)
        return np.einsum("tq,tqic,tqjc->tij", weight, grads, grads)
    return assemble_local(ctx, space.dof_map, space.dof_map, (space.dim, space.dim), local, symmetric=True)


def deformation_basis(phi, grads, geo: QuadPointGeometry) -> np.ndarray:
    """E_{T,h} of every vector basis function u = phi_a e_c: (T, nq, 3n, 3, 3).

    grad u = (P_h e_c) grad(phi_a)^T, E_h its symmetric part, minus
    (u . n_h) H_h.
    """
    t, nq, n = grads.shape[:3]
    grad = np.einsum("tqic,tqaj->tqacij", geo.projector, grads)
    sym = 0.5 * (grad + np.swapaxes(grad, -1, -2))
    normal_part = phi[None, :, :, None, None, None] * geo.normal[:, :, None, :, None, None] \
        * geo.weingarten[:, :, None, None, :, :]
    return (sym - normal_part).reshape(t, nq, 3 * n, 3, 3)


def assemble_a_Th(ctx: AssemblyContext, space: VectorSpace) -> sparse.csr_matrix:
    """int E_{T,h}(u):E_{T,h}(v) + P_h u . P_h v."""
    def local(tri, geo):
        phi, grads = _basis(ctx, space, tri, geo)
        w = ctx.weights(geo)
        strain = deformation_basis(phi, grads, geo)
        energy = np.einsum("tq,tqxij,tqyij->txy", w, strain, strain)
        mass = np.einsum("tq,qa,qb,tqcd->tacbd", w, phi, phi, geo.projector).reshape(energy.shape)
        return energy + mass
    return assemble_local(ctx, space.dof_map, space.dof_map, (space.dim, space.dim), local, symmetric=True)


def assemble_penalty(ctx: AssemblyContext, space: VectorSpace) -> sparse.csr_matrix:
    """eta int (u . n~_h)(v . n~_h)."""
    def local(tri, geo):
        phi, _ = _basis(ctx, space, tri, geo)
        nt = geo.normal_improved
        block = np.einsum("tq,qa,qb,tqc,tqd->tacbd", ctx.eta * ctx.weights(geo), phi, phi, nt, nt)
        return block.reshape(len(tri), 3 * phi.shape[1], -1)
    return assemble_local(ctx, space.dof_map, space.dof_map, (space.dim, space.dim), local, symmetric=True)


def assemble_b(ctx: AssemblyContext, velocity: VectorSpace, pressure: ScalarSpace) -> sparse.csr_matrix:
    """int u . grad_{Gamma_h} q, rows pressure, columns velocity."""
    def local(tri, geo):
        phi_u, _ = _basis(ctx, velocity, tri, geo)
        _, grad_q = _basis(ctx, pressure, tri, geo)
        block = np.einsum("tq,qa,tqic->tiac", ctx.weights(geo), phi_u, grad_q)
        return block.reshape(len(tri), grad_q.shape[2], -1)
    return assemble_local(ctx, pressure.dof_map, velocity.dof_map, (pressure.dim, velocity.dim), local)


def constant_load(ctx: AssemblyContext, space: ScalarSpace) -> np.ndarray:
    """int phi_i: the mean-value row of the space."""
    def local(tri, geo):
        phi, _ = _basis(ctx, space, tri, geo)
        return np.einsum("tq,qi->ti", ctx.weights(geo), phi)
    return assemble_vector(ctx, space.dof_map, space.dim, local)


def _field_at(field: Optional[VectorField], geo: QuadPointGeometry) -> np.ndarray:
    if field is None:
        return np.zeros(geo.point.shape)
    return np.asarray(field(geo.point.reshape(-1, 3)), dtype=float).reshape(geo.point.shape)


def load_f(ctx: AssemblyContext, space: VectorSpace, f: Optional[VectorField]) -> np.ndarray:
    def local(tri, geo):
        phi, _ = _basis(ctx, space, tri, geo)
        return np.einsum("tq,qa,tqc->tac", ctx.weights(geo), phi, _field_at(f, geo))
    return assemble_vector(ctx, space.dof_map, space.dim, local)


def load_g(ctx: AssemblyContext, space: ScalarSpace, f: Optional[VectorField]) -> np.ndarray:
    """-2 int f . (n~_h x grad xi)."""
    def local(tri, geo):
        _, grads = _basis(ctx, space, tri, geo)
        curl = np.cross(geo.normal_improved[:, :, None, :], grads)
        return -2.0 * np.einsum("tq,tqic,tqc->ti", ctx.weights(geo), curl, _field_at(f, geo))
    return assemble_vector(ctx, space.dof_map, space.dim, local)


def _stream_gradient(ctx: AssemblyContext, stream: ScalarSpace, psi, tri, geo) -> np.ndarray:
    _, du, _ = evaluate(stream, psi, tri, ctx.rule.points, geo)
    return du[:, :, 0, :]


def load_velocity_reconstruction(ctx: AssemblyContext, space: VectorSpace, stream: ScalarSpace, psi) -> np.ndarray:
    """int (n~_h x grad psi_h) . v."""
    def local(tri, geo):
        phi, _ = _basis(ctx, space, tri, geo)
        curl = np.cross(geo.normal_improved, _stream_gradient(ctx, stream, psi, tri, geo))
        return np.einsum("tq,qa,tqc->tac", ctx.weights(geo), phi, curl)
    return assemble_vector(ctx, space.dof_map, space.dim, local)


def load_pressure_reconstruction(ctx: AssemblyContext, space: ScalarSpace, stream: ScalarSpace, psi,
                                 f: Optional[VectorField]) -> np.ndarray:
    """int (K~_h n~_h x grad psi_h + f) . grad xi."""
    def local(tri, geo):
        _, grads = _basis(ctx, space, tri, geo)
        curl = np.cross(geo.normal_improved, _stream_gradient(ctx, stream, psi, tri, geo))
        source = geo.gauss_improved[:, :, None] * curl + _field_at(f, geo)
        return np.einsum("tq,tqic,tqc->ti", ctx.weights(geo), grads, source)
    return assemble_vector(ctx, space.dof_map, space.dim, local)


def is_symmetric(matrix, tol: float = 1e-10) -> bool:
    diff = abs(matrix - matrix.T)
    if diff.nnz == 0:
        return True
    worst = float(diff.max())
    if worst > tol:
        logger.warning(f"Matrix asymmetry {worst:.3e} exceeds {tol:.1e}")
    return worst <= tol
