"""Continuous Lagrange spaces on a curved surface.

ScalarSpace numbers its DOFs like the geometry nodes (vertex, edge, interior).
VectorSpace interleaves three components: DOF 3i + c is component c of node i.
"""
from typing import Callable, Optional

import numpy as np

from errors import InvalidOrder
from parametric_surface import (
    CurvedSurface, QuadPointGeometry, QuadratureRule, evaluate_geometry, global_node_map,
    node_positions as surface_node_positions, quadrature_rule, reference_triangle,
)

__all__ = [
    "ScalarSpace", "VectorSpace", "QuadratureRule", "quadrature_rule", "default_degree",
    "dim", "interpolate", "eval_basis", "evaluate", "node_positions", "integrate", "mean_value",
]


def default_degree(k: int) -> int:
    return 2 * k + 3


class ScalarSpace:
    components = 1

    def __init__(self, surface: CurvedSurface, order: int):
        if order < 1:
            raise InvalidOrder(f"Finite element order must be at least 1, got {order}")
        self.surface = surface
        self.order = order
        self.reference = reference_triangle(order)
        self.node_map, self.n_nodes = global_node_map(surface.base, order)

    @property
    def dim(self) -> int:
        return self.n_nodes

    @property
    def dof_map(self) -> np.ndarray:
        return self.node_map

    def __repr__(self) -> str:
        return f"ScalarSpace(order={self.order}, dim={self.dim})"


class VectorSpace:
    components = 3

    def __init__(self, surface: CurvedSurface, order: int):
        self.scalar = ScalarSpace(surface, order)
        self.surface = surface
        self.order = order
        self.reference = self.scalar.reference
        self.node_map = self.scalar.node_map
        self.n_nodes = self.scalar.n_nodes

    @property
    def dim(self) -> int:
        return 3 * self.scalar.dim

    @property
    def dof_map(self) -> np.ndarray:
        nodes = self.scalar.node_map
        return (3 * nodes[:, :, None] + np.arange(3)[None, None, :]).reshape(len(nodes), -1)

    def __repr__(self) -> str:
        return f"VectorSpace(order={self.order}, dim={self.dim})"


def dim(space) -> int:
    return space.dim


def node_positions(space) -> np.ndarray:
    return surface_node_positions(space.surface, space.order)


def interpolate(space, field: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Nodal interpolant of a batched field (N, 3) -> (N,) or (N, 3)."""
    values = np.asarray(field(node_positions(space)), dtype=float)
    if space.components == 1:
        return values.reshape(space.dim)
    return values.reshape(space.n_nodes, 3).reshape(-1)


def eval_basis(space, triangles, points, geometry: Optional[QuadPointGeometry] = None):
    """Scalar basis values (nq, n) and tangential surface gradients (T, nq, n, 3)."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if geometry is None:
        geometry = evaluate_geometry(space.surface, points, triangles)
    values = space.reference.values(points)
    ref_grad = space.reference.gradients(points)
    grads = np.einsum("tqca,qia->tqic", geometry.pullback, ref_grad)
    grads = np.einsum("tqcd,tqid->tqic", geometry.projector, grads)
    return values, grads


def _coefficients(space, coeffs) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    if space.components == 1:
        return coeffs.reshape(space.dim, 1)
    return coeffs.reshape(space.n_nodes, 3)


def evaluate(space, coeffs, triangles, points, geometry: Optional[QuadPointGeometry] = None):
    """Values (T, nq, C), surface gradients (T, nq, C, 3) and reference
    Hessians (T, nq, C, 2, 2) of a discrete function with C components.

    Gradient rows are tangential but not left-projected.
    """
    triangles = np.atleast_1d(np.asarray(triangles, dtype=np.int64))
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    values, grads = eval_basis(space, triangles, points, geometry)
    local = _coefficients(space, coeffs)[space.node_map[triangles]]
    u = np.einsum("tic,qi->tqc", local, values)
    du = np.einsum("tic,tqid->tqcd", local, grads)
    hess = np.einsum("tic,qiab->tqcab", local, space.reference.hessians(points))
    return u, du, hess


def integrate(space, coeffs, rule: Optional[QuadratureRule] = None) -> np.ndarray:
    """Integral over Gamma_h of every component."""
    rule = rule or quadrature_rule(default_degree(space.order))
    geo = evaluate_geometry(space.surface, rule.points)
    u, _, _ = evaluate(space, coeffs, np.arange(space.surface.base.F), rule.points, geo)
    return np.einsum("tqc,tq,q->c", u, geo.measure, rule.weights)


def mean_value(space, coeffs, rule: Optional[QuadratureRule] = None):
    rule = rule or quadrature_rule(default_degree(space.order))
    geo = evaluate_geometry(space.surface, rule.points)
    total_area = float(np.sum(geo.measure * rule.weights[None, :]))
    mean = integrate(space, coeffs, rule) / total_area
    return float(mean[0]) if space.components == 1 else mean
