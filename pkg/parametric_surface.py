"""Order-k isoparametric surfaces built on a flat triangulation.

Reference triangle: vertices (0,0), (1,0), (0,1) in coordinates (s, t).
Lagrange nodes of order m are ordered vertices first, then the m-1 nodes of
each local edge (0,1), (1,2), (2,0) walking from the lower to the higher local
vertex, then interior nodes row by row.

Global node numbering on a mesh with V vertices, E edges:
vertex v -> v, node j of edge e -> V + e(m-1) + j (counted from the edge's
lower global vertex), interior node s of triangle f -> V + E(m-1) + f*ni + s.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi

from errors import DegenerateJacobian, InvalidOrder
from levelset_geometry import LevelSetField, closest_point_batch, eval_batch, frame_batch
from runlog import logger
from surface_mesh import LOCAL_EDGES, LinearSurfaceMesh, stats

MEASURE_FLOOR = 1e-14
REFERENCE_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def lagrange_nodes(m: int) -> np.ndarray:
    if m < 1:
        raise InvalidOrder(f"Lagrange order must be at least 1, got {m}")
    nodes = [p for p in REFERENCE_VERTICES]
    for a, b in LOCAL_EDGES:
        for j in range(1, m):
            nodes.append(REFERENCE_VERTICES[a] + j / m * (REFERENCE_VERTICES[b] - REFERENCE_VERTICES[a]))
    for j in range(1, m - 1):
        for i in range(1, m - j):
            nodes.append(np.array([i / m, j / m]))
    return np.array(nodes)


def _monomial(s, t, a, b, da=0, db=0):
    if a < da or b < db:
        return np.zeros_like(s)
    ca = np.prod(np.arange(a - da + 1, a + 1)) if da else 1
    cb = np.prod(np.arange(b - db + 1, b + 1)) if db else 1
    return ca * cb * s ** (a - da) * t ** (b - db)


class ReferenceTriangle:
    """Nodal Lagrange basis of order m with first and second derivatives."""

    def __init__(self, order: int):
        self.order = order
        self.nodes = lagrange_nodes(order)
        self.exponents = [(total - b, b) for total in range(order + 1) for b in range(total + 1)]
        vandermonde = self._monomials(self.nodes)
        self.coefficients = np.linalg.inv(vandermonde)

    @property
    def size(self) -> int:
        return len(self.nodes)

    def _monomials(self, points, da=0, db=0):
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        s, t = points[:, 0], points[:, 1]
        return np.stack([_monomial(s, t, a, b, da, db) for a, b in self.exponents], axis=1)

    def values(self, points) -> np.ndarray:
        """(nq, n) basis values."""
        return self._monomials(points) @ self.coefficients

    def gradients(self, points) -> np.ndarray:
        """(nq, n, 2) derivatives with respect to (s, t)."""
        ds = self._monomials(points, 1, 0) @ self.coefficients
        dt = self._monomials(points, 0, 1) @ self.coefficients
        return np.stack([ds, dt], axis=2)

    def hessians(self, points) -> np.ndarray:
        """(nq, n, 2, 2) second derivatives with respect to (s, t)."""
        ss = self._monomials(points, 2, 0) @ self.coefficients
        st = self._monomials(points, 1, 1) @ self.coefficients
        tt = self._monomials(points, 0, 2) @ self.coefficients
        return np.stack([np.stack([ss, st], axis=2), np.stack([st, tt], axis=2)], axis=3)


@lru_cache(maxsize=None)
def reference_triangle(order: int) -> ReferenceTriangle:
    return ReferenceTriangle(order)


class QuadratureRule(NamedTuple):
    points: np.ndarray
    weights: np.ndarray
    degree: int


@lru_cache(maxsize=None)
def quadrature_rule(degree: int) -> QuadratureRule:
    """Collapsed Gauss rule on the reference triangle, exact to ``degree``.

    Gauss-Legendre along s/(1-t) and Gauss-Jacobi (weight 1-t) along t.
    """
    if degree < 0:
        raise ValueError("Minimum degree is 0.")
    n = degree // 2 + 1
    xg, wg = leggauss(n)
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    x, wx = 0.5 * (xg + 1.0), 0.5 * wg
    y, wy = 0.5 * (xj + 1.0), 0.25 * wj
    s = np.outer(x, 1.0 - y).reshape(-1)
    t = np.tile(y, n)
    weights = np.outer(wx, wy).reshape(-1)
    points = np.column_stack([s, t])
    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(points, weights, degree)


def global_node_map(mesh: LinearSurfaceMesh, m: int):
    """(F, n_m) global node indices and the number of global nodes."""
    n_edge = m - 1
    n_interior = (m - 1) * (m - 2) // 2
    tri = mesh.triangles
    columns = [tri[:, 0], tri[:, 1], tri[:, 2]]
    for e, (a, b) in enumerate(LOCAL_EDGES):
        forward = tri[:, a] < tri[:, b]
        base = mesh.V + mesh.triangle_edges[:, e] * n_edge
        for j in range(1, m):
            columns.append(base + np.where(forward, j - 1, m - 1 - j))
    offset = mesh.V + mesh.E * n_edge
    for s in range(n_interior):
        columns.append(offset + np.arange(mesh.F) * n_interior + s)
    count = mesh.V + mesh.E * n_edge + mesh.F * n_interior
    return np.stack(columns, axis=1).astype(np.int64), count


def _affine_points(mesh: LinearSurfaceMesh, m: int) -> np.ndarray:
    """Positions of the order-m nodes on the flat triangles, globally numbered."""
    node_map, count = global_node_map(mesh, m)
    ref = lagrange_nodes(m)
    p = mesh.vertices[mesh.triangles]
    local = p[:, None, 0] + ref[None, :, 0, None] * (p[:, None, 1] - p[:, None, 0]) \
        + ref[None, :, 1, None] * (p[:, None, 2] - p[:, None, 0])
    points = np.zeros((count, 3))
    points[node_map.reshape(-1)] = local.reshape(-1, 3)
    points[:mesh.V] = mesh.vertices
    # edge nodes from the lower global vertex so both neighbours agree bitwise
    e = mesh.edges
    for j in range(m - 1):
        frac = (j + 1) / m
        points[mesh.V + np.arange(mesh.E) * (m - 1) + j] = \
            mesh.vertices[e[:, 0]] + frac * (mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]])
    return points


@dataclass
class QuadPointGeometry:
    """Geometric quantities of Gamma_h. Arrays carry leading (triangle, point)
    axes when evaluated in batch, none for a single point."""
    point: np.ndarray
    jacobian: np.ndarray
    measure: np.ndarray
    normal: np.ndarray
    projector: np.ndarray
    weingarten: np.ndarray
    normal_improved: np.ndarray
    projector_improved: np.ndarray
    weingarten_improved: np.ndarray
    gauss_improved: np.ndarray
    pullback: np.ndarray


class CurvedSurface:
    def __init__(self, base: LinearSurfaceMesh, field: LevelSetField, order: int,
                 nodes: np.ndarray, node_normals: np.ndarray):
        self.base = base
        self.field = field
        self.order = order
        self.nodes = nodes
        self.node_normals = node_normals
        self.node_map, _ = global_node_map(base, order)
        self.reference = reference_triangle(order)
        self.coefficients = nodes[self.node_map]
        self.normal_coefficients = node_normals[self.node_map]

    @property
    def n_triangles(self) -> int:
        return self.base.F

    def __repr__(self) -> str:
        return f"CurvedSurface(order={self.order}, F={self.base.F}, field={self.field.kind})"


def build_curved(mesh: LinearSurfaceMesh, field: LevelSetField, k: int) -> CurvedSurface:
    if k < 1:
        raise InvalidOrder(f"Geometry order must be at least 1, got {k}")
    nodes = _affine_points(mesh, k)
    if k > 1:
        nodes[mesh.V:] = closest_point_batch(field, nodes[mesh.V:])
    normals, _, _, _, _ = frame_batch(field, nodes)
    logger.debug(f"Curved surface of order {k} with {len(nodes)} geometry nodes")
    return CurvedSurface(mesh, field, k, nodes, normals)


def map_points(surface: CurvedSurface, triangles, points) -> np.ndarray:
    """pi_h at reference points: (T, nq, 3)."""
    triangles = np.atleast_1d(np.asarray(triangles, dtype=np.int64))
    phi = surface.reference.values(points)
    return np.einsum("tic,qi->tqc", surface.coefficients[triangles], phi)


def node_positions(surface: CurvedSurface, m: int) -> np.ndarray:
    """Physical positions on Gamma_h of the globally numbered order-m nodes."""
    node_map, count = global_node_map(surface.base, m)
    local = map_points(surface, np.arange(surface.base.F), lagrange_nodes(m))
    positions = np.zeros((count, 3))
    positions[node_map.reshape(-1)] = local.reshape(-1, 3)
    return positions


def evaluate_geometry(surface: CurvedSurface, points, triangles: Optional[np.ndarray] = None) -> QuadPointGeometry:
    """All geometric fields at reference ``points`` (nq, 2) of ``triangles``."""
    if triangles is None:
        triangles = np.arange(surface.base.F)
    triangles = np.atleast_1d(np.asarray(triangles, dtype=np.int64))
    ref = surface.reference
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    phi, dphi, ddphi = ref.values(points), ref.gradients(points), ref.hessians(points)
    c = surface.coefficients[triangles]
    x = np.einsum("tic,qi->tqc", c, phi)
    jac = np.einsum("tic,qia->tqca", c, dphi)
    second = np.einsum("tic,qiab->tqcab", c, ddphi)

    big_n = np.cross(jac[..., 0], jac[..., 1])
    measure = np.linalg.norm(big_n, axis=-1)
    if np.any(measure < MEASURE_FLOOR):
        raise DegenerateJacobian(f"Surface measure {measure.min():.3e} below {MEASURE_FLOOR}")
    normal = big_n / measure[..., None]
    eye = np.eye(3)
    proj = eye - normal[..., :, None] * normal[..., None, :]
    gram = np.einsum("tqca,tqcb->tqab", jac, jac)
    pullback = np.einsum("tqca,tqab->tqcb", jac, np.linalg.inv(gram))

    # d N / d(s,t) by the product rule on the column cross product
    dn = np.stack([
        np.cross(second[..., 0, a], jac[..., 1]) + np.cross(jac[..., 0], second[..., 1, a])
        for a in range(2)
    ], axis=-1)
    weingarten = np.einsum("tqij,tqja,tqka->tqik", proj, dn, pullback) / measure[..., None, None]
    weingarten = 0.5 * (weingarten + np.swapaxes(weingarten, -1, -2))

    nc = surface.normal_coefficients[triangles]
    big_nt = np.einsum("tic,qi->tqc", nc, phi)
    norm_t = np.linalg.norm(big_nt, axis=-1)
    normal_t = big_nt / norm_t[..., None]
    proj_t = eye - normal_t[..., :, None] * normal_t[..., None, :]
    dnt = np.einsum("tic,qia->tqca", nc, dphi)
    grad_nt = np.einsum("tqca,tqka->tqck", dnt, pullback) / norm_t[..., None, None]
    # left P~ turns grad N~ / |N~| into grad(N~ / |N~|); the right P~ keeps the tangential part
    weingarten_t = np.einsum("tqij,tqjk,tqkl->tqil", proj_t, grad_nt, proj_t)
    trace_t = np.trace(weingarten_t, axis1=-2, axis2=-1)
    gauss_t = 0.5 * (trace_t ** 2 - np.einsum("tqij,tqji->tq", weingarten_t, weingarten_t))

    return QuadPointGeometry(
        point=x, jacobian=jac, measure=measure, normal=normal, projector=proj,
        weingarten=weingarten, normal_improved=normal_t, projector_improved=proj_t,
        weingarten_improved=weingarten_t, gauss_improved=gauss_t, pullback=pullback,
    )


def geometry_at(surface: CurvedSurface, triangle: int, point) -> QuadPointGeometry:
    geo = evaluate_geometry(surface, np.asarray(point, dtype=float).reshape(1, 2), np.array([triangle]))
    return QuadPointGeometry(**{name: value[0, 0] for name, value in vars(geo).items()})


def longest_edge(surface: CurvedSurface) -> float:
    return stats(surface.base).h_max


def area(surface: CurvedSurface, degree: Optional[int] = None) -> float:
    rule = quadrature_rule(degree if degree is not None else 2 * surface.order + 3)
    geo = evaluate_geometry(surface, rule.points)
    return float(np.sum(geo.measure * rule.weights[None, :]))


def geometry_errors(surface: CurvedSurface, degree: Optional[int] = None) -> dict:
    """L-infinity errors at quadrature points against the exact surface at pi(x)."""
    rule = quadrature_rule(degree if degree is not None else 2 * surface.order + 3)
    geo = evaluate_geometry(surface, rule.points)
    x = geo.point.reshape(-1, 3)
    y = closest_point_batch(surface.field, x)
    n, _, weingarten, gauss, _ = frame_batch(surface.field, y)
    shape = geo.normal.shape[:2]
    n = n.reshape(shape + (3,))
    weingarten = weingarten.reshape(shape + (3, 3))
    gauss = gauss.reshape(shape)
    return {
        "h": longest_edge(surface),
        "normal": float(np.max(np.linalg.norm(geo.normal - n, axis=-1))),
        "normal_improved": float(np.max(np.linalg.norm(geo.normal_improved - n, axis=-1))),
        "weingarten": float(np.max(np.linalg.norm(geo.weingarten - weingarten, axis=(-2, -1)))),
        "weingarten_improved": float(np.max(np.linalg.norm(geo.weingarten_improved - weingarten, axis=(-2, -1)))),
        "gauss_improved": float(np.max(np.abs(geo.gauss_improved - gauss))),
        "levelset": float(np.max(np.abs(eval_batch(surface.field, x)[0]))),
        "distance": float(np.max(np.linalg.norm(y - x, axis=-1))),
    }
