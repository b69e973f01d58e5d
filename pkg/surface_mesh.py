"""Piecewise-flat closed triangulations of level-set surfaces.

Meshes are immutable: every operation returns a new LinearSurfaceMesh.
Triangles are counterclockwise seen from outside (the side where phi > 0).

OFF files are ASCII:

    OFF
    V F 0
    x y z          (V lines)
    3 i j k        (F lines)

Blank lines and ``#`` comments are ignored on import.
"""
import math
from functools import cached_property
from typing import NamedTuple, Optional

import numpy as np
from scipy import sparse

from errors import DegenerateInput, DegenerateMesh, ManifoldError, ParseError
from levelset_geometry import LevelSetField, axial_profile, closest_point_batch, eval_batch
from runlog import logger

DEGENERATE_AREA = 1e-14
SMOOTH_ANGLE = 10.0
SMOOTH_SWEEPS = 5
BASE_LEVEL = 3

_GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0
ICOSAHEDRON_VERTICES = np.array([
    [-1.0, _GOLDEN, 0.0],
    [1.0, _GOLDEN, 0.0],
    [-1.0, -_GOLDEN, 0.0],
    [1.0, -_GOLDEN, 0.0],
    [0.0, -1.0, _GOLDEN],
    [0.0, 1.0, _GOLDEN],
    [0.0, -1.0, -_GOLDEN],
    [0.0, 1.0, -_GOLDEN],
    [_GOLDEN, 0.0, -1.0],
    [_GOLDEN, 0.0, 1.0],
    [-_GOLDEN, 0.0, -1.0],
    [-_GOLDEN, 0.0, 1.0],
])
ICOSAHEDRON_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
])

# local edge i joins local vertices i and i+1
LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 0]])


class MeshStats(NamedTuple):
    h_max: float
    h_avg: float
    min_angle: float
    F: int
    E: int
    V: int


class LinearSurfaceMesh:
    def __init__(self, vertices, triangles, level: int = 0):
        self.vertices = np.array(vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        self.level = int(level)
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)

    @property
    def V(self) -> int:
        return len(self.vertices)

    @property
    def F(self) -> int:
        return len(self.triangles)

    @property
    def E(self) -> int:
        return len(self.edges)

    @property
    def euler_characteristic(self) -> int:
        return self.V - self.E + self.F

    @cached_property
    def _edge_data(self):
        pairs = np.sort(self.triangles[:, LOCAL_EDGES], axis=2).reshape(-1, 2)
        edges, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
        return edges, inverse.reshape(-1).reshape(self.F, 3), counts

    @property
    def edges(self) -> np.ndarray:
        """Unique (min, max) vertex pairs in lexicographic order."""
        return self._edge_data[0]

    @property
    def triangle_edges(self) -> np.ndarray:
        """(F, 3) edge indices of the local edges (0,1), (1,2), (2,0)."""
        return self._edge_data[1]

    @cached_property
    def edge_triangles(self) -> np.ndarray:
        """(E, 2) triangles sharing each edge; -1 where an edge has only one."""
        result = np.full((self.E, 2), -1, dtype=np.int64)
        flat = self.triangle_edges.reshape(-1)
        owners = np.repeat(np.arange(self.F), 3)
        order = np.argsort(flat, kind="stable")
        flat, owners = flat[order], owners[order]
        first = np.ones(len(flat), dtype=bool)
        first[1:] = flat[1:] != flat[:-1]
        result[flat[first], 0] = owners[first]
        result[flat[~first], 1] = owners[~first]
        return result

    @cached_property
    def vertex_adjacency(self) -> sparse.csr_matrix:
        e = self.edges
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.V, self.V))

    def vertex_neighbors(self, v: int) -> np.ndarray:
        adj = self.vertex_adjacency
        return adj.indices[adj.indptr[v]:adj.indptr[v + 1]]

    def triangle_neighbors(self, t: int) -> np.ndarray:
        pairs = self.edge_triangles[self.triangle_edges[t]]
        others = pairs[pairs != t]
        return np.unique(others[others >= 0])

    def face_normals(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals(), axis=1)

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def with_vertices(self, vertices) -> "LinearSurfaceMesh":
        return LinearSurfaceMesh(vertices, self.triangles, self.level)

    def __repr__(self) -> str:
        return f"LinearSurfaceMesh(V={self.V}, E={self.E}, F={self.F}, level={self.level})"


def validate(mesh: LinearSurfaceMesh, field: Optional[LevelSetField] = None) -> LinearSurfaceMesh:
    """Edge-manifold, consistent orientation, genus 0 and, given a field, outward normals."""
    if mesh.F == 0:
        raise ManifoldError("Mesh has no triangles")
    if mesh.triangles.min() < 0 or mesh.triangles.max() >= mesh.V:
        raise ManifoldError("Triangle references a vertex that does not exist")
    if np.any(mesh.triangles[:, 0] == mesh.triangles[:, 1]) or \
            np.any(mesh.triangles[:, 1] == mesh.triangles[:, 2]) or \
            np.any(mesh.triangles[:, 2] == mesh.triangles[:, 0]):
        raise ManifoldError("Triangle with repeated vertex")
    counts = mesh._edge_data[2]
    if np.any(counts != 2):
        bad = mesh.edges[np.argmax(counts != 2)]
        raise ManifoldError(f"Edge {bad.tolist()} is shared by {counts[counts != 2][0]} triangles, expected 2")
    directed = mesh.triangles[:, LOCAL_EDGES].reshape(-1, 2)
    if len(np.unique(directed, axis=0)) != len(directed):
        raise ManifoldError("Triangles are not consistently oriented")
    chi = mesh.euler_characteristic
    if chi != 2:
        raise ManifoldError(f"Euler characteristic is {chi}, expected 2")
    areas = mesh.face_areas()
    if np.any(areas < DEGENERATE_AREA):
        raise DegenerateMesh(f"Triangle {int(np.argmin(areas))} has area {areas.min():.3e}")
    if field is not None:
        _, grad, _ = eval_batch(field, mesh.centroids())
        outward = np.einsum("ni,ni->n", mesh.face_normals(), grad)
        if np.any(outward <= 0):
            raise ManifoldError(f"{int(np.sum(outward <= 0))} triangles point into the surface")
    return mesh


def stats(mesh: LinearSurfaceMesh) -> MeshStats:
    e = mesh.edges
    lengths = np.linalg.norm(mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]], axis=1)
    p = mesh.vertices[mesh.triangles]
    angles = []
    for i in range(3):
        a = p[:, (i + 1) % 3] - p[:, i]
        b = p[:, (i + 2) % 3] - p[:, i]
        cos = np.einsum("ni,ni->n", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        angles.append(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
    return MeshStats(
        h_max=float(lengths.max()),
        h_avg=float(lengths.mean()),
        min_angle=float(np.min(angles)),
        F=mesh.F, E=mesh.E, V=mesh.V,
    )


def _midpoint_refine(mesh: LinearSurfaceMesh):
    """Quartered connectivity plus the edge-midpoint coordinates."""
    e = mesh.edges
    midpoints = 0.5 * (mesh.vertices[e[:, 0]] + mesh.vertices[e[:, 1]])
    t = mesh.triangles
    m = mesh.triangle_edges + mesh.V
    m01, m12, m20 = m[:, 0], m[:, 1], m[:, 2]
    children = np.stack([
        np.stack([t[:, 0], m01, m20], axis=1),
        np.stack([m01, t[:, 1], m12], axis=1),
        np.stack([m20, m12, t[:, 2]], axis=1),
        np.stack([m01, m12, m20], axis=1),
    ], axis=1).reshape(-1, 3)
    return midpoints, children


def icosphere(level: int) -> LinearSurfaceMesh:
    if level < 0:
        raise DegenerateInput("Refinement level must be non-negative")
    vertices = ICOSAHEDRON_VERTICES / np.linalg.norm(ICOSAHEDRON_VERTICES, axis=1)[:, None]
    mesh = LinearSurfaceMesh(vertices, ICOSAHEDRON_FACES, 0)
    for _ in range(level):
        midpoints, children = _midpoint_refine(mesh)
        midpoints /= np.linalg.norm(midpoints, axis=1)[:, None]
        mesh = LinearSurfaceMesh(np.vstack([mesh.vertices, midpoints]), children, mesh.level + 1)
    return mesh


def smooth_tangential(mesh: LinearSurfaceMesh, field: LevelSetField, sweeps: int = SMOOTH_SWEEPS) -> LinearSurfaceMesh:
    """Move every vertex to the projected average of its neighbours."""
    adj = mesh.vertex_adjacency
    degree = np.asarray(adj.sum(axis=1)).reshape(-1)
    vertices = mesh.vertices.copy()
    for _ in range(sweeps):
        average = (adj @ vertices) / degree[:, None]
        vertices = closest_point_batch(field, average)
    return mesh.with_vertices(vertices)


def project_to_levelset(mesh: LinearSurfaceMesh, field: LevelSetField, smooth: bool = True) -> LinearSurfaceMesh:
    projected = mesh.with_vertices(closest_point_batch(field, mesh.vertices))
    validate(projected, field)
    if smooth:
        angle = stats(projected).min_angle
        if angle < SMOOTH_ANGLE:
            logger.info(f"Minimum angle {angle:.2f} deg below {SMOOTH_ANGLE}, smoothing {SMOOTH_SWEEPS} sweeps")
            projected = smooth_tangential(projected, field)
            validate(projected, field)
    return projected


def refine_red(mesh: LinearSurfaceMesh, field: Optional[LevelSetField] = None) -> LinearSurfaceMesh:
    """Quarter every triangle; new vertices are projected when a field is given."""
    midpoints, children = _midpoint_refine(mesh)
    if field is not None:
        midpoints = closest_point_batch(field, midpoints)
    refined = LinearSurfaceMesh(np.vstack([mesh.vertices, midpoints]), children, mesh.level + 1)
    return validate(refined, field)


def map_sphere_to_profile(mesh: LinearSurfaceMesh, field: LevelSetField) -> LinearSurfaceMesh:
    """Carry a unit-sphere mesh onto a body of revolution about the x axis.

    The distance to the axis is scaled to the outer radius and the first
    coordinate follows the surface profile, so vertices land on the surface
    up to rounding.
    """
    profile, r_out = axial_profile(field)
    v = mesh.vertices / np.linalg.norm(mesh.vertices, axis=1)[:, None]
    rho = r_out * np.sqrt(v[:, 1] ** 2 + v[:, 2] ** 2)
    mapped = np.column_stack([np.sign(v[:, 0]) * profile(rho), r_out * v[:, 1], r_out * v[:, 2]])
    return mesh.with_vertices(mapped)


def build_base_mesh(field: LevelSetField, level: int, base_level: int = BASE_LEVEL,
                    smooth: bool = True) -> LinearSurfaceMesh:
    """Mesh used for run level ``level``: a coarse icosphere carried onto the
    surface, followed by ``level`` red refinements.

    The default base level gives 1280 triangles at level 0 (h about 0.22 on
    the biconcave shape), where the error curves are already asymptotic.
    """
    if not field.closed:
        raise DegenerateInput("Base meshes exist only for closed surfaces")
    if level < 0 or base_level < 0:
        raise DegenerateInput("Refinement levels must be non-negative")
    mesh = project_to_levelset(map_sphere_to_profile(icosphere(base_level), field), field, smooth)
    mesh = LinearSurfaceMesh(mesh.vertices, mesh.triangles, 0)
    for _ in range(level):
        mesh = refine_red(mesh, field)
    logger.info(f"Base mesh level {level}: {stats(mesh)}")
    return mesh


def export_off(mesh: LinearSurfaceMesh, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("OFF\n")
        f.write(f"{mesh.V} {mesh.F} 0\n")
        for x, y, z in mesh.vertices:
            f.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")
        for i, j, k in mesh.triangles:
            f.write(f"3 {i} {j} {k}\n")


def import_off(path: str) -> LinearSurfaceMesh:
    lines = []
    with open(path, "r", encoding="utf-8") as f:
        for number, raw in enumerate(f, start=1):
            text = raw.split("#", 1)[0].strip()
            if text:
                lines.append((number, text))
    if not lines or lines[0][1] != "OFF":
        raise ParseError("missing OFF header", lines[0][0] if lines else 1)
    if len(lines) < 2:
        raise ParseError("missing counts line", lines[0][0] + 1)
    number, text = lines[1]
    try:
        counts = [int(v) for v in text.split()]
        n_vertices, n_faces = counts[0], counts[1]
    except (ValueError, IndexError):
        raise ParseError(f"bad counts line {text!r}", number)
    body = lines[2:]
    if len(body) < n_vertices + n_faces:
        raise ParseError(f"expected {n_vertices} vertices and {n_faces} faces",
                         body[-1][0] + 1 if body else number + 1)
    vertices = np.zeros((n_vertices, 3))
    for i, (number, text) in enumerate(body[:n_vertices]):
        try:
            values = [float(v) for v in text.split()]
        except ValueError:
            raise ParseError(f"bad vertex {text!r}", number)
        if len(values) != 3:
            raise ParseError(f"vertex needs 3 coordinates, got {len(values)}", number)
        vertices[i] = values
    triangles = np.zeros((n_faces, 3), dtype=np.int64)
    for i, (number, text) in enumerate(body[n_vertices:n_vertices + n_faces]):
        try:
            values = [int(v) for v in text.split()]
        except ValueError:
            raise ParseError(f"bad face {text!r}", number)
        if len(values) != 4 or values[0] != 3:
            raise ParseError("only triangles '3 i j k' are supported", number)
        if min(values[1:]) < 0 or max(values[1:]) >= n_vertices:
            raise ParseError(f"face index out of range in {text!r}", number)
        triangles[i] = values[1:]
    return validate(LinearSurfaceMesh(vertices, triangles, 0))
