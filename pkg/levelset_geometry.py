"""Analytic level-set surfaces with exact derivatives.

Three families are supported: ``sphere`` (phi = x.x - r^2), ``plane``
(phi = z - offset, flat test fixture) and ``biconcave``
(phi = (d^2 + |x|^2)^3 - 8 d^2 (y^2 + z^2) - c^4, symmetric about the x axis).
phi < 0 inside. Derivatives up to third order come from forward-mode
differentiation with jax in double precision.
"""
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Tuple

import numpy as np
import jax
import jax.numpy as jnp
from scipy.optimize import brentq

from errors import DegenerateGradient, DegenerateInput, NoConvergence
from runlog import logger

jax.config.update("jax_enable_x64", True)

GRADIENT_FLOOR = 1e-12


@dataclass(frozen=True)
class LevelSetField:
    kind: str
    c: float = 0.95
    d: float = 0.96
    radius: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in ("sphere", "plane", "biconcave"):
            raise DegenerateInput(f"Unknown surface kind: {self.kind}")
        if self.kind == "sphere" and self.radius <= 0:
            raise DegenerateInput("Sphere radius must be positive")
        if self.kind == "biconcave":
            if self.c <= 0 or self.d < 0:
                raise DegenerateInput("Biconcave surface needs c > 0 and d >= 0")
            if self.d ** 6 >= self.c ** 4:
                raise DegenerateInput(f"d={self.d} splits the biconcave surface at the axis for c={self.c}")

    @property
    def closed(self) -> bool:
        return self.kind != "plane"

    def phi(self, x):
        """Level-set value at a single point (jax-traceable)."""
        if self.kind == "sphere":
            return jnp.dot(x, x) - self.radius ** 2
        if self.kind == "plane":
            return x[2] - self.offset
        d2 = self.d ** 2
        r2 = jnp.dot(x, x)
        return (d2 + r2) ** 3 - 8.0 * d2 * (x[1] ** 2 + x[2] ** 2) - self.c ** 4


def sphere(radius: float = 1.0) -> LevelSetField:
    return LevelSetField("sphere", radius=float(radius))


def plane(offset: float = 0.0) -> LevelSetField:
    return LevelSetField("plane", offset=float(offset))


def biconcave(c: float = 0.95, d: float = 0.96) -> LevelSetField:
    return LevelSetField("biconcave", c=float(c), d=float(d))


def d0(c: float = 0.95) -> float:
    """d at which mean and Gaussian curvature vanish at the axis point."""
    return math.sqrt(3.0 / 8.0 * c ** (8.0 / 3.0))


def d_presets(c: float = 0.95) -> dict:
    return {"0": 0.0, "d0": d0(c), "0.8": 0.8, "0.96": 0.96}


def resolve_d(value, c: float = 0.95) -> float:
    presets = d_presets(c)
    key = str(value).strip()
    if key in presets:
        return presets[key]
    try:
        return float(key)
    except ValueError:
        raise DegenerateInput(f"Unknown d preset: {value}")


def field_from_config(cfg) -> LevelSetField:
    kind = cfg["surface.kind"]
    if kind == "sphere":
        return sphere(cfg["surface.radius"])
    if kind == "plane":
        return plane()
    return biconcave(cfg["surface.c"], cfg["surface.d"])


def center_point(field: LevelSetField) -> np.ndarray:
    """The point x_c of the surface on the positive x axis."""
    if field.kind == "biconcave":
        return np.array([math.sqrt(field.c ** (4.0 / 3.0) - field.d ** 2), 0.0, 0.0])
    if field.kind == "sphere":
        return np.array([field.radius, 0.0, 0.0])
    return np.array([0.0, 0.0, field.offset])


def axial_profile(field: LevelSetField) -> Tuple[Callable[[np.ndarray], np.ndarray], float]:
    """Half-thickness x_s(rho) of the surface as a function of the distance to
    the x axis, and the outer radius where it closes.

    Both closed families are bodies of revolution about the x axis.
    """
    if field.kind == "sphere":
        r = field.radius
        return (lambda rho: np.sqrt(np.maximum(r * r - np.asarray(rho) ** 2, 0.0))), r
    if field.kind != "biconcave":
        raise DegenerateInput("Only closed surfaces have an axial profile")
    c4, d2 = field.c ** 4, field.d ** 2

    def thickness_sq(rho):
        t = np.asarray(rho, dtype=float) ** 2
        return np.cbrt(c4 + 8.0 * d2 * t) - d2 - t

    upper = 1.0
    while thickness_sq(upper) > 0.0:
        upper *= 2.0
    r_out = brentq(thickness_sq, 0.0, upper, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return (lambda rho: np.sqrt(np.maximum(thickness_sq(np.minimum(rho, r_out)), 0.0))), r_out


@dataclass(frozen=True)
class Jet3:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    third: np.ndarray


@dataclass(frozen=True)
class SurfacePointFrame:
    point: np.ndarray
    normal: np.ndarray
    projector: np.ndarray
    weingarten: np.ndarray
    gauss: float
    mean: float


@lru_cache(maxsize=None)
def _derivatives(field: LevelSetField):
    grad = jax.jacfwd(field.phi)
    hess = jax.jacfwd(grad)
    third = jax.jacfwd(hess)
    batch = jax.jit(jax.vmap(lambda x: (field.phi(x), grad(x), hess(x))))
    return grad, hess, third, batch


def eval_jet3(field: LevelSetField, x) -> Jet3:
    grad, hess, third, _ = _derivatives(field)
    x = jnp.asarray(x, dtype=jnp.float64)
    return Jet3(
        value=float(field.phi(x)),
        gradient=np.asarray(grad(x)),
        hessian=np.asarray(hess(x)),
        third=np.asarray(third(x)),
    )


def eval_batch(field: LevelSetField, points) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """phi, grad phi and Hessian for an (N, 3) array of points."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        return np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3, 3))
    _, _, _, batch = _derivatives(field)
    value, grad, hess = batch(jnp.asarray(points))
    return np.asarray(value), np.asarray(grad), np.asarray(hess)


def frame_batch(field: LevelSetField, points):
    """Normals, projectors, Weingarten maps, K and tr(H) for (N, 3) points."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    _, grad, hess = eval_batch(field, points)
    norm = np.linalg.norm(grad, axis=1)
    if np.any(norm < GRADIENT_FLOOR):
        bad = points[np.argmin(norm)]
        raise DegenerateGradient(f"Level-set gradient vanishes at {bad.tolist()}")
    n = grad / norm[:, None]
    proj = np.eye(3)[None, :, :] - n[:, :, None] * n[:, None, :]
    weingarten = np.einsum("nij,njk,nkl->nil", proj, hess, proj) / norm[:, None, None]
    weingarten = 0.5 * (weingarten + np.transpose(weingarten, (0, 2, 1)))
    mean = np.trace(weingarten, axis1=1, axis2=2)
    gauss = 0.5 * (mean ** 2 - np.einsum("nij,nji->n", weingarten, weingarten))
    return n, proj, weingarten, gauss, mean


def frame(field: LevelSetField, x) -> SurfacePointFrame:
    x = np.asarray(x, dtype=float).reshape(3)
    n, proj, weingarten, gauss, mean = frame_batch(field, x[None, :])
    return SurfacePointFrame(
        point=x, normal=n[0], projector=proj[0], weingarten=weingarten[0],
        gauss=float(gauss[0]), mean=float(mean[0]),
    )


def closest_point_batch(field: LevelSetField, points, tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
    """Closest points on the surface for an (N, 3) array of nearby points.

    First-order steps bring every point to |phi| < 1e-10, then a Newton
    iteration on the Lagrange system of min |y - x|^2 s.t. phi(y) = 0
    finishes to ``tol``.
    """
    x = np.asarray(points, dtype=float).reshape(-1, 3)
    y = x.copy()
    if len(x) == 0:
        return y
    coarse = max(tol, 1e-10)

    for _ in range(max_iter):
        value, grad, _ = eval_batch(field, y)
        active = np.abs(value) >= coarse
        if not np.any(active):
            break
        g2 = np.einsum("ni,ni->n", grad[active], grad[active])
        if np.any(g2 < GRADIENT_FLOOR ** 2):
            raise DegenerateGradient("Level-set gradient vanishes during projection")
        y[active] -= (value[active] / g2)[:, None] * grad[active]
    else:
        value, _, _ = eval_batch(field, y)
        if np.any(np.abs(value) >= coarse):
            raise NoConvergence(f"First-order projection left |phi| = {np.abs(value).max():.3e}")

    value, grad, hess = eval_batch(field, y)
    g2 = np.einsum("ni,ni->n", grad, grad)
    lam = -np.einsum("ni,ni->n", y - x, grad) / g2
    eye = np.eye(3)
    for _ in range(max_iter):
        n = grad / np.sqrt(g2)[:, None]
        diff = y - x
        tangential = diff - np.einsum("ni,ni->n", diff, n)[:, None] * n
        done = (np.abs(value) <= tol) & (np.linalg.norm(tangential, axis=1) <= tol)
        if np.all(done):
            return y
        todo = ~done
        m = int(todo.sum())
        jac = np.zeros((m, 4, 4))
        jac[:, :3, :3] = eye + lam[todo, None, None] * hess[todo]
        jac[:, :3, 3] = grad[todo]
        jac[:, 3, :3] = grad[todo]
        rhs = np.concatenate([diff[todo] + lam[todo, None] * grad[todo], value[todo, None]], axis=1)
        try:
            step = np.linalg.solve(jac, rhs[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            raise NoConvergence("Singular Newton system in closest-point projection")
        y[todo] -= step[:, :3]
        lam[todo] -= step[:, 3]
        value, grad, hess = eval_batch(field, y)
        g2 = np.einsum("ni,ni->n", grad, grad)
    logger.error(f"Closest-point projection failed for {int((~done).sum())} of {len(y)} points")
    raise NoConvergence(f"Closest-point projection did not reach tol={tol} in {max_iter} iterations")


def closest_point(field: LevelSetField, x, tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
    return closest_point_batch(field, np.asarray(x, dtype=float)[None, :], tol, max_iter)[0]


class ExtendedOps:
    """Surface differential operators extended to a neighbourhood of the surface.

    Every operator takes jax-traceable callables of a single point and returns
    one; the extension uses the extended normal n = grad phi / |grad phi|, not
    a constant-normal extension, so operators can be nested.
    """

    def __init__(self, field: LevelSetField):
        self.field = field
        self._grad_phi = jax.jacfwd(field.phi)

    def normal(self, x):
        g = self._grad_phi(x)
        return g / jnp.linalg.norm(g)

    def projector(self, x):
        n = self.normal(x)
        return jnp.eye(3) - jnp.outer(n, n)

    def surface_gradient(self, g):
        grad = jax.jacfwd(g)
        return lambda x: self.projector(x) @ grad(x)

    def surface_gradient_vector(self, v):
        jac = jax.jacfwd(v)

        def op(x):
            p = self.projector(x)
            return p @ jac(x) @ p
        return op

    def deformation(self, v):
        grad = self.surface_gradient_vector(v)

        def op(x):
            g = grad(x)
            return 0.5 * (g + g.T)
        return op

    def div(self, v):
        grad = self.surface_gradient_vector(v)
        return lambda x: jnp.trace(grad(x))

    def div_tensor(self, a):
        """Row-wise surface divergence: (div A)_i = sum_jk d_k A_ij P_jk."""
        jac = jax.jacfwd(a)
        return lambda x: jnp.einsum("ijk,jk->i", jac(x), self.projector(x))

    def curl_scalar(self, psi):
        grad = self.surface_gradient(psi)
        return lambda x: jnp.cross(self.normal(x), grad(x))

    def curl_vector(self, v):
        return self.div(lambda x: jnp.cross(v(x), self.normal(x)))


def extended_ops(field: LevelSetField) -> ExtendedOps:
    return ExtendedOps(field)


def batched(fn):
    """Jit-compiled vmap of a single-point callable returning numpy arrays."""
    compiled = jax.jit(jax.vmap(fn))

    def run(points):
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(points) == 0:
            shape = jax.eval_shape(fn, jnp.zeros(3)).shape
            return np.zeros((0,) + tuple(shape))
        return np.asarray(compiled(jnp.asarray(points)))
    return run
