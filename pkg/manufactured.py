"""Exact solution triple and its consistent forcing.

psi = x^2 y - 5 z^3, p = x^3 + x y z, u = n x grad_Gamma psi and
f = -P div_Gamma(E_s(u)) + u + grad_Gamma p, all evaluated with their
neighbourhood formulas (extended normal), never a constant-normal extension.
"""
from typing import Callable, Optional

import numpy as np
import jax
import jax.numpy as jnp

from errors import DegenerateGradient
from levelset_geometry import GRADIENT_FLOOR, ExtendedOps, LevelSetField, batched, biconcave, eval_batch


def default_stream(x):
    return x[0] ** 2 * x[1] - 5.0 * x[2] ** 3


def default_pressure(x):
    return x[0] ** 3 + x[0] * x[1] * x[2]


def zero_scalar(x):
    return 0.0 * x[0]


class ManufacturedCase:
    def __init__(self, field: Optional[LevelSetField] = None, stream: Callable = default_stream,
                 pressure: Callable = default_pressure):
        self.field = field if field is not None else biconcave()
        ops = ExtendedOps(self.field)
        self.ops = ops
        self.psi_fn = stream
        self.p_fn = pressure
        self.u_fn = ops.curl_scalar(stream)
        self.grad_u_fn = jax.jacfwd(self.u_fn)
        self.grad_p_fn = ops.surface_gradient(pressure)
        self.full_grad_p_fn = jax.grad(pressure)
        self.div_u_fn = ops.div(self.u_fn)
        div_strain = ops.div_tensor(ops.deformation(self.u_fn))

        def forcing(x):
            return -ops.projector(x) @ div_strain(x) + self.u_fn(x) + self.grad_p_fn(x)

        self.f_fn = forcing
        self._psi = batched(stream)
        self._p = batched(pressure)
        self._u = batched(self.u_fn)
        self._grad_u = batched(self.grad_u_fn)
        self._grad_p = batched(self.full_grad_p_fn)
        self._div_u = batched(self.div_u_fn)
        self._f = batched(forcing)
        self._residual = batched(
            lambda x: -ops.projector(x) @ div_strain(x) + self.u_fn(x) + self.grad_p_fn(x) - forcing(x)
        )

    @classmethod
    def for_field(cls, field: LevelSetField) -> "ManufacturedCase":
        return cls(field)

    @classmethod
    def null(cls, field: LevelSetField) -> "ManufacturedCase":
        return cls(field, stream=zero_scalar, pressure=zero_scalar)

    def _checked(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        _, grad, _ = eval_batch(self.field, points)
        if len(points) and np.min(np.linalg.norm(grad, axis=1)) < GRADIENT_FLOOR:
            raise DegenerateGradient("Level-set gradient vanishes at an evaluation point")
        return points

    # batched evaluators, (N, 3) points in
    def psi(self, points) -> np.ndarray:
        return self._psi(self._checked(points))

    def p(self, points) -> np.ndarray:
        return self._p(self._checked(points))

    def u(self, points) -> np.ndarray:
        return self._u(self._checked(points))

    def grad_u(self, points) -> np.ndarray:
        """Full extended gradient, rows are components."""
        return self._grad_u(self._checked(points))

    def grad_p(self, points) -> np.ndarray:
        """Full extended gradient of p; project it for the surface gradient."""
        return self._grad_p(self._checked(points))

    def div_u(self, points) -> np.ndarray:
        return self._div_u(self._checked(points))

    def f(self, points) -> np.ndarray:
        return self._f(self._checked(points))

    def strong_residual(self, points) -> np.ndarray:
        """-P div E_s(u) + u + grad_Gamma p - f, zero by construction."""
        return self._residual(self._checked(points))

    # single-point evaluators
    def exact_psi(self, x) -> float:
        return float(self.psi(np.asarray(x)[None, :])[0])

    def exact_p(self, x) -> float:
        return float(self.p(np.asarray(x)[None, :])[0])

    def exact_u(self, x) -> np.ndarray:
        return self.u(np.asarray(x)[None, :])[0]

    def exact_grad_u(self, x) -> np.ndarray:
        return self.grad_u(np.asarray(x)[None, :])[0]

    def exact_grad_p(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.asarray(self.ops.projector(jnp.asarray(x))) @ self.grad_p(x[None, :])[0]

    def exact_div_u(self, x) -> float:
        return float(self.div_u(np.asarray(x)[None, :])[0])

    def forcing_f(self, x) -> np.ndarray:
        return self.f(np.asarray(x)[None, :])[0]


def exact_u(x, case: Optional[ManufacturedCase] = None) -> np.ndarray:
    return (case or ManufacturedCase()).exact_u(x)


def exact_p(x, case: Optional[ManufacturedCase] = None) -> float:
    return (case or ManufacturedCase()).exact_p(x)


def exact_psi(x, case: Optional[ManufacturedCase] = None) -> float:
    return (case or ManufacturedCase()).exact_psi(x)


def exact_grad_u(x, case: Optional[ManufacturedCase] = None) -> np.ndarray:
    return (case or ManufacturedCase()).exact_grad_u(x)


def forcing_f(x, case: Optional[ManufacturedCase] = None) -> np.ndarray:
    return (case or ManufacturedCase()).forcing_f(x)
