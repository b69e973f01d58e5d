"""Sparse saddle-point and mean-constrained solves.

Zero-mean conditions are imposed with one Lagrange multiplier per
constrained block: the system is bordered with the block's constant-load
vector m (m_i = int phi_i), which keeps it symmetric.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import bmat, csc_matrix, csr_matrix, diags
from scipy.sparse import linalg

from errors import ResidualTooLarge, SingularSystem
from runlog import logger

RESIDUAL_TOL = 1e-10


@dataclass
class ConstrainedSystem:
    """matrix x = rhs, with ``constraints`` as (offset, m) pairs already
    appended as trailing multiplier rows."""
    matrix: csr_matrix
    rhs: np.ndarray
    symmetric: bool = True
    constraints: List[Tuple[int, np.ndarray]] = field(default_factory=list)
    n_primal: Optional[int] = None

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


@dataclass
class SolveDiagnostics:
    residual: float
    constraint_residuals: List[float]
    method: str
    iterations: int = 0
    refine_steps: int = 0
    size: int = 0
    nnz: int = 0


def augment_mean_constraint(matrix, constraints: Sequence[Tuple[int, np.ndarray]]) -> csr_matrix:
    """Bordered matrix [[A, C], [C^T, 0]] with column j of C holding m_j at its block offset."""
    n = matrix.shape[0]
    if not constraints:
        return csr_matrix(matrix)
    columns = np.zeros((n, len(constraints)))
    for j, (offset, m) in enumerate(constraints):
        m = np.asarray(m, dtype=float)
        columns[offset:offset + len(m), j] = m
    border = csr_matrix(columns)
    return bmat([[matrix, border], [border.T, None]], format="csr")


def build_system(matrix, rhs, constraints: Sequence[Tuple[int, np.ndarray]] = (),
                 symmetric: bool = True) -> ConstrainedSystem:
    n = matrix.shape[0]
    if matrix.shape[0] != matrix.shape[1]:
        raise SingularSystem(f"System matrix is not square: {matrix.shape}")
    full = augment_mean_constraint(matrix, constraints)
    rhs = np.concatenate([np.asarray(rhs, dtype=float), np.zeros(len(constraints))])
    return ConstrainedSystem(full, rhs, symmetric, list(constraints), n)


def _relative_residual(matrix, x, b) -> float:
    norm_b = np.linalg.norm(b)
    r = np.linalg.norm(matrix @ x - b)
    return float(r / norm_b) if norm_b > 0 else float(r)


def _constraint_residuals(system: ConstrainedSystem, x) -> List[float]:
    return [float(abs(np.dot(m, x[offset:offset + len(m)]))) for offset, m in system.constraints]


def _direct(system: ConstrainedSystem, refine_steps: int, tol: float):
    matrix = csc_matrix(system.matrix)
    try:
        lu = linalg.splu(matrix)
    except RuntimeError as e:
        raise SingularSystem(f"Factorization failed: {e}") from e
    x = lu.solve(system.rhs)
    steps = 0
    for _ in range(refine_steps):
        if _relative_residual(matrix, x, system.rhs) <= 0.01 * tol:
            break
        x = x + lu.solve(system.rhs - matrix @ x)
        steps += 1
    return x, 0, steps


def _minres(system: ConstrainedSystem, tol: float):
    diagonal = np.abs(system.matrix.diagonal())
    diagonal[diagonal == 0.0] = 1.0
    preconditioner = diags(1.0 / diagonal)
    counter = {"n": 0}

    def count(_):
        counter["n"] += 1

    x, info = linalg.minres(system.matrix, system.rhs, M=preconditioner, rtol=0.01 * tol,
                            maxiter=20 * system.size, callback=count)
    return x, info, counter["n"]


def solve(system: ConstrainedSystem, kind: str = "direct", tol: float = RESIDUAL_TOL,
          refine_steps: int = 2) -> Tuple[np.ndarray, SolveDiagnostics]:
    if np.linalg.norm(system.rhs) == 0.0:
        x = np.zeros(system.size)
        return x, SolveDiagnostics(0.0, _constraint_residuals(system, x), "zero", size=system.size,
                                   nnz=system.matrix.nnz)
    method, iterations, steps = kind, 0, 0
    if kind == "minres":
        x, info, iterations = _minres(system, tol)
        if info != 0 or _relative_residual(system.matrix, x, system.rhs) > tol:
            logger.warning(f"MINRES stopped with info={info} after {iterations} iterations, "
                           f"falling back to direct factorization")
            x, _, steps = _direct(system, refine_steps, tol)
            method = "direct"
    else:
        x, _, steps = _direct(system, refine_steps, tol)
    if not np.all(np.isfinite(x)):
        raise SingularSystem("Solution contains non-finite values")
    residual = _relative_residual(system.matrix, x, system.rhs)
    diagnostics = SolveDiagnostics(
        residual=residual,
        constraint_residuals=_constraint_residuals(system, x),
        method=method,
        iterations=iterations,
        refine_steps=steps,
        size=system.size,
        nnz=system.matrix.nnz,
    )
    logger.debug(f"Solved {system.size} unknowns ({method}), relative residual {residual:.2e}")
    if residual > tol:
        raise ResidualTooLarge(f"Relative residual {residual:.3e} exceeds {tol:.1e}")
    return x, diagnostics
