"""Error norms on Gamma_h and estimated orders of convergence."""
import csv
import io
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from errors import DegenerateInput
from fem_spaces import ScalarSpace, VectorSpace, default_degree, evaluate, interpolate
from parametric_surface import evaluate_geometry, longest_edge, quadrature_rule
from results_store import write_text_atomic

CSV_COLUMNS = ("h", "l2_u", "h1semi_u", "l2_p", "h1semi_p", "l2_un", "l2_div", "dofs", "elements")
ERROR_COLUMNS = CSV_COLUMNS[1:7]


@dataclass
class ErrorRecord:
    h: float
    l2_u: float
    h1semi_u: float
    l2_p: float
    h1semi_p: float
    l2_un: float
    l2_div: float
    dofs: int
    elements: int

    def as_dict(self) -> dict:
        return asdict(self)


def _field_errors(surface, velocity_space, u, pressure_space, p, case, degree):
    rule = quadrature_rule(degree)
    geo = evaluate_geometry(surface, rule.points)
    triangles = np.arange(surface.base.F)
    w = geo.measure * rule.weights[None, :]
    points = geo.point.reshape(-1, 3)
    shape = geo.point.shape[:2]
    proj = geo.projector

    uh, duh, _ = evaluate(velocity_space, u, triangles, rule.points, geo)
    grad_uh = np.einsum("tqij,tqjk->tqik", proj, duh)
    exact_u = case.u(points).reshape(shape + (3,))
    exact_grad_u = np.einsum("tqij,tqjk,tqkl->tqil", proj, case.grad_u(points).reshape(shape + (3, 3)), proj)

    ph, dph, _ = evaluate(pressure_space, p, triangles, rule.points, geo)
    ph, dph = ph[..., 0], dph[..., 0, :]
    exact_p = case.p(points).reshape(shape)
    exact_grad_p = np.einsum("tqij,tqj->tqi", proj, case.grad_p(points).reshape(shape + (3,)))
    total = np.sum(w)
    ph = ph - np.sum(w * ph) / total
    exact_p = exact_p - np.sum(w * exact_p) / total

    def norm(values):
        squared = values ** 2 if values.ndim == 2 else np.sum(values.reshape(shape + (-1,)) ** 2, axis=-1)
        return math.sqrt(float(np.sum(w * squared)))

    return {
        "l2_u": norm(uh - exact_u),
        "h1semi_u": norm(grad_uh - exact_grad_u),
        "l2_p": norm(ph - exact_p),
        "h1semi_p": norm(dph - exact_grad_p),
        "l2_un": norm(np.einsum("tqc,tqc->tq", uh, geo.normal_improved)),
        "l2_div": norm(np.trace(grad_uh, axis1=-2, axis2=-1)),
    }


def compute_errors(solution, case, degree: Optional[int] = None) -> ErrorRecord:
    """Errors of a Taylor-Hood or stream-function solution against ``case``."""
    surface = solution.surface
    degree = default_degree(solution.order) if degree is None else degree
    values = _field_errors(surface, solution.velocity_space, solution.u, solution.pressure_space,
                           solution.p, case, degree)
    return ErrorRecord(h=longest_edge(surface), dofs=int(solution.dofs), elements=surface.base.F, **values)


def interpolation_errors(surface, order: int, case, formulation: str = "th",
                         degree: Optional[int] = None) -> ErrorRecord:
    """The same record for the nodal interpolants of the exact fields."""
    velocity = VectorSpace(surface, order)
    pressure = ScalarSpace(surface, order - 1 if formulation == "th" else order)
    u = interpolate(velocity, case.u)
    p = interpolate(pressure, case.p)
    degree = default_degree(order) if degree is None else degree
    values = _field_errors(surface, velocity, u, pressure, p, case, degree)
    dofs = velocity.dim + pressure.dim if formulation == "th" else 2 * ScalarSpace(surface, order + 1).dim
    return ErrorRecord(h=longest_edge(surface), dofs=dofs, elements=surface.base.F, **values)


def eoc(hs: Sequence[float], errors: Sequence[float], fit_points: int = 3):
    """Per-interval orders and a least-squares slope over the last ``fit_points``."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(hs) < 2 or len(hs) != len(errors):
        raise DegenerateInput(f"Need at least 2 matching records, got {len(hs)} h and {len(errors)} errors")
    if np.any(errors <= 0):
        raise DegenerateInput("Errors must be positive to estimate orders")
    if np.any(hs <= 0) or len(np.unique(hs)) != len(hs):
        raise DegenerateInput("Mesh sizes must be positive and distinct")
    orders = list(np.log(errors[:-1] / errors[1:]) / np.log(hs[:-1] / hs[1:]))
    tail = slice(-min(fit_points, len(hs)), None)
    slope = float(np.polyfit(np.log(hs[tail]), np.log(errors[tail]), 1)[0])
    return [float(v) for v in orders], slope


def eoc_records(records: Sequence[ErrorRecord], column: str, fit_points: int = 3):
    return eoc([r.h for r in records], [getattr(r, column) for r in records], fit_points)


def summary(records: Sequence[ErrorRecord], fit_points: int = 3) -> Dict[str, dict]:
    """Per-column interval orders and regression slopes; columns with a zero error are skipped."""
    result = {}
    for column in ERROR_COLUMNS:
        try:
            orders, slope = eoc_records(records, column, fit_points)
        except DegenerateInput:
            continue
        result[column] = {"orders": orders, "slope": slope}
    return result


def format_csv(records: Sequence[ErrorRecord]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for record in records:
        row = record.as_dict()
        writer.writerow([repr(float(row[c])) if c not in ("dofs", "elements") else int(row[c]) for c in CSV_COLUMNS])
    return buffer.getvalue()


def write_csv(path: str, records: Sequence[ErrorRecord]) -> None:
    write_text_atomic(path, format_csv(records), ".errors.")


def read_csv(path: str) -> List[ErrorRecord]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise DegenerateInput(f"Unexpected CSV header {reader.fieldnames}")
        return [
            ErrorRecord(**{c: (int(row[c]) if c in ("dofs", "elements") else float(row[c])) for c in CSV_COLUMNS})
            for row in reader
        ]
