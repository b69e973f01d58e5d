"""Degree-of-freedom counts for the two formulations.

Closed forms in terms of n (surface triangles for SFEM, cut tetrahedra for
TraceFEM) assume a structured grid; exact counts use the Euler relation of a
closed genus-0 triangulation, V = 2 + F/2 and E = 3F/2.
"""
from typing import List, NamedTuple, Sequence

from errors import InvalidMesh, InvalidOrder

METHODS = ("sfem", "tracefem")
FORMULATIONS = ("th", "sf", "sf_total")
APPROXIMATE_NOTE = "approximate - unstructured bulk grid not reproducible"


class DofReport(NamedTuple):
    n: int
    k: int
    th_formula: int
    sf_formula: int
    sf_total_formula: int
    exact_th: int
    exact_sf: int


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _check(formulation: str, n: int, k: int) -> None:
    if formulation not in FORMULATIONS:
        raise InvalidOrder(f"Unknown formulation {formulation!r}")
    if n < 1:
        raise InvalidMesh(f"Element count must be positive, got {n}")
    minimum = 2 if formulation == "th" else 1
    if k < minimum:
        raise InvalidOrder(f"{formulation} needs k >= {minimum}, got {k}")


def dofs_formula(method: str, formulation: str, n: int, k: int) -> int:
    if method not in METHODS:
        raise InvalidOrder(f"Unknown method {method!r}")
    _check(formulation, n, k)
    if method == "sfem":
        cells = _ceil_div(n, 2)
        th = 3 * cells * k * k + cells * (k - 1) ** 2
        sf = 2 * cells * (k + 1) ** 2
        extra = 4 * cells * k * k
    else:
        cells = _ceil_div(n, 6)
        th = 3 * cells * (k + 1) * k * k + cells * k * (k - 1) ** 2
        sf = 2 * cells * (k + 2) * (k + 1) ** 2
        extra = 4 * cells * (k + 1) * k * k
    if formulation == "th":
        return th
    if formulation == "sf":
        return sf
    return sf + extra


def scalar_dim(F: int, m: int) -> int:
    """Order-m Lagrange space on a closed genus-0 mesh with F triangles."""
    if F % 2:
        raise InvalidMesh(f"A closed triangulation has an even number of faces, got {F}")
    if F < 4:
        raise InvalidMesh(f"A closed triangulation needs at least 4 faces, got {F}")
    if m < 1:
        raise InvalidOrder(f"Lagrange order must be at least 1, got {m}")
    V, E = 2 + F // 2, 3 * F // 2
    return V + (m - 1) * E + (m - 1) * (m - 2) // 2 * F


def exact_counts(F: int, k: int, formulation: str) -> int:
    _check(formulation, F, k)
    if formulation == "th":
        return 3 * scalar_dim(F, k) + scalar_dim(F, k - 1)
    sf = 2 * scalar_dim(F, k + 1)
    if formulation == "sf":
        return sf
    return sf + 4 * scalar_dim(F, k)


def report(F: int, k: int) -> DofReport:
    return DofReport(
        n=F, k=k,
        th_formula=dofs_formula("sfem", "th", F, k),
        sf_formula=dofs_formula("sfem", "sf", F, k),
        sf_total_formula=dofs_formula("sfem", "sf_total", F, k),
        exact_th=exact_counts(F, k, "th"),
        exact_sf=exact_counts(F, k, "sf"),
    )


def sweep(method: str, n: int, ks: Sequence[int]) -> List[dict]:
    """Rows k, dofTH, dofSF, dofSFtotal for a fixed element count."""
    rows = []
    for k in ks:
        rows.append({
            "k": k,
            "dofTH": dofs_formula(method, "th", n, k) if k >= 2 else None,
            "dofSF": dofs_formula(method, "sf", n, k),
            "dofSFtotal": dofs_formula(method, "sf_total", n, k),
        })
    return rows


def table_rows(F_values: Sequence[int], k: int, tracefem_n: Sequence[int] = ()) -> List[dict]:
    rows = []
    for n in tracefem_n:
        rows.append({"method": "tracefem", "n": n, "th": dofs_formula("tracefem", "th", n, k),
                     "sf": dofs_formula("tracefem", "sf", n, k), "note": APPROXIMATE_NOTE})
    for F in F_values:
        rows.append({"method": "sfem", "n": F, "th": exact_counts(F, k, "th"),
                     "sf": exact_counts(F, k, "sf"), "note": "exact"})
    return rows


def crossover(method: str, n: int, k_max: int = 10) -> int:
    """Smallest k at which Taylor-Hood needs more unknowns than the stream function."""
    for k in range(2, k_max + 1):
        if dofs_formula(method, "th", n, k) > dofs_formula(method, "sf", n, k):
            return k
    raise InvalidOrder(f"No crossover up to k={k_max}")
