"""Conic backend adapter with independently verified infeasibility.

Programs are handed to Clarabel in the standard form ``A x + s = b, s in
K``. An infeasibility verdict is *never* taken on the backend's word
alone: the returned dual ray is projected onto the dual cone and checked
against the variable boxes, so a reported ``INFEASIBLE`` always carries
arithmetic evidence with a positive margin.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

try:
    import clarabel
except ImportError as exc:  # pragma: no cover
    raise ImportError("the clarabel solver backend is required") from exc

from .program import ConicProgram

__all__ = ["SolveStatus", "SolveResult", "InfeasibilityEvidence", "solve", "solver_data"]

CERTIFICATE_TOL = 1e-9
FEAS_TOL = 1e-8


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class InfeasibilityEvidence:
    """Verified Farkas ray for ``A x + s = b, s in K`` over box-bounded x.

    For any x in the boxes, ``b' y >= (A' y)' x >= box_min``; the ray
    proves emptiness because ``b' y < box_min`` by ``margin``.
    """

    ray: np.ndarray
    margin: float
    b_dot_y: float
    box_min: float


@dataclass(frozen=True)
class SolveResult:
    status: SolveStatus
    x: np.ndarray | None = None
    objective: float | None = None
    evidence: InfeasibilityEvidence | None = None
    backend_status: str = ""

    @property
    def is_infeasible(self) -> bool:
        return self.status is SolveStatus.INFEASIBLE


@dataclass
class SolverData:
    """Frozen matrices for one program, reusable across objectives.

    Cones are kept as plain ``(kind, size)`` specs so the whole object
    pickles cleanly into worker processes.
    """

    A: sp.csc_matrix
    b: np.ndarray
    cones: list[tuple[str, int]]
    cone_spans: list[tuple[str, int, int]]  # (kind, start, stop) row spans
    lb: np.ndarray
    ub: np.ndarray
    n: int

    def clarabel_cones(self) -> list:
        kinds = {"zero": clarabel.ZeroConeT, "nonneg": clarabel.NonnegativeConeT,
                 "soc": clarabel.SecondOrderConeT}
        return [kinds[kind](size) for kind, size in self.cones]


def solver_data(prog: ConicProgram) -> SolverData:
    """Assemble Clarabel data: equalities, inequalities and box rows in
    the zero/nonnegative cones, then one SOC block per cone."""
    cached = getattr(prog, "_solver_data", None)
    if cached is not None:
        return cached
    n = prog.n_vars
    rows_i: list[int] = []
    cols_i: list[int] = []
    vals: list[float] = []
    b: list[float] = []
    spans: list[tuple[str, int, int]] = []
    r = 0

    start = r
    for row in prog.eq_rows:
        for j, v in zip(row.idx, row.coef):
            rows_i.append(r)
            cols_i.append(j)
            vals.append(v)
        b.append(row.rhs)
        r += 1
    spans.append(("zero", start, r))

    start = r
    for row in prog.ineq_rows:
        for j, v in zip(row.idx, row.coef):
            rows_i.append(r)
            cols_i.append(j)
            vals.append(v)
        b.append(row.rhs)
        r += 1
    for j in range(n):
        if math.isfinite(prog.ub[j]):
            rows_i.append(r)
            cols_i.append(j)
            vals.append(1.0)
            b.append(prog.ub[j])
            r += 1
        if math.isfinite(prog.lb[j]):
            rows_i.append(r)
            cols_i.append(j)
            vals.append(-1.0)
            b.append(-prog.lb[j])
            r += 1
    spans.append(("nonneg", start, r))

    cones = [("zero", spans[0][2] - spans[0][1]),
             ("nonneg", spans[1][2] - spans[1][1])]
    for block in prog.soc_blocks:
        start = r
        for idx, coef, const in block:
            for j, v in zip(idx, coef):
                rows_i.append(r)
                cols_i.append(j)
                vals.append(-v)
            b.append(const)
            r += 1
        spans.append(("soc", start, r))
        cones.append(("soc", len(block)))

    A = sp.csc_matrix((vals, (rows_i, cols_i)), shape=(r, n))
    data = SolverData(A=A, b=np.array(b), cones=cones, cone_spans=spans,
                      lb=np.array(prog.lb), ub=np.array(prog.ub), n=n)
    prog._solver_data = data
    return data


def _project_dual(y: np.ndarray, spans: list[tuple[str, int, int]]) -> np.ndarray:
    """Project a candidate ray onto the dual cone K*."""
    out = y.copy()
    for kind, lo, hi in spans:
        if kind == "zero":
            continue  # dual of {0} is everything
        if kind == "nonneg":
            out[lo:hi] = np.maximum(out[lo:hi], 0.0)
        elif kind == "soc":
            t = out[lo]
            u = out[lo + 1:hi]
            un = np.linalg.norm(u)
            if un <= t:
                continue
            if un <= -t:
                out[lo:hi] = 0.0
            else:
                alpha = (t + un) / 2.0
                out[lo] = alpha
                if un > 0:
                    out[lo + 1:hi] = alpha * u / un
    return out


def verify_infeasibility(data: SolverData, y: np.ndarray,
                         cert_tol: float = CERTIFICATE_TOL) -> InfeasibilityEvidence | None:
    """Check a Farkas ray rigorously against the variable boxes.

    Returns evidence when ``b' y < min_box (A' y)' x`` by more than
    ``cert_tol`` (after normalizing the ray), else ``None``.
    """
    y = np.asarray(y, dtype=float)
    scale = np.max(np.abs(y))
    if not math.isfinite(scale) or scale <= 0:
        return None
    y = _project_dual(y / scale, data.cone_spans)
    g = data.A.T @ y
    pos, neg = g > 0, g < 0
    terms = np.concatenate([g[pos] * data.lb[pos], g[neg] * data.ub[neg]])
    # a nonzero multiplier on an unbounded coordinate voids the bound
    box_min = float(terms.sum()) if np.all(np.isfinite(terms)) else -math.inf
    b_dot_y = float(data.b @ y)
    margin = box_min - b_dot_y
    if margin > cert_tol:
        return InfeasibilityEvidence(ray=y, margin=margin, b_dot_y=b_dot_y, box_min=box_min)
    return None


def _objective_vector(prog: ConicProgram, objective) -> np.ndarray:
    q = np.zeros(prog.n_vars)
    if objective is None:
        return q
    if isinstance(objective, dict):
        for name, coef in objective.items():
            q[prog.var(name)] += coef
        return q
    arr = np.asarray(objective, dtype=float)
    if arr.shape != (prog.n_vars,):
        raise ValueError("objective vector has wrong length")
    return arr


def solve(
    prog: ConicProgram,
    objective=None,
    cert_tol: float = CERTIFICATE_TOL,
    verbose: bool = False,
    max_iter: int = 200,
) -> SolveResult:
    """Minimize a linear objective (or test feasibility) over a program.

    Backend breakdowns and unverifiable infeasibility claims both map to
    ``UNKNOWN``; they never produce an ``INFEASIBLE`` verdict.
    """
    data = solver_data(prog)
    q = _objective_vector(prog, objective)
    return _solve_data(data, q, cert_tol=cert_tol, verbose=verbose, max_iter=max_iter)


def _solve_data(data: SolverData, q: np.ndarray, cert_tol: float = CERTIFICATE_TOL,
                verbose: bool = False, max_iter: int = 200) -> SolveResult:
    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.max_iter = max_iter
    P = sp.csc_matrix((data.n, data.n))
    try:
        solver = clarabel.DefaultSolver(P, q, data.A, data.b, data.clarabel_cones(), settings)
        sol = solver.solve()
    except BaseException as exc:  # backend panic -> Unknown, never Infeasible
        return SolveResult(status=SolveStatus.UNKNOWN, backend_status=f"backend failure: {exc}")

    name = str(sol.status)
    if sol.status == clarabel.SolverStatus.Solved:
        return SolveResult(status=SolveStatus.OPTIMAL, x=np.array(sol.x),
                           objective=float(sol.obj_val), backend_status=name)
    if sol.status in (clarabel.SolverStatus.PrimalInfeasible,
                      clarabel.SolverStatus.AlmostPrimalInfeasible):
        evidence = verify_infeasibility(data, np.array(sol.z), cert_tol)
        if evidence is not None:
            return SolveResult(status=SolveStatus.INFEASIBLE, evidence=evidence,
                               backend_status=name)
        return SolveResult(status=SolveStatus.UNKNOWN, backend_status=name + " (unverified)")
    return SolveResult(status=SolveStatus.UNKNOWN, backend_status=name)
