"""Optimization-based bound tightening over the conic relaxation.

Each sweep minimizes and maximizes every squared voltage magnitude and
every angle-difference variable over the current relaxation. Updates are
merged only at the sweep barrier, so all subproblems of one sweep share
an identical snapshot and can run in parallel. Any verified-infeasible
subproblem aborts the procedure with that evidence: an infeasible
relaxation certifies an infeasible constraint set.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import solver
from .bounds import VariableBounds
from .network import NetworkCase
from .program import ExtraRow, build_qc
from .solver import SolveResult, SolveStatus

__all__ = ["ObbtOutcome", "obbt_pass", "obbt_fixpoint", "write_trajectories"]

TIGHTEN_TOL = 1e-6      # minimum improvement worth keeping
OBJ_CUSHION = 1e-7      # guards bound updates against solver slack
DEFAULT_FIXPOINT_TOL = 1e-4


@dataclass
class ObbtOutcome:
    tightened: VariableBounds
    iterations: int
    infeasible: bool
    evidence: SolveResult | None
    history: list[float] = field(default_factory=list)
    trajectories: list[tuple[str, int, float, float]] = field(default_factory=list)
    n_solves: int = 0


def _targets(case: NetworkCase):
    """Fixed sweep order: every w_ii by bus order, then every angle
    difference by branch order; min before max."""
    out = []
    for bus in case.buses:
        out.append(("w", bus.id, {f"w:{bus.id}": 1.0}))
    for k, br in enumerate(case.branches):
        out.append(("th", k, {f"th:{br.from_bus}": 1.0, f"th:{br.to_bus}": -1.0}))
    return out


_WORKER_DATA = None


def _init_worker(data):
    global _WORKER_DATA
    _WORKER_DATA = data


def _worker_solve(args):
    tid, q = args
    res = solver._solve_data(_WORKER_DATA, q)
    return tid, res


def _record(trajectories, case, bounds: VariableBounds, sweep: int):
    for i, bus in enumerate(case.buses):
        trajectories.append((f"w:{bus.id}", sweep,
                             float(bounds.v_min[i] ** 2), float(bounds.v_max[i] ** 2)))
    for k, br in enumerate(case.branches):
        trajectories.append((f"theta:({br.from_bus},{br.to_bus})", sweep,
                             float(bounds.theta_min[k]), float(bounds.theta_max[k])))


def obbt_pass(
    case: NetworkCase,
    bounds: VariableBounds,
    extra: tuple[ExtraRow, ...] = (),
    threads: int = 1,
    tighten_tol: float = TIGHTEN_TOL,
) -> ObbtOutcome:
    """One tightening sweep over an immutable bound snapshot."""
    prog = build_qc(case, bounds, extra)
    data = solver.solver_data(prog)
    targets = _targets(case)

    tasks = []
    for t, (kind, key, coeffs) in enumerate(targets):
        q = np.zeros(prog.n_vars)
        for name, coef in coeffs.items():
            q[prog.var(name)] += coef
        tasks.append((2 * t, q))          # minimize
        tasks.append((2 * t + 1, -q))     # maximize (minimize the negation)

    results: dict[int, SolveResult] = {}
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker,
                                 initargs=(data,)) as pool:
            for tid, res in pool.map(_worker_solve, tasks, chunksize=4):
                results[tid] = res
    else:
        for tid, q in tasks:
            res = solver._solve_data(data, q)
            results[tid] = res
            if res.is_infeasible:
                break  # sweep aborts; remaining subproblems are moot

    # evidence scan in fixed task order keeps the outcome deterministic
    for tid in sorted(results):
        res = results[tid]
        if res.is_infeasible:
            return ObbtOutcome(tightened=bounds, iterations=1, infeasible=True,
                               evidence=res, n_solves=len(results))

    new = bounds.copy()
    v_min, v_max = new.v_min.copy(), new.v_max.copy()
    th_min, th_max = new.theta_min.copy(), new.theta_max.copy()
    for t, (kind, key, _) in enumerate(targets):
        lo_res = results.get(2 * t)
        hi_res = results.get(2 * t + 1)
        lo_val = hi_val = None
        if lo_res is not None and lo_res.status is SolveStatus.OPTIMAL:
            lo_val = lo_res.objective - OBJ_CUSHION * (1.0 + abs(lo_res.objective))
        if hi_res is not None and hi_res.status is SolveStatus.OPTIMAL:
            hi_val = -hi_res.objective + OBJ_CUSHION * (1.0 + abs(hi_res.objective))
        if kind == "w":
            i = case.bus_index(key)
            if lo_val is not None and lo_val > 0:
                cand = math.sqrt(lo_val)
                if cand > v_min[i] + tighten_tol:
                    v_min[i] = min(cand, v_max[i])
            if hi_val is not None and hi_val > 0:
                cand = math.sqrt(hi_val)
                if cand < v_max[i] - tighten_tol:
                    v_max[i] = max(cand, v_min[i])
        else:
            k = key
            if lo_val is not None and lo_val > th_min[k] + tighten_tol:
                th_min[k] = min(lo_val, th_max[k])
            if hi_val is not None and hi_val < th_max[k] - tighten_tol:
                th_max[k] = max(hi_val, th_min[k])

    tightened = VariableBounds(v_min=v_min, v_max=v_max, theta_min=th_min, theta_max=th_max)
    return ObbtOutcome(tightened=tightened, iterations=1, infeasible=False,
                       evidence=None, n_solves=len(results))


def obbt_fixpoint(
    case: NetworkCase,
    bounds: VariableBounds,
    extra: tuple[ExtraRow, ...] = (),
    tol: float = DEFAULT_FIXPOINT_TOL,
    max_sweeps: int = 10,
    threads: int = 1,
    tighten_tol: float = TIGHTEN_TOL,
) -> ObbtOutcome:
    """Sweep until no bound moves more than ``tol`` or the relaxation is
    proven empty. Bound widths never increase across sweeps."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_sweeps < 1:
        raise ValueError("max_sweeps must be at least 1")
    current = bounds
    history: list[float] = []
    trajectories: list[tuple[str, int, float, float]] = []
    _record(trajectories, case, current, 0)
    n_solves = 0
    for sweep in range(1, max_sweeps + 1):
        outcome = obbt_pass(case, current, extra, threads=threads, tighten_tol=tighten_tol)
        n_solves += outcome.n_solves
        if outcome.infeasible:
            return ObbtOutcome(tightened=current, iterations=sweep, infeasible=True,
                               evidence=outcome.evidence, history=history,
                               trajectories=trajectories, n_solves=n_solves)
        change = outcome.tightened.max_change_from(current)
        history.append(change)
        current = outcome.tightened
        _record(trajectories, case, current, sweep)
        if change <= tol:
            return ObbtOutcome(tightened=current, iterations=sweep, infeasible=False,
                               evidence=None, history=history,
                               trajectories=trajectories, n_solves=n_solves)
    return ObbtOutcome(tightened=current, iterations=max_sweeps, infeasible=False,
                       evidence=None, history=history, trajectories=trajectories,
                       n_solves=n_solves)


def write_trajectories(outcome: ObbtOutcome, path: str | Path) -> None:
    """CSV dump of per-variable bound trajectories."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variable", "sweep", "lower", "upper"])
        for var, sweep, lo, hi in outcome.trajectories:
            writer.writerow([var, sweep, f"{lo:.12g}", f"{hi:.12g}"])
