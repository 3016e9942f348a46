"""Disconnectedness certification for OPF feasible spaces.

Strategy: take two feasible operating points A and B whose connecting
segment (in setpoint coordinates) contains a point C with no feasible
power flow realization. Build the hyperplane through C normal to the
segment, restrict the conic relaxation to that plane, and tighten
bounds. A verified-infeasible relaxation proves every point on the plane
infeasible; since any feasible path from A to B crosses the plane, the
two points lie in different disconnected components. Anything short of
that is reported as indeterminate, never as a connectedness claim.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .bounds import VariableBounds
from .errors import (
    CaseTooLarge,
    DegeneratePoints,
    DimensionMismatch,
    InfeasibleInput,
    InvalidAxis,
    LambdaOutOfRange,
    NotFound,
    PointsNotSeparated,
)
from .network import (
    NetworkCase,
    OperatingPoint,
    SetpointVector,
    constraint_check,
    multistart_newton,
    setpoint_of,
)
from .obbt import ObbtOutcome, obbt_fixpoint
from .program import ExtraRow, build_qc
from .solver import SolveStatus, solve

__all__ = [
    "Hyperplane",
    "Certificate",
    "segment_point",
    "build_hyperplane",
    "rotate_hyperplane",
    "apply_rotation_triple",
    "certify_setpoint_infeasible",
    "search_nonconvexity",
    "certify_disconnected",
    "grid_sample_feasible_space",
    "SampleCloud",
    "setpoint_labels",
]

DEFAULT_LAMBDA_GRID = tuple(round(0.05 * k, 2) for k in range(1, 20))
SIDE_TOL = 1e-8


def setpoint_labels(case: NetworkCase) -> list[str]:
    """Human-readable names of the setpoint coordinates, in order."""
    labels = [f"pg:{case.generators[g].bus}" for g in case.nonslack_gens]
    labels += [f"v:{b}" for b in case.gen_buses]
    return labels


def lifted_coords(case: NetworkCase, point: OperatingPoint) -> np.ndarray:
    """A point's coordinates in the plane's ambient space: active power
    of every generator (reference included) followed by the squared
    voltage magnitude at every generator bus."""
    w = [point.V[case.bus_index(b)] ** 2 for b in case.gen_buses]
    return np.concatenate([point.Pg, np.asarray(w)])


@dataclass(frozen=True)
class Hyperplane:
    """Plane in the (all-generator active power, squared generator-bus
    voltage) space.

    The anchor (point C) lies on the plane by construction; rotations
    turn the normal around the anchor, so it stays on the plane. The
    first ``n_gen`` coordinates are the generator active powers in case
    order; that makes the customary "rotate about the k-th power axis"
    convention directly expressible, reference generator included.
    """

    normal: np.ndarray
    anchor: np.ndarray  # lifted coordinates of point C
    anchor_setpoint: SetpointVector
    rotation_angles: tuple[float, ...] = (0.0, 0.0, 0.0)

    def side_of(self, coords: np.ndarray) -> float:
        """Signed offset ``n . (x - anchor)`` in lifted coordinates."""
        return float(self.normal @ (np.asarray(coords) - self.anchor))

    def side(self, case: NetworkCase, point: OperatingPoint) -> float:
        return self.side_of(lifted_coords(case, point))

    def constraint_row(self, case: NetworkCase) -> ExtraRow:
        """The plane as an affine equality over program variables."""
        coeffs: dict[str, float] = {}
        for g in range(case.n_gen):
            if self.normal[g] != 0.0:
                coeffs[f"Pg:{g}"] = coeffs.get(f"Pg:{g}", 0.0) + float(self.normal[g])
        for j, bus in enumerate(case.gen_buses):
            co = float(self.normal[case.n_gen + j])
            if co != 0.0:
                coeffs[f"w:{bus}"] = coeffs.get(f"w:{bus}", 0.0) + co
        rhs = float(self.normal @ self.anchor)
        return (coeffs, "==", rhs)


@dataclass
class Certificate:
    """Outcome of a disconnectedness test."""

    case_id: str
    verdict: str  # "disconnected" | "indeterminate"
    hyperplane: Hyperplane
    obbt: ObbtOutcome
    point_a: SetpointVector
    point_b: SetpointVector
    point_c: SetpointVector
    lam: float
    wall_time_s: float
    operating_a: OperatingPoint | None = None
    operating_b: OperatingPoint | None = None

    @property
    def disconnected(self) -> bool:
        return self.verdict == "disconnected"

    @property
    def obbt_iterations(self) -> int:
        return self.obbt.iterations


def segment_point(a: SetpointVector, b: SetpointVector, lam: float) -> SetpointVector:
    """Convex combination ``lam * A + (1 - lam) * B``; lam=1 gives A."""
    if a.dim != b.dim or len(a.pg) != len(b.pg):
        raise DimensionMismatch("setpoints have different dimensions")
    if not (0.0 <= lam <= 1.0):
        raise LambdaOutOfRange(f"lambda {lam} outside [0, 1]")
    return SetpointVector(pg=lam * a.pg + (1 - lam) * b.pg, v=lam * a.v + (1 - lam) * b.v)


def build_hyperplane(case: NetworkCase, point_a: OperatingPoint,
                     point_b: OperatingPoint, lam: float) -> Hyperplane:
    """Plane normal to the A-B segment through its point at ``lam``.

    Works in lifted coordinates: normal = (Pg_A - Pg_B over all
    generators, v_A^2 - v_B^2 over generator buses); the anchor is the
    same convex combination that defines the segment point C.
    """
    ca, cb = lifted_coords(case, point_a), lifted_coords(case, point_b)
    normal = ca - cb
    if np.linalg.norm(normal) < 1e-12:
        raise DegeneratePoints("points A and B coincide in the lifted space")
    if not (0.0 <= lam <= 1.0):
        raise LambdaOutOfRange(f"lambda {lam} outside [0, 1]")
    anchor = lam * ca + (1 - lam) * cb
    c_sp = segment_point(setpoint_of(case, point_a), setpoint_of(case, point_b), lam)
    return Hyperplane(normal=normal, anchor=anchor, anchor_setpoint=c_sp)


def rotate_hyperplane(h: Hyperplane, axis: int, angle_deg: float,
                      pair: tuple[int, int] | None = None) -> Hyperplane:
    """Turn the normal by a Givens rotation, keeping the anchor fixed.

    With ``pair`` absent, the rotation holds power axis ``axis`` (0, 1,
    or 2) fixed and acts in the plane of the other two of the first
    three generator power coordinates; ``pair`` selects an explicit
    coordinate pair for anything beyond that convention.
    """
    dim = len(h.normal)
    if pair is None:
        if axis not in (0, 1, 2) or dim < 3:
            raise InvalidAxis(f"axis {axis} is not one of the first three power coordinates")
        i, j = [k for k in range(3) if k != axis]
    else:
        i, j = pair
        if not (0 <= i < dim and 0 <= j < dim and i != j):
            raise InvalidAxis(f"coordinate pair ({i}, {j}) invalid for dimension {dim}")
    rad = math.radians(angle_deg)
    co, si = math.cos(rad), math.sin(rad)
    normal = h.normal.copy()
    ni, nj = normal[i], normal[j]
    normal[i] = co * ni - si * nj
    normal[j] = si * ni + co * nj
    angles = list(h.rotation_angles)
    if pair is None:
        while len(angles) <= axis:
            angles.append(0.0)
        angles[axis] = angles[axis] + angle_deg
    return Hyperplane(normal=normal, anchor=h.anchor,
                      anchor_setpoint=h.anchor_setpoint, rotation_angles=tuple(angles))


def apply_rotation_triple(h: Hyperplane, angles_deg) -> Hyperplane:
    """Apply the three-angle rotation convention used in result tables:
    entry k turns the normal about the k-th generator power axis."""
    angles = tuple(float(a) for a in angles_deg)
    if len(angles) != 3:
        raise InvalidAxis("rotation triple must have exactly three angles")
    out = h
    for axis, angle in enumerate(angles):
        if angle != 0.0:
            out = rotate_hyperplane(out, axis, angle)
    return Hyperplane(normal=out.normal, anchor=out.anchor,
                      anchor_setpoint=out.anchor_setpoint, rotation_angles=angles)


def _setpoint_rows(case: NetworkCase, c: SetpointVector) -> tuple[ExtraRow, ...]:
    """Equality rows pinning the relaxation to a setpoint: active power
    at non-reference generators and squared magnitude at generator buses."""
    rows: list[ExtraRow] = []
    for j, g in enumerate(case.nonslack_gens):
        rows.append(({f"Pg:{g}": 1.0}, "==", float(c.pg[j])))
    for j, bus in enumerate(case.gen_buses):
        rows.append(({f"w:{bus}": 1.0}, "==", float(c.v[j]) ** 2))
    return tuple(rows)


def certify_setpoint_infeasible(
    case: NetworkCase,
    c: SetpointVector,
    bounds: VariableBounds | None = None,
    tol: float = 1e-4,
    max_sweeps: int = 10,
    threads: int = 1,
) -> ObbtOutcome:
    """Try to prove no feasible power flow realizes a setpoint.

    The relaxation admits every feasible realization of the setpoint, so
    a verified-infeasible outcome rules them all out; otherwise the
    result is indeterminate.
    """
    if len(c.pg) != len(case.nonslack_gens) or len(c.v) != len(case.gen_buses):
        raise DimensionMismatch("setpoint dimensions do not match case")
    if bounds is None:
        bounds = VariableBounds.from_case(case)
    return obbt_fixpoint(case, bounds, extra=_setpoint_rows(case, c),
                         tol=tol, max_sweeps=max_sweeps, threads=threads)


def _screen_lambda(case: NetworkCase, a: SetpointVector, b: SetpointVector,
                   lam_grid, seed: int, feas_tol: float) -> list[tuple[float, int]]:
    """Rank segment parameters by evidence that the segment point has no
    feasible realization; higher score first."""
    bounds = VariableBounds.from_case(case)
    scored: list[tuple[float, int]] = []
    for lam in lam_grid:
        c = segment_point(a, b, lam)
        feasible_found = False
        for pt in multistart_newton(case, c, seed=seed):
            if constraint_check(case, pt, feas_tol).feasible:
                feasible_found = True
                break
        if feasible_found:
            continue
        score = 1
        prog = build_qc(case, bounds, extra=_setpoint_rows(case, c))
        res = solve(prog)
        if res.is_infeasible:
            score = 2
        scored.append((lam, score))
    scored.sort(key=lambda t: (-t[1], abs(t[0] - 0.5), t[0]))
    return scored


def certify_disconnected(
    case: NetworkCase,
    point_a: OperatingPoint,
    point_b: OperatingPoint,
    rotation=(0.0, 0.0, 0.0),
    lam: float | None = None,
    bounds: VariableBounds | None = None,
    obbt_tol: float = 1e-4,
    max_sweeps: int = 10,
    threads: int = 1,
    feas_tol: float = 1e-3,
    lam_grid=DEFAULT_LAMBDA_GRID,
    seed: int = 0,
) -> Certificate:
    """Full certification pipeline for a supplied pair of points.

    Validates both points, anchors the separating plane at the chosen
    (or best-screened) segment point, applies the rotation triple, and
    runs bound tightening on the plane-restricted relaxation.
    """
    t0 = time.perf_counter()
    for name, pt in (("A", point_a), ("B", point_b)):
        report = constraint_check(case, pt, feas_tol)
        if not report.feasible:
            worst = report.violations[0] if report.violations else ("?", report.max_violation)
            raise InfeasibleInput(
                f"point {name} fails the constraint check: {worst[0]} by {worst[1]:.3g}")

    a, b = setpoint_of(case, point_a), setpoint_of(case, point_b)
    if lam is not None:
        lam_star = lam
    else:
        scored = _screen_lambda(case, a, b, lam_grid, seed, feas_tol=1e-6)
        lam_star = scored[0][0] if scored else 0.5
    c = segment_point(a, b, lam_star)

    h = build_hyperplane(case, point_a, point_b, lam_star)
    h = apply_rotation_triple(h, rotation)

    side_a = h.side(case, point_a)
    side_b = h.side(case, point_b)
    scale = np.linalg.norm(h.normal)
    if not (abs(side_a) > SIDE_TOL * scale and abs(side_b) > SIDE_TOL * scale
            and side_a * side_b < 0):
        raise PointsNotSeparated(
            f"A and B are not strictly separated (sides {side_a:.3g}, {side_b:.3g})")

    if bounds is None:
        bounds = VariableBounds.from_case(case)
    outcome = obbt_fixpoint(case, bounds, extra=(h.constraint_row(case),),
                            tol=obbt_tol, max_sweeps=max_sweeps, threads=threads)
    verdict = "disconnected" if outcome.infeasible else "indeterminate"
    return Certificate(
        case_id=case.name,
        verdict=verdict,
        hyperplane=h,
        obbt=outcome,
        point_a=a,
        point_b=b,
        point_c=c,
        lam=lam_star,
        wall_time_s=time.perf_counter() - t0,
        operating_a=point_a,
        operating_b=point_b,
    )


def _latin_hypercube(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """Stratified samples in the unit cube, one per row."""
    u = (rng.permuted(np.tile(np.arange(n), (dim, 1)), axis=1).T + rng.random((n, dim))) / n
    return u


def search_nonconvexity(
    case: NetworkCase,
    trials: int = 64,
    lam_grid=DEFAULT_LAMBDA_GRID,
    seed: int = 0,
    feas_tol: float = 1e-6,
    max_pairs: int = 40,
    obbt_tol: float = 1e-4,
    max_sweeps: int = 6,
    threads: int = 1,
):
    """Sample setpoints for feasible points with a certified-infeasible
    segment point between some pair.

    Returns ``(A, B, C, lam)`` as operating points A, B plus the segment
    data. Raises :class:`NotFound` when the budget is exhausted; that is
    never a convexity claim.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = np.random.default_rng(seed)
    nonslack = case.nonslack_gens
    gen_buses = case.gen_buses
    lo = np.array([case.generators[g].P_min for g in nonslack]
                  + [case.buses[case.bus_index(b)].V_min for b in gen_buses])
    hi = np.array([case.generators[g].P_max for g in nonslack]
                  + [case.buses[case.bus_index(b)].V_max for b in gen_buses])
    samples = lo + _latin_hypercube(rng, trials, len(lo)) * (hi - lo)

    feasible: list[tuple[SetpointVector, OperatingPoint]] = []
    for row in samples:
        sp = SetpointVector(pg=row[: len(nonslack)].copy(), v=row[len(nonslack):].copy())
        for pt in multistart_newton(case, sp, seed=seed):
            if constraint_check(case, pt, feas_tol).feasible:
                feasible.append((setpoint_of(case, pt), pt))
                break
    if len(feasible) < 2:
        raise NotFound(f"only {len(feasible)} feasible samples in {trials} trials")

    pairs = list(itertools.combinations(range(len(feasible)), 2))[:max_pairs]
    for ia, ib in pairs:
        (sa, pa), (sb, pb) = feasible[ia], feasible[ib]
        scored = _screen_lambda(case, sa, sb, lam_grid, seed, feas_tol)
        for lam, _score in scored:
            c = segment_point(sa, sb, lam)
            outcome = certify_setpoint_infeasible(case, c, tol=obbt_tol,
                                                  max_sweeps=max_sweeps, threads=threads)
            if outcome.infeasible:
                return pa, pb, c, lam
            break  # only the top-ranked lambda gets the full treatment
    raise NotFound("no certified-infeasible segment point within budget")


# -- brute-force oracle for desk-scale cases --------------------------

MAX_SAMPLER_BUSES = 10
MAX_RESOLUTION = 200


@dataclass
class SampleCloud:
    """Feasibility flags over a grid slice of the setpoint space.

    For every feasible node the realized lifted coordinates (generator
    powers, squared generator voltages) of one witnessing power flow
    solution are kept, so samples can be sided against a hyperplane.
    """

    coord_indices: tuple[int, int, int]
    axes: tuple[np.ndarray, np.ndarray, np.ndarray]
    labels: tuple[str, str, str]
    base: SetpointVector
    feasible: np.ndarray        # bool, shape (res, res, res)
    lifted: np.ndarray          # (N, n_gen + n_genbus), NaN where infeasible

    @property
    def resolution(self) -> tuple[int, ...]:
        return self.feasible.shape

    def points(self) -> np.ndarray:
        """Grid coordinates flattened to (N, 3), C-order."""
        g0, g1, g2 = np.meshgrid(*self.axes, indexing="ij")
        return np.column_stack([g0.ravel(), g1.ravel(), g2.ravel()])

    def setpoint_at(self, coords) -> SetpointVector:
        vec = self.base.as_array().copy()
        for idx, val in zip(self.coord_indices, coords):
            vec[idx] = val
        npg = len(self.base.pg)
        return SetpointVector(pg=vec[:npg], v=vec[npg:])

    def feasible_points(self) -> np.ndarray:
        return self.points()[self.feasible.ravel()]

    def cluster_labels(self) -> np.ndarray:
        """Connected components (26-neighborhood) of the feasible mask."""
        from scipy import ndimage

        labels, _ = ndimage.label(self.feasible, structure=np.ones((3, 3, 3)))
        return labels

    def n_clusters(self) -> int:
        return int(self.cluster_labels().max())

    def plane_sides(self, h: Hyperplane) -> np.ndarray:
        """Signed side values of every feasible sample's realization."""
        mask = self.feasible.ravel()
        return (self.lifted[mask] - h.anchor) @ h.normal

    def cell_diagonal(self) -> float:
        steps = [float(ax[1] - ax[0]) if len(ax) > 1 else 0.0 for ax in self.axes]
        return math.sqrt(sum(s * s for s in steps))

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([*self.labels, "feasible"])
            for row, flag in zip(self.points(), self.feasible.ravel()):
                writer.writerow([f"{row[0]:.10g}", f"{row[1]:.10g}", f"{row[2]:.10g}",
                                 int(flag)])


def grid_sample_feasible_space(
    case: NetworkCase,
    coord_indices: tuple[int, int, int] | None = None,
    resolution: int = 30,
    base: SetpointVector | None = None,
    ranges: list[tuple[float, float]] | None = None,
    seed: int = 0,
) -> SampleCloud:
    """Brute-force the feasible set over a grid of setpoints.

    Each grid node is realized with a batch multi-start power flow and
    checked against every constraint. Restricted to desk-scale cases.
    """
    if case.n_bus > MAX_SAMPLER_BUSES:
        raise CaseTooLarge(f"{case.n_bus} buses exceed the sampler limit {MAX_SAMPLER_BUSES}")
    if resolution > MAX_RESOLUTION:
        raise CaseTooLarge(f"resolution {resolution} exceeds {MAX_RESOLUTION}")
    labels_all = setpoint_labels(case)
    dim = len(labels_all)
    if coord_indices is None:
        coord_indices = (0, 1, 2) if dim >= 3 else tuple(range(dim))
    if len(coord_indices) != 3:
        raise InvalidAxis("sampler needs exactly three coordinates")
    nonslack = case.nonslack_gens
    gen_buses = case.gen_buses
    lo_all = np.array([case.generators[g].P_min for g in nonslack]
                      + [case.buses[case.bus_index(b)].V_min for b in gen_buses])
    hi_all = np.array([case.generators[g].P_max for g in nonslack]
                      + [case.buses[case.bus_index(b)].V_max for b in gen_buses])
    if base is None:
        mid = (lo_all + hi_all) / 2
        base = SetpointVector(pg=mid[: len(nonslack)], v=mid[len(nonslack):])
    axes = []
    for slot, idx in enumerate(coord_indices):
        if not (0 <= idx < dim):
            raise InvalidAxis(f"coordinate {idx} out of range for dimension {dim}")
        if ranges is not None and ranges[slot] is not None:
            lo, hi = ranges[slot]
        else:
            lo, hi = lo_all[idx], hi_all[idx]
        axes.append(np.linspace(lo, hi, resolution))

    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    vec = np.tile(base.as_array(), (len(grid), 1))
    for slot, idx in enumerate(coord_indices):
        vec[:, idx] = grid[:, slot]
    feas, lifted = _batch_feasible_setpoints(case, vec, seed=seed, want_lifted=True)
    return SampleCloud(
        coord_indices=tuple(coord_indices),
        axes=tuple(axes),
        labels=tuple(labels_all[i] for i in coord_indices),
        base=base,
        feasible=feas.reshape(resolution, resolution, resolution),
        lifted=lifted,
    )


def _lifted_from_batch(case: NetworkCase, V: np.ndarray, th: np.ndarray) -> np.ndarray:
    """Lifted (Pg per generator, w per generator bus) coordinates of
    batch power flow solutions; bus totals split by active range on
    multi-generator buses."""
    Y = case.ybus()
    Vc = V * np.exp(1j * th)
    S = Vc * np.conj(Vc @ Y.T)
    out = np.empty((len(V), case.n_gen + len(case.gen_buses)))
    for bus_id in case.gen_buses:
        i = case.bus_index(bus_id)
        gens = case.gens_at(bus_id)
        p_bus = S.real[:, i] + case.buses[i].Pd
        ranges = np.array([case.generators[g].P_max - case.generators[g].P_min for g in gens])
        share = ranges / ranges.sum() if ranges.sum() > 0 else np.full(len(gens), 1 / len(gens))
        for g, s in zip(gens, share):
            out[:, g] = p_bus * s
    for j, bus_id in enumerate(case.gen_buses):
        out[:, case.n_gen + j] = V[:, case.bus_index(bus_id)] ** 2
    return out


def _batch_feasible_setpoints(case: NetworkCase, setpoints: np.ndarray,
                              seed: int, tol: float = 1e-6, want_lifted: bool = False):
    """Vectorized multi-start feasibility flags for an array of
    setpoint vectors (rows)."""
    rng = np.random.default_rng(seed)
    n = case.n_bus
    M = len(setpoints)
    feas = np.zeros(M, dtype=bool)
    lifted = np.full((M, case.n_gen + len(case.gen_buses)), np.nan)
    starts = [(1.0, None), (0.7, None), (1.2, None)]
    for _ in range(3):
        starts.append((0.7 + 0.5 * rng.random(), rng.uniform(-0.25, 0.25, size=n)))
    for scale, th0 in starts:
        todo = ~feas
        if not np.any(todo):
            break
        V, th, ok = _batch_newton(case, setpoints[todo], v_scale=scale, theta0=th0)
        if not np.any(ok):
            continue
        good = _batch_constraints_ok(case, V, th, ok, tol)
        idx = np.flatnonzero(todo)
        feas[idx[good]] = True
        if want_lifted and np.any(good):
            lifted[idx[good]] = _lifted_from_batch(case, V[good], th[good])
    if want_lifted:
        return feas, lifted
    return feas


def _batch_newton(case: NetworkCase, setpoints: np.ndarray, v_scale: float = 1.0,
                  theta0: np.ndarray | None = None, max_iter: int = 30,
                  tol: float = 1e-8, chunk: int = 20000):
    """Newton power flow vectorized over many setpoints (same case)."""
    n = case.n_bus
    gen_idx = {case.bus_index(b) for b in case.gen_buses}
    ref = case.ref_index
    pv = [i for i in sorted(gen_idx) if i != ref]
    pq = [i for i in range(n) if i not in gen_idx and i != ref]
    ang_idx = [i for i in range(n) if i != ref]
    mag_idx = list(pq)
    m = len(ang_idx) + len(mag_idx)
    Y = case.ybus()
    G, B = Y.real, Y.imag
    npg = len(case.nonslack_gens)

    V_out = np.empty((len(setpoints), n))
    th_out = np.empty((len(setpoints), n))
    ok_out = np.zeros(len(setpoints), dtype=bool)

    for lo in range(0, len(setpoints), max(1, chunk)):
        sl = slice(lo, min(lo + chunk, len(setpoints)))
        sp = setpoints[sl]
        M = len(sp)
        P_spec = np.tile([-bus.Pd for bus in case.buses], (M, 1))
        Q_spec = np.tile([-bus.Qd for bus in case.buses], (M, 1))
        for j, g in enumerate(case.nonslack_gens):
            P_spec[:, case.bus_index(case.generators[g].bus)] += sp[:, j]
        V = np.full((M, n), v_scale)
        th = np.zeros((M, n))
        if theta0 is not None:
            th[:] = theta0
            th[:, ref] = 0.0
        for j, b in enumerate(case.gen_buses):
            V[:, case.bus_index(b)] = sp[:, npg + j]

        active = np.ones(M, dtype=bool)
        for _ in range(max_iter):
            Vc = V * np.exp(1j * th)
            S = Vc * np.conj(Vc @ Y.T)
            dP = P_spec - S.real
            dQ = Q_spec - S.imag
            f = np.concatenate([dP[:, ang_idx], dQ[:, mag_idx]], axis=1)
            conv = np.max(np.abs(f), axis=1) <= tol
            active &= ~conv
            work = np.flatnonzero(active)
            if len(work) == 0:
                break
            Vw, thw = V[work], th[work]
            Sw = S[work]
            co = np.cos(thw[:, :, None] - thw[:, None, :])
            si = np.sin(thw[:, :, None] - thw[:, None, :])
            VV = Vw[:, :, None] * Vw[:, None, :]
            H = VV * (G * si - B * co)
            N = Vw[:, :, None] * (G * co + B * si)
            Jm = -VV * (G * co + B * si)
            L = Vw[:, :, None] * (G * si - B * co)
            di = np.arange(n)
            H[:, di, di] = -Sw.imag - B.diagonal() * Vw**2
            N[:, di, di] = Sw.real / Vw + G.diagonal() * Vw
            Jm[:, di, di] = Sw.real - G.diagonal() * Vw**2
            L[:, di, di] = Sw.imag / Vw - B.diagonal() * Vw
            top = np.concatenate([H[:, ang_idx][:, :, ang_idx],
                                  N[:, ang_idx][:, :, mag_idx]], axis=2)
            bot = np.concatenate([Jm[:, mag_idx][:, :, ang_idx],
                                  L[:, mag_idx][:, :, mag_idx]], axis=2)
            J = np.concatenate([top, bot], axis=1)
            fw = f[work]
            try:
                dx = np.linalg.solve(J, fw[:, :, None])[:, :, 0]
            except np.linalg.LinAlgError:
                dx = np.full((len(work), m), np.nan)
            bad = ~np.all(np.isfinite(dx), axis=1)
            th[np.ix_(work, ang_idx)] += dx[:, : len(ang_idx)]
            if mag_idx:
                V[np.ix_(work, mag_idx)] += dx[:, len(ang_idx):]
            dead = work[bad | (np.min(V[work], axis=1) <= 1e-6)]
            active[dead] = False
            V[dead] = np.nan
        Vc = V * np.exp(1j * th)
        S = Vc * np.conj(Vc @ Y.T)
        f = np.concatenate([(P_spec - S.real)[:, ang_idx],
                            (Q_spec - S.imag)[:, mag_idx]], axis=1)
        with np.errstate(invalid="ignore"):
            ok = np.all(np.isfinite(f), axis=1) & (np.max(np.abs(f), axis=1) <= tol) \
                & np.all(V > 0, axis=1)
        V_out[sl] = V
        th_out[sl] = th
        ok_out[sl] = ok
    return V_out, th_out, ok_out


def _batch_constraints_ok(case: NetworkCase, V: np.ndarray, th: np.ndarray,
                          converged: np.ndarray, tol: float) -> np.ndarray:
    """Vectorized limit checks for converged batch solutions.

    Generator boxes are checked at bus granularity, which is exact for
    interval boxes (bus totals decompose freely across co-located units).
    """
    ok = converged.copy()
    vmin = np.array([b.V_min for b in case.buses])
    vmax = np.array([b.V_max for b in case.buses])
    with np.errstate(invalid="ignore"):
        ok &= np.all(V >= vmin - tol, axis=1) & np.all(V <= vmax + tol, axis=1)

        n = case.n_bus
        Y = case.ybus()
        Vc = V * np.exp(1j * th)
        S = Vc * np.conj(Vc @ Y.T)
        Pd = np.array([b.Pd for b in case.buses])
        Qd = np.array([b.Qd for b in case.buses])
        Pg_bus = S.real + Pd
        Qg_bus = S.imag + Qd

        gen_buses = set(case.gen_buses)
        for i, bus in enumerate(case.buses):
            if bus.id in gen_buses:
                gens = case.gens_at(bus.id)
                pmin = sum(case.generators[g].P_min for g in gens)
                pmax = sum(case.generators[g].P_max for g in gens)
                qmin = sum(case.generators[g].Q_min for g in gens)
                qmax = sum(case.generators[g].Q_max for g in gens)
                ok &= (Pg_bus[:, i] >= pmin - tol) & (Pg_bus[:, i] <= pmax + tol)
                ok &= (Qg_bus[:, i] >= qmin - tol) & (Qg_bus[:, i] <= qmax + tol)
            else:
                ok &= (np.abs(Pg_bus[:, i]) <= tol * 10) & (np.abs(Qg_bus[:, i]) <= tol * 10)

        for k, br in enumerate(case.branches):
            li, mi = case.bus_index(br.from_bus), case.bus_index(br.to_bus)
            dth = th[:, li] - th[:, mi]
            ok &= (dth >= br.theta_min - tol) & (dth <= br.theta_max + tol)
            a = dth - br.shift
            vv = V[:, li] * V[:, mi] / br.tap
            gb, bb = br.g, br.b
            bc2 = br.b_sh / 2.0
            p_fr = gb * V[:, li] ** 2 / br.tap**2 - vv * (gb * np.cos(a) + bb * np.sin(a))
            q_fr = -(bb + bc2) * V[:, li] ** 2 / br.tap**2 + vv * (bb * np.cos(a) - gb * np.sin(a))
            p_to = gb * V[:, mi] ** 2 - vv * (gb * np.cos(a) - bb * np.sin(a))
            q_to = -(bb + bc2) * V[:, mi] ** 2 + vv * (bb * np.cos(a) + gb * np.sin(a))
            if br.s_max is not None:
                ok &= np.hypot(p_fr, q_fr) <= br.s_max + tol
                ok &= np.hypot(p_to, q_to) <= br.s_max + tol
    return ok
