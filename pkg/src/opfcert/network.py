"""Per-unit network model: flows, balances, limits, and AC power flow.

All quantities are per-unit on the case MVA base. Branches follow the
standard asymmetric pi-model with off-nominal tap ratio ``tap`` and phase
shift ``shift`` folded into the from-side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch, NoConvergence

__all__ = [
    "Bus",
    "Generator",
    "CostCurve",
    "Branch",
    "NetworkCase",
    "OperatingPoint",
    "SetpointVector",
    "FeasibilityReport",
    "branch_flow",
    "power_balance_residual",
    "constraint_check",
    "generation_cost",
    "newton_solve",
    "multistart_newton",
    "point_from_voltages",
]


@dataclass(frozen=True)
class Bus:
    id: int
    Pd: float
    Qd: float
    g_sh: float
    b_sh: float
    V_min: float
    V_max: float


@dataclass(frozen=True)
class CostCurve:
    c2: float = 0.0
    c1: float = 0.0
    c0: float = 0.0


@dataclass(frozen=True)
class Generator:
    bus: int
    P_min: float
    P_max: float
    Q_min: float
    Q_max: float
    cost: CostCurve = field(default_factory=CostCurve)


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    g: float
    b: float
    b_sh: float          # total line charging susceptance
    tap: float = 1.0
    shift: float = 0.0   # rad
    s_max: float | None = None
    theta_min: float = -math.radians(89.9)
    theta_max: float = math.radians(89.9)


@dataclass(frozen=True)
class NetworkCase:
    name: str
    base_mva: float
    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...]
    branches: tuple[Branch, ...]
    ref_bus: int

    def __post_init__(self):
        object.__setattr__(self, "_bus_index", {b.id: i for i, b in enumerate(self.buses)})

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    def bus_index(self, bus_id: int) -> int:
        try:
            return self._bus_index[bus_id]
        except KeyError:
            raise DimensionMismatch(f"unknown bus id {bus_id}") from None

    @property
    def ref_index(self) -> int:
        return self.bus_index(self.ref_bus)

    def gens_at(self, bus_id: int) -> list[int]:
        return [g for g, gen in enumerate(self.generators) if gen.bus == bus_id]

    @property
    def gen_buses(self) -> list[int]:
        """Unique generator bus ids, in case bus order."""
        with_gen = {g.bus for g in self.generators}
        return [b.id for b in self.buses if b.id in with_gen]

    @property
    def nonslack_gens(self) -> list[int]:
        """Generator indices not located at the reference bus."""
        return [g for g, gen in enumerate(self.generators) if gen.bus != self.ref_bus]

    def ybus(self) -> np.ndarray:
        """Dense complex bus admittance matrix (internal bus ordering)."""
        n = self.n_bus
        Y = np.zeros((n, n), dtype=complex)
        for br in self.branches:
            f, t = self.bus_index(br.from_bus), self.bus_index(br.to_bus)
            y = br.g + 1j * br.b
            ych = 1j * br.b_sh / 2.0
            tap = br.tap * np.exp(1j * br.shift)
            Y[f, f] += (y + ych) / (br.tap**2)
            Y[t, t] += y + ych
            Y[f, t] += -y / np.conj(tap)
            Y[t, f] += -y / tap
        for i, bus in enumerate(self.buses):
            Y[i, i] += bus.g_sh - 1j * bus.b_sh
        return Y


@dataclass(frozen=True)
class OperatingPoint:
    """Voltages plus the injections and flows they induce."""

    V: np.ndarray       # magnitude per bus
    theta: np.ndarray   # angle per bus, rad
    Pg: np.ndarray      # per generator
    Qg: np.ndarray
    p_fr: np.ndarray    # per branch, from-side
    q_fr: np.ndarray
    p_to: np.ndarray
    q_to: np.ndarray

    def voltage_phasors(self) -> np.ndarray:
        return self.V * np.exp(1j * self.theta)


@dataclass(frozen=True)
class SetpointVector:
    """Coordinates fixing an operating point up to power flow.

    ``pg`` holds active generation for every generator away from the
    reference bus (case generator order); ``v`` holds the voltage
    magnitude at each generator bus (case bus order).
    """

    pg: np.ndarray
    v: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.pg, self.v])

    @property
    def dim(self) -> int:
        return len(self.pg) + len(self.v)

    def __eq__(self, other):
        return (
            isinstance(other, SetpointVector)
            and np.array_equal(self.pg, other.pg)
            and np.array_equal(self.v, other.v)
        )

    def to_dict(self) -> dict:
        return {"pg": [float(x) for x in self.pg], "v": [float(x) for x in self.v]}

    @classmethod
    def from_dict(cls, d: dict) -> "SetpointVector":
        return cls(pg=np.asarray(d["pg"], dtype=float), v=np.asarray(d["v"], dtype=float))


def setpoint_of(case: NetworkCase, point: OperatingPoint) -> SetpointVector:
    """Project an operating point onto setpoint coordinates."""
    pg = np.array([point.Pg[g] for g in case.nonslack_gens], dtype=float)
    v = np.array([point.V[case.bus_index(b)] for b in case.gen_buses], dtype=float)
    return SetpointVector(pg=pg, v=v)


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    violations: tuple[tuple[str, float], ...]
    max_violation: float


def branch_flow(V_l: float, th_l: float, V_m: float, th_m: float, br: Branch):
    """Terminal power flows of one branch.

    Returns ``(p_fr, q_fr, p_to, q_to)``. For ``tap == 1`` and
    ``shift == 0`` this is the plain pi-model flow pair.
    """
    a = th_l - th_m - br.shift
    vv = V_l * V_m / br.tap
    g, b = br.g, br.b
    bc2 = br.b_sh / 2.0
    p_fr = g * V_l**2 / br.tap**2 - vv * (g * math.cos(a) + b * math.sin(a))
    q_fr = -(b + bc2) * V_l**2 / br.tap**2 + vv * (b * math.cos(a) - g * math.sin(a))
    p_to = g * V_m**2 - vv * (g * math.cos(a) - b * math.sin(a))
    q_to = -(b + bc2) * V_m**2 + vv * (b * math.cos(a) + g * math.sin(a))
    return p_fr, q_fr, p_to, q_to


def _all_flows(case: NetworkCase, V: np.ndarray, theta: np.ndarray):
    nl = case.n_branch
    p_fr = np.empty(nl)
    q_fr = np.empty(nl)
    p_to = np.empty(nl)
    q_to = np.empty(nl)
    for k, br in enumerate(case.branches):
        f, t = case.bus_index(br.from_bus), case.bus_index(br.to_bus)
        p_fr[k], q_fr[k], p_to[k], q_to[k] = branch_flow(V[f], theta[f], V[t], theta[t], br)
    return p_fr, q_fr, p_to, q_to


def _bus_injections(case: NetworkCase, point: OperatingPoint):
    """Net (P, Q) flowing out of each bus into branches and shunts."""
    n = case.n_bus
    P = np.zeros(n)
    Q = np.zeros(n)
    for k, br in enumerate(case.branches):
        f, t = case.bus_index(br.from_bus), case.bus_index(br.to_bus)
        P[f] += point.p_fr[k]
        Q[f] += point.q_fr[k]
        P[t] += point.p_to[k]
        Q[t] += point.q_to[k]
    for i, bus in enumerate(case.buses):
        P[i] += bus.g_sh * point.V[i] ** 2
        Q[i] += -bus.b_sh * point.V[i] ** 2
    return P, Q


def power_balance_residual(case: NetworkCase, point: OperatingPoint):
    """Per-bus active and reactive power balance residuals.

    Zero (to solver tolerance) at any exact power flow solution.
    """
    if len(point.V) != case.n_bus or len(point.Pg) != case.n_gen:
        raise DimensionMismatch("point dimensions do not match case")
    Pout, Qout = _bus_injections(case, point)
    dP = -Pout.copy()
    dQ = -Qout.copy()
    for i, bus in enumerate(case.buses):
        dP[i] -= bus.Pd
        dQ[i] -= bus.Qd
    for g, gen in enumerate(case.generators):
        i = case.bus_index(gen.bus)
        dP[i] += point.Pg[g]
        dQ[i] += point.Qg[g]
    return dP, dQ


def constraint_check(case: NetworkCase, point: OperatingPoint, tol: float) -> FeasibilityReport:
    """Check every operating constraint; report violations above zero.

    Covers power balance, the angle reference, generation and voltage
    limits, angle-difference windows, flow-definition consistency, and
    apparent-power ratings.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    viol: list[tuple[str, float]] = []

    dP, dQ = power_balance_residual(case, point)
    for i, bus in enumerate(case.buses):
        if abs(dP[i]) > 0:
            viol.append((f"P@{bus.id}", abs(dP[i])))
        if abs(dQ[i]) > 0:
            viol.append((f"Q@{bus.id}", abs(dQ[i])))

    ref = case.ref_index
    if abs(point.theta[ref]) > 0:
        viol.append((f"thref@{case.ref_bus}", abs(point.theta[ref])))

    for g, gen in enumerate(case.generators):
        if point.Pg[g] > gen.P_max:
            viol.append((f"Pmax@g{g}", point.Pg[g] - gen.P_max))
        if point.Pg[g] < gen.P_min:
            viol.append((f"Pmin@g{g}", gen.P_min - point.Pg[g]))
        if point.Qg[g] > gen.Q_max:
            viol.append((f"Qmax@g{g}", point.Qg[g] - gen.Q_max))
        if point.Qg[g] < gen.Q_min:
            viol.append((f"Qmin@g{g}", gen.Q_min - point.Qg[g]))

    for i, bus in enumerate(case.buses):
        if point.V[i] > bus.V_max:
            viol.append((f"Vmax@{bus.id}", point.V[i] - bus.V_max))
        if point.V[i] < bus.V_min:
            viol.append((f"Vmin@{bus.id}", bus.V_min - point.V[i]))

    p_fr, q_fr, p_to, q_to = _all_flows(case, point.V, point.theta)
    for k, br in enumerate(case.branches):
        f, t = case.bus_index(br.from_bus), case.bus_index(br.to_bus)
        dth = point.theta[f] - point.theta[t]
        if dth > br.theta_max:
            viol.append((f"angmax@({br.from_bus},{br.to_bus})", dth - br.theta_max))
        if dth < br.theta_min:
            viol.append((f"angmin@({br.from_bus},{br.to_bus})", br.theta_min - dth))
        for tag, have, want in (
            ("pfr", point.p_fr[k], p_fr[k]),
            ("qfr", point.q_fr[k], q_fr[k]),
            ("pto", point.p_to[k], p_to[k]),
            ("qto", point.q_to[k], q_to[k]),
        ):
            err = abs(have - want)
            if err > 0:
                viol.append((f"flow:{tag}@({br.from_bus},{br.to_bus})", err))
        if br.s_max is not None:
            s_fr = math.hypot(point.p_fr[k], point.q_fr[k])
            s_to = math.hypot(point.p_to[k], point.q_to[k])
            if s_fr > br.s_max:
                viol.append((f"smax:fr@({br.from_bus},{br.to_bus})", s_fr - br.s_max))
            if s_to > br.s_max:
                viol.append((f"smax:to@({br.from_bus},{br.to_bus})", s_to - br.s_max))

    viol = [(tag, v) for tag, v in viol if v > 0]
    max_violation = max((v for _, v in viol), default=0.0)
    significant = tuple((tag, v) for tag, v in viol if v > tol)
    return FeasibilityReport(
        feasible=max_violation <= tol,
        violations=significant,
        max_violation=max_violation,
    )


def generation_cost(case: NetworkCase, point: OperatingPoint) -> float:
    """Total quadratic generation cost in $/h."""
    total = 0.0
    for g, gen in enumerate(case.generators):
        pg = point.Pg[g]
        total += gen.cost.c2 * pg**2 + gen.cost.c1 * pg + gen.cost.c0
    return total


def _split_reactive(case: NetworkCase, gens: list[int], q_bus: float) -> dict[int, float]:
    """Allocate a bus reactive injection across its generators.

    Single-generator buses get the exact value; multi-generator buses
    split proportionally to reactive range.
    """
    if len(gens) == 1:
        return {gens[0]: q_bus}
    ranges = np.array([case.generators[g].Q_max - case.generators[g].Q_min for g in gens])
    if ranges.sum() <= 0:
        share = np.full(len(gens), 1.0 / len(gens))
    else:
        share = ranges / ranges.sum()
    return {g: q_bus * s for g, s in zip(gens, share)}


def point_from_voltages(case: NetworkCase, V: np.ndarray, theta: np.ndarray) -> OperatingPoint:
    """Realize the operating point induced by a full voltage profile.

    Generator injections are recovered from the bus balance; buses
    without generators keep whatever imbalance the voltages imply (the
    constraint check will expose it).
    """
    V = np.asarray(V, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if len(V) != case.n_bus:
        raise DimensionMismatch("voltage vector length != number of buses")
    p_fr, q_fr, p_to, q_to = _all_flows(case, V, theta)
    point = OperatingPoint(V=V, theta=theta, Pg=np.zeros(case.n_gen),
                           Qg=np.zeros(case.n_gen), p_fr=p_fr, q_fr=q_fr,
                           p_to=p_to, q_to=q_to)
    Pout, Qout = _bus_injections(case, point)
    Pg = np.zeros(case.n_gen)
    Qg = np.zeros(case.n_gen)
    for bus_id in case.gen_buses:
        i = case.bus_index(bus_id)
        gens = case.gens_at(bus_id)
        p_bus = Pout[i] + case.buses[i].Pd
        q_bus = Qout[i] + case.buses[i].Qd
        if len(gens) == 1:
            Pg[gens[0]] = p_bus
        else:
            ranges = np.array([case.generators[g].P_max - case.generators[g].P_min for g in gens])
            share = ranges / ranges.sum() if ranges.sum() > 0 else np.full(len(gens), 1 / len(gens))
            for g, s in zip(gens, share):
                Pg[g] = p_bus * s
        for g, q in _split_reactive(case, gens, q_bus).items():
            Qg[g] = q
    return replace(point, Pg=Pg, Qg=Qg)


def _classify(case: NetworkCase):
    """(ref index, PV bus indices, PQ bus indices) in internal order."""
    gen_idx = {case.bus_index(b) for b in case.gen_buses}
    ref = case.ref_index
    pv = [i for i in sorted(gen_idx) if i != ref]
    pq = [i for i in range(case.n_bus) if i not in gen_idx and i != ref]
    return ref, pv, pq


def newton_solve(
    case: NetworkCase,
    setpoint: SetpointVector,
    init: OperatingPoint | None = None,
    max_iter: int = 50,
    tol: float = 1e-8,
    line_search: bool = False,
) -> OperatingPoint:
    """Polar Newton-Raphson power flow honoring a setpoint exactly.

    Fixes active generation at non-reference generators and voltage
    magnitude at every generator bus; the reference bus absorbs the
    mismatch. Raises :class:`NoConvergence` on iteration cap or a
    singular Jacobian.
    """
    n = case.n_bus
    ref, pv, pq = _classify(case)
    if len(setpoint.pg) != len(case.nonslack_gens) or len(setpoint.v) != len(case.gen_buses):
        raise DimensionMismatch("setpoint dimensions do not match case")

    vset = {case.bus_index(b): setpoint.v[j] for j, b in enumerate(case.gen_buses)}
    if ref not in vset:
        raise DimensionMismatch("reference bus carries no generator voltage setpoint")

    # bus-level specified injections
    P_spec = np.array([-bus.Pd for bus in case.buses])
    Q_spec = np.array([-bus.Qd for bus in case.buses])
    for j, g in enumerate(case.nonslack_gens):
        P_spec[case.bus_index(case.generators[g].bus)] += setpoint.pg[j]

    V = np.ones(n)
    theta = np.zeros(n)
    if init is not None:
        V = init.V.copy()
        theta = init.theta.copy()
    for i, v in vset.items():
        V[i] = v
    theta[ref] = 0.0

    Y = case.ybus()
    G, B = Y.real, Y.imag
    ang_idx = [i for i in range(n) if i != ref]
    mag_idx = list(pq)

    def mismatch(V, theta):
        Vc = V * np.exp(1j * theta)
        S = Vc * np.conj(Y @ Vc)
        dP = P_spec - S.real
        dQ = Q_spec - S.imag
        return np.concatenate([dP[ang_idx], dQ[mag_idx]])

    def jacobian(V, theta):
        Vc = V * np.exp(1j * theta)
        S = Vc * np.conj(Y @ Vc)
        P, Q = S.real, S.imag
        # dS/dtheta and dS/dV building blocks
        co = np.cos(theta[:, None] - theta[None, :])
        si = np.sin(theta[:, None] - theta[None, :])
        # H[i,j] = dP_i/dtheta_j ; N[i,j] = dP_i/dV_j ; J[i,j] = dQ_i/dtheta_j ; L[i,j] = dQ_i/dV_j
        VV = V[:, None] * V[None, :]
        H = VV * (G * si - B * co)
        N = V[:, None] * (G * co + B * si)
        Jm = -VV * (G * co + B * si)
        L = V[:, None] * (G * si - B * co)
        np.fill_diagonal(H, -Q - B.diagonal() * V**2)
        np.fill_diagonal(N, P / V + G.diagonal() * V)
        np.fill_diagonal(Jm, P - G.diagonal() * V**2)
        np.fill_diagonal(L, Q / V - B.diagonal() * V)
        top = np.hstack([H[np.ix_(ang_idx, ang_idx)], N[np.ix_(ang_idx, mag_idx)]])
        bot = np.hstack([Jm[np.ix_(mag_idx, ang_idx)], L[np.ix_(mag_idx, mag_idx)]])
        return np.vstack([top, bot])

    f = mismatch(V, theta)
    for _ in range(max_iter):
        if np.max(np.abs(f)) <= tol:
            break
        J = jacobian(V, theta)
        try:
            dx = np.linalg.solve(J, f)
        except np.linalg.LinAlgError:
            raise NoConvergence("singular Jacobian") from None
        if not np.all(np.isfinite(dx)):
            raise NoConvergence("non-finite Newton step")
        step = 1.0
        while True:
            th_new = theta.copy()
            V_new = V.copy()
            th_new[ang_idx] += step * dx[: len(ang_idx)]
            V_new[mag_idx] += step * dx[len(ang_idx):]
            f_new = mismatch(V_new, th_new)
            if not line_search or np.linalg.norm(f_new) < np.linalg.norm(f) or step < 1e-4:
                break
            step /= 2.0
        theta, V, f = th_new, V_new, f_new
    if np.max(np.abs(f)) > tol:
        raise NoConvergence(f"no convergence in {max_iter} iterations")
    if np.any(V <= 0):
        raise NoConvergence("iteration collapsed to nonphysical voltage")

    point = point_from_voltages(case, V, theta)
    # pin generator actives to the setpoint exactly; the reference bus
    # generator absorbs the (already converged) residual
    Pg = point.Pg.copy()
    for j, g in enumerate(case.nonslack_gens):
        Pg[g] = setpoint.pg[j]
    ref_gens = case.gens_at(case.ref_bus)
    i = case.ref_index
    Pout, _ = _bus_injections(case, point)
    p_bus = Pout[i] + case.buses[i].Pd
    if len(ref_gens) == 1:
        Pg[ref_gens[0]] = p_bus
    elif ref_gens:
        share = np.full(len(ref_gens), 1.0 / len(ref_gens))
        for g, s in zip(ref_gens, share):
            Pg[g] = p_bus * s
    return replace(point, Pg=Pg)


def multistart_newton(
    case: NetworkCase,
    setpoint: SetpointVector,
    extra_starts: int = 6,
    seed: int = 0,
    max_iter: int = 50,
    tol: float = 1e-8,
) -> list[OperatingPoint]:
    """Collect distinct power flow solutions at one setpoint.

    Restarts Newton from a flat profile plus randomized angle
    perturbations (within +/-0.25 rad) and magnitude scalings in
    {0.7, 1.0, 1.2}; low-voltage solutions are reachable this way.
    """
    rng = np.random.default_rng(seed)
    n = case.n_bus
    starts: list[tuple[np.ndarray, np.ndarray]] = [(np.ones(n), np.zeros(n))]
    scales = [0.7, 1.0, 1.2]
    for s in range(extra_starts):
        scale = scales[s % len(scales)]
        th = rng.uniform(-0.25, 0.25, size=n)
        starts.append((np.full(n, scale), th))
    solutions: list[OperatingPoint] = []
    zeros = np.zeros(case.n_gen)
    zerosl = np.zeros(case.n_branch)
    for V0, th0 in starts:
        init = OperatingPoint(V=V0, theta=th0, Pg=zeros, Qg=zeros,
                              p_fr=zerosl, q_fr=zerosl, p_to=zerosl, q_to=zerosl)
        try:
            pt = newton_solve(case, setpoint, init=init, max_iter=max_iter, tol=tol)
        except NoConvergence:
            continue
        if not any(np.allclose(pt.V, q.V, atol=1e-6) and np.allclose(pt.theta, q.theta, atol=1e-6)
                   for q in solutions):
            solutions.append(pt)
    return solutions
