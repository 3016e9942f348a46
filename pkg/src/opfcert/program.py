"""Second-order-cone relaxation of the OPF constraint set.

The program lifts voltage products into ``w``/``c``/``s`` variables,
wraps every nonconvex term in its convex envelope, and keeps the result
purely conic: linear rows plus second-order cones.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .bounds import VariableBounds
from .envelopes import (
    LinearCut,
    cos_envelope,
    cos_quadratic_coeff,
    mccormick,
    sin_envelope,
    square_envelope,
)
from .errors import DimensionMismatch, InvalidBounds
from .network import NetworkCase, OperatingPoint

__all__ = ["ConicProgram", "LiftedVars", "build_qc", "lift_point", "Row", "ExtraRow"]

# extra constraint rows are (coeffs by variable name, sense, rhs)
ExtraRow = tuple[dict[str, float], str, float]


@dataclass(frozen=True)
class Row:
    idx: tuple[int, ...]
    coef: tuple[float, ...]
    rhs: float


class ConicProgram:
    """Sparse conic program: box bounds, linear rows, SOC blocks.

    Second-order cones are stored as affine blocks ``(t, u_1, ..., u_k)``
    with the meaning ``||u|| <= t``; every entry is ``coeffs . x + const``.
    The program is immutable once handed to a solver (``freeze``).
    """

    def __init__(self):
        self.names: list[str] = []
        self.index: dict[str, int] = {}
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.eq_rows: list[Row] = []
        self.ineq_rows: list[Row] = []
        self.soc_blocks: list[list[tuple[tuple[int, ...], tuple[float, ...], float]]] = []
        self._frozen = False
        self._cache = None

    # -- construction -------------------------------------------------

    def add_var(self, name: str, lb: float, ub: float) -> int:
        if self._frozen:
            raise InvalidBounds("program is frozen")
        if name in self.index:
            raise InvalidBounds(f"duplicate variable {name}")
        if lb > ub:
            raise InvalidBounds(f"variable {name} has empty box [{lb}, {ub}]")
        self.index[name] = len(self.names)
        self.names.append(name)
        self.lb.append(lb)
        self.ub.append(ub)
        return self.index[name]

    def var(self, name: str) -> int:
        try:
            return self.index[name]
        except KeyError:
            raise DimensionMismatch(f"unregistered variable {name}") from None

    def _row(self, coeffs: dict[str, float], rhs: float) -> Row:
        idx = tuple(self.var(n) for n in coeffs)
        return Row(idx=idx, coef=tuple(coeffs.values()), rhs=rhs)

    def add_eq(self, coeffs: dict[str, float], rhs: float) -> None:
        self.eq_rows.append(self._row(coeffs, rhs))

    def add_ineq(self, coeffs: dict[str, float], rhs: float) -> None:
        self.ineq_rows.append(self._row(coeffs, rhs))

    def add_cut(self, cut: LinearCut, subs: dict[str, dict[str, float]] | None = None,
                consts: dict[str, float] | None = None) -> None:
        """Emit an envelope cut, substituting affine expressions for
        the envelope's abstract variable names."""
        coeffs: dict[str, float] = {}
        rhs = cut.rhs
        for name, coef in cut.coeffs.items():
            if subs and name in subs:
                for real, factor in subs[name].items():
                    coeffs[real] = coeffs.get(real, 0.0) + coef * factor
                if consts and name in consts:
                    rhs -= coef * consts[name]
            else:
                coeffs[name] = coeffs.get(name, 0.0) + coef
        self.add_ineq(coeffs, rhs)

    def add_soc(self, rows: list[tuple[dict[str, float], float]]) -> None:
        if len(rows) < 2:
            raise InvalidBounds("cone blocks need dimension >= 2")
        block = []
        for coeffs, const in rows:
            idx = tuple(self.var(n) for n in coeffs)
            block.append((idx, tuple(coeffs.values()), const))
        self.soc_blocks.append(block)

    def freeze(self) -> "ConicProgram":
        self._frozen = True
        return self

    # -- introspection ------------------------------------------------

    @property
    def n_vars(self) -> int:
        return len(self.names)

    def value_of(self, row, x: np.ndarray) -> float:
        idx, coef = row[0], row[1]
        return float(np.dot(x[list(idx)], coef)) + (row[2] if len(row) > 2 else 0.0)

    def max_violation(self, values: dict[str, float] | np.ndarray) -> float:
        """Worst constraint violation of an assignment (negative margin
        means strictly feasible everywhere)."""
        if isinstance(values, dict):
            x = np.zeros(self.n_vars)
            for name, val in values.items():
                x[self.var(name)] = val
        else:
            x = np.asarray(values, dtype=float)
        worst = -math.inf
        lb = np.array(self.lb)
        ub = np.array(self.ub)
        worst = max(worst, float(np.max(lb - x, initial=-math.inf)))
        worst = max(worst, float(np.max(x - ub, initial=-math.inf)))
        for row in self.eq_rows:
            v = abs(float(np.dot(x[list(row.idx)], row.coef)) - row.rhs)
            worst = max(worst, v)
        for row in self.ineq_rows:
            v = float(np.dot(x[list(row.idx)], row.coef)) - row.rhs
            worst = max(worst, v)
        for block in self.soc_blocks:
            vals = [float(np.dot(x[list(idx)], coef)) + const for idx, coef, const in block]
            worst = max(worst, float(np.hypot.reduce(vals[1:]) - vals[0]))
        return worst

    def to_cbf(self) -> str:
        """Dump in the Conic Benchmark Format (CBF v3) for cross-checks
        with external solvers. Box bounds appear as linear rows."""
        lines = ["VER", "3", "", "OBJSENSE", "MIN", "", "VAR", f"{self.n_vars} 1", f"F {self.n_vars}", ""]
        rows: list[tuple[str, list[tuple[int, float]], float]] = []
        for row in self.eq_rows:
            rows.append(("L=", list(zip(row.idx, row.coef)), row.rhs))
        for row in self.ineq_rows:
            rows.append(("L-", list(zip(row.idx, row.coef)), row.rhs))
        for j in range(self.n_vars):
            if math.isfinite(self.ub[j]):
                rows.append(("L-", [(j, 1.0)], self.ub[j]))
            if math.isfinite(self.lb[j]):
                rows.append(("L+", [(j, 1.0)], self.lb[j]))
        cone_rows: list[tuple[list[tuple[int, float]], float]] = []
        cone_sizes = []
        for block in self.soc_blocks:
            cone_sizes.append(len(block))
            for idx, coef, const in block:
                cone_rows.append((list(zip(idx, coef)), const))
        groups = []
        for sense, _, _ in rows:
            groups.append(sense)
        n_scalar = len(rows)
        n_cone = len(cone_rows)
        lines += ["CON", f"{n_scalar + n_cone} {len(rows) + len(cone_sizes)}"]
        for sense in groups:
            lines.append({"L=": "L= 1", "L-": "L- 1", "L+": "L+ 1"}[sense])
        for size in cone_sizes:
            lines.append(f"Q {size}")
        lines.append("")
        acoord = []
        bcoord = []
        for i, (sense, terms, rhs) in enumerate(rows):
            for j, v in terms:
                acoord.append((i, j, v))
            if rhs != 0:
                bcoord.append((i, -rhs))
        for off, (terms, const) in enumerate(cone_rows):
            i = n_scalar + off
            for j, v in terms:
                acoord.append((i, j, v))
            if const != 0:
                bcoord.append((i, const))
        lines += ["ACOORD", str(len(acoord))]
        lines += [f"{i} {j} {v:.17g}" for i, j, v in acoord]
        lines += ["", "BCOORD", str(len(bcoord))]
        lines += [f"{i} {v:.17g}" for i, v in bcoord]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class LiftedVars:
    """Exact lifting of an operating point into relaxation coordinates."""

    wii: np.ndarray   # per bus
    wlm: np.ndarray   # per branch, V_l V_m
    clm: np.ndarray   # per branch, V_l V_m cos(shifted angle)
    slm: np.ndarray   # per branch, V_l V_m sin(shifted angle)
    values: dict[str, float]  # full assignment keyed by program names


def _interval_mul(alo: float, ahi: float, blo: float, bhi: float) -> tuple[float, float]:
    prods = (alo * blo, alo * bhi, ahi * blo, ahi * bhi)
    return min(prods), max(prods)


def _theta_caps(case: NetworkCase, bounds: VariableBounds) -> np.ndarray:
    """Per-bus |theta| caps implied by angle windows along shortest
    paths from the reference bus (used only as valid box bounds)."""
    n = case.n_bus
    adj: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    for k, br in enumerate(case.branches):
        wgt = max(abs(bounds.theta_min[k]), abs(bounds.theta_max[k]))
        f, t = case.bus_index(br.from_bus), case.bus_index(br.to_bus)
        adj[f].append((t, wgt))
        adj[t].append((f, wgt))
    dist = np.full(n, math.inf)
    ref = case.ref_index
    dist[ref] = 0.0
    heap = [(0.0, ref)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, w in adj[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def build_qc(case: NetworkCase, bounds: VariableBounds,
             extra: tuple[ExtraRow, ...] = ()) -> ConicProgram:
    """Assemble the conic relaxation of a case under the given bounds.

    Contains the lifted power balances, linear flow definitions, the
    square/product/trig envelopes, the rotated-cone product inequality,
    apparent-power cones, and angle windows. ``extra`` rows (all affine)
    are appended last; they carry setpoint fixings or a hyperplane.
    """
    if len(bounds.v_min) != case.n_bus or len(bounds.theta_min) != case.n_branch:
        raise InvalidBounds("bounds dimensions do not match case")
    prog = ConicProgram()
    caps = _theta_caps(case, bounds)
    if not np.all(np.isfinite(caps)):
        raise InvalidBounds("network is not connected from the reference bus")

    for i, bus in enumerate(case.buses):
        vlo, vhi = bounds.v_min[i], bounds.v_max[i]
        prog.add_var(f"V:{bus.id}", vlo, vhi)
        prog.add_var(f"w:{bus.id}", vlo * vlo, vhi * vhi)
        if i == case.ref_index:
            prog.add_var(f"th:{bus.id}", 0.0, 0.0)
        else:
            prog.add_var(f"th:{bus.id}", -caps[i], caps[i])

    for g, gen in enumerate(case.generators):
        prog.add_var(f"Pg:{g}", gen.P_min, gen.P_max)
        prog.add_var(f"Qg:{g}", gen.Q_min, gen.Q_max)

    for k, br in enumerate(case.branches):
        l, m = br.from_bus, br.to_bus
        li, mi = case.bus_index(l), case.bus_index(m)
        s_lo, s_hi, c_lo, c_hi = bounds.trig(case, k)
        wlo, whi = _interval_mul(bounds.v_min[li], bounds.v_max[li],
                                 bounds.v_min[mi], bounds.v_max[mi])
        clo_k, chi_k = _interval_mul(wlo, whi, c_lo, c_hi)
        slo_k, shi_k = _interval_mul(wlo, whi, s_lo, s_hi)
        prog.add_var(f"wlm:{k}", wlo, whi)
        prog.add_var(f"c:{k}", clo_k, chi_k)
        prog.add_var(f"s:{k}", slo_k, shi_k)
        prog.add_var(f"C:{k}", c_lo, c_hi)
        prog.add_var(f"S:{k}", s_lo, s_hi)

        g_, b_, tau = br.g, br.b, br.tap
        bc2 = br.b_sh / 2.0
        wl_box = (bounds.v_min[li] ** 2, bounds.v_max[li] ** 2)
        wm_box = (bounds.v_min[mi] ** 2, bounds.v_max[mi] ** 2)
        # from-side flows
        pf_lo, pf_hi = _flow_box(g_ / tau**2, wl_box, -g_ / tau, (clo_k, chi_k), -b_ / tau, (slo_k, shi_k))
        qf_lo, qf_hi = _flow_box(-(b_ + bc2) / tau**2, wl_box, b_ / tau, (clo_k, chi_k), -g_ / tau, (slo_k, shi_k))
        pt_lo, pt_hi = _flow_box(g_, wm_box, -g_ / tau, (clo_k, chi_k), b_ / tau, (slo_k, shi_k))
        qt_lo, qt_hi = _flow_box(-(b_ + bc2), wm_box, b_ / tau, (clo_k, chi_k), g_ / tau, (slo_k, shi_k))
        if br.s_max is not None:
            pf_lo, pf_hi = max(pf_lo, -br.s_max), min(pf_hi, br.s_max)
            qf_lo, qf_hi = max(qf_lo, -br.s_max), min(qf_hi, br.s_max)
            pt_lo, pt_hi = max(pt_lo, -br.s_max), min(pt_hi, br.s_max)
            qt_lo, qt_hi = max(qt_lo, -br.s_max), min(qt_hi, br.s_max)
        prog.add_var(f"pf:{k}", pf_lo, pf_hi)
        prog.add_var(f"qf:{k}", qf_lo, qf_hi)
        prog.add_var(f"pt:{k}", pt_lo, pt_hi)
        prog.add_var(f"qt:{k}", qt_lo, qt_hi)

    # power balances over lifted squared magnitudes
    for i, bus in enumerate(case.buses):
        pcoef: dict[str, float] = {f"w:{bus.id}": -bus.g_sh}
        qcoef: dict[str, float] = {f"w:{bus.id}": bus.b_sh}
        for g in case.gens_at(bus.id):
            pcoef[f"Pg:{g}"] = 1.0
            qcoef[f"Qg:{g}"] = 1.0
        for k, br in enumerate(case.branches):
            if br.from_bus == bus.id:
                pcoef[f"pf:{k}"] = -1.0
                qcoef[f"qf:{k}"] = -1.0
            if br.to_bus == bus.id:
                pcoef[f"pt:{k}"] = -1.0
                qcoef[f"qt:{k}"] = -1.0
        prog.add_eq(pcoef, bus.Pd)
        prog.add_eq(qcoef, bus.Qd)

    # convex hull of each squared magnitude
    for i, bus in enumerate(case.buses):
        vlo, vhi = bounds.v_min[i], bounds.v_max[i]
        for cut in square_envelope(vlo, vhi, x=f"V:{bus.id}", w=f"w:{bus.id}"):
            prog.add_cut(cut)
        prog.add_soc([
            ({f"w:{bus.id}": 1.0}, 1.0),
            ({f"V:{bus.id}": 2.0}, 0.0),
            ({f"w:{bus.id}": 1.0}, -1.0),
        ])

    for k, br in enumerate(case.branches):
        l, m = br.from_bus, br.to_bus
        li, mi = case.bus_index(l), case.bus_index(m)
        g_, b_, tau = br.g, br.b, br.tap
        bc2 = br.b_sh / 2.0
        th_sub = {"th": {f"th:{l}": 1.0, f"th:{m}": -1.0}}
        th_const = {"th": -br.shift}

        # flow definitions over lifted variables
        prog.add_eq({f"pf:{k}": 1.0, f"w:{l}": -g_ / tau**2,
                     f"c:{k}": g_ / tau, f"s:{k}": b_ / tau}, 0.0)
        prog.add_eq({f"qf:{k}": 1.0, f"w:{l}": (b_ + bc2) / tau**2,
                     f"c:{k}": -b_ / tau, f"s:{k}": g_ / tau}, 0.0)
        prog.add_eq({f"pt:{k}": 1.0, f"w:{m}": -g_,
                     f"c:{k}": g_ / tau, f"s:{k}": -b_ / tau}, 0.0)
        prog.add_eq({f"qt:{k}": 1.0, f"w:{m}": (b_ + bc2),
                     f"c:{k}": -b_ / tau, f"s:{k}": -g_ / tau}, 0.0)

        # angle-difference window
        prog.add_ineq({f"th:{l}": 1.0, f"th:{m}": -1.0}, bounds.theta_max[k])
        prog.add_ineq({f"th:{l}": -1.0, f"th:{m}": 1.0}, -bounds.theta_min[k])

        # voltage product hull
        for cut in mccormick(bounds.v_min[li], bounds.v_max[li],
                             bounds.v_min[mi], bounds.v_max[mi],
                             x=f"V:{l}", y=f"V:{m}", z=f"wlm:{k}"):
            # careful: x=V_l, y=V_m with l==m impossible (distinct buses)
            prog.add_cut(cut)

        lo, hi = bounds.shifted_window(case, k)
        s_lo, s_hi, c_lo, c_hi = bounds.trig(case, k)
        for cut in sin_envelope(lo, hi, x="th", s=f"S:{k}"):
            prog.add_cut(cut, subs=th_sub, consts=th_const)
        for cut in cos_envelope(lo, hi, x="th", c=f"C:{k}"):
            prog.add_cut(cut, subs=th_sub, consts=th_const)
        kq = cos_quadratic_coeff(lo, hi)
        if kq > 0:
            # C <= 1 - kq * alpha^2  as  alpha^2 <= u, u = (1 - C)/kq
            u = {f"C:{k}": -1.0 / kq}
            u_const = 1.0 / kq
            prog.add_soc([
                (dict(u), u_const + 1.0),
                ({f"th:{l}": 2.0, f"th:{m}": -2.0}, -2.0 * br.shift),
                (dict(u), u_const - 1.0),
            ])
        else:
            prog.add_ineq({f"C:{k}": 1.0}, 1.0)

        # McCormick hulls of the trig products
        wlo, whi = _interval_mul(bounds.v_min[li], bounds.v_max[li],
                                 bounds.v_min[mi], bounds.v_max[mi])
        for cut in mccormick(wlo, whi, c_lo, c_hi, x=f"wlm:{k}", y=f"C:{k}", z=f"c:{k}"):
            prog.add_cut(cut)
        for cut in mccormick(wlo, whi, s_lo, s_hi, x=f"wlm:{k}", y=f"S:{k}", z=f"s:{k}"):
            prog.add_cut(cut)

        # lifted product inequality as a rotated cone
        prog.add_soc([
            ({f"w:{l}": 1.0, f"w:{m}": 1.0}, 0.0),
            ({f"c:{k}": 2.0}, 0.0),
            ({f"s:{k}": 2.0}, 0.0),
            ({f"w:{l}": 1.0, f"w:{m}": -1.0}, 0.0),
        ])

        # apparent-power ratings
        if br.s_max is not None:
            prog.add_soc([({}, br.s_max), ({f"pf:{k}": 1.0}, 0.0), ({f"qf:{k}": 1.0}, 0.0)])
            prog.add_soc([({}, br.s_max), ({f"pt:{k}": 1.0}, 0.0), ({f"qt:{k}": 1.0}, 0.0)])

    for coeffs, sense, rhs in extra:
        if sense == "==":
            prog.add_eq(dict(coeffs), rhs)
        elif sense == "<=":
            prog.add_ineq(dict(coeffs), rhs)
        else:
            raise InvalidBounds(f"unknown constraint sense {sense!r}")

    return prog.freeze()


def _flow_box(a: float, xbox: tuple[float, float], bcoef: float,
              ybox: tuple[float, float], ccoef: float, zbox: tuple[float, float]):
    """Interval of ``a x + bcoef y + ccoef z`` over box factors."""
    lo = hi = 0.0
    for coef, (blo, bhi) in ((a, xbox), (bcoef, ybox), (ccoef, zbox)):
        t1, t2 = coef * blo, coef * bhi
        lo += min(t1, t2)
        hi += max(t1, t2)
    return lo, hi


def lift_point(case: NetworkCase, point: OperatingPoint) -> LiftedVars:
    """Exact lifting; the rotated-cone inequality holds with equality."""
    values: dict[str, float] = {}
    wii = point.V**2
    for i, bus in enumerate(case.buses):
        values[f"V:{bus.id}"] = float(point.V[i])
        values[f"w:{bus.id}"] = float(wii[i])
        values[f"th:{bus.id}"] = float(point.theta[i])
    for g in range(case.n_gen):
        values[f"Pg:{g}"] = float(point.Pg[g])
        values[f"Qg:{g}"] = float(point.Qg[g])
    wlm = np.empty(case.n_branch)
    clm = np.empty(case.n_branch)
    slm = np.empty(case.n_branch)
    for k, br in enumerate(case.branches):
        li, mi = case.bus_index(br.from_bus), case.bus_index(br.to_bus)
        a = point.theta[li] - point.theta[mi] - br.shift
        wlm[k] = point.V[li] * point.V[mi]
        clm[k] = wlm[k] * math.cos(a)
        slm[k] = wlm[k] * math.sin(a)
        values[f"wlm:{k}"] = float(wlm[k])
        values[f"c:{k}"] = float(clm[k])
        values[f"s:{k}"] = float(slm[k])
        values[f"C:{k}"] = math.cos(a)
        values[f"S:{k}"] = math.sin(a)
        values[f"pf:{k}"] = float(point.p_fr[k])
        values[f"qf:{k}"] = float(point.q_fr[k])
        values[f"pt:{k}"] = float(point.p_to[k])
        values[f"qt:{k}"] = float(point.q_to[k])
    return LiftedVars(wii=wii, wlm=wlm, clm=clm, slm=slm, values=values)
