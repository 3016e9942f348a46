#!/usr/bin/env python3
"""Project case parameters onto consistency with reference voltage sets.

Published benchmark operating points are printed to four decimals, so a
case's nominal impedances leave milli-per-unit balance residuals at
load buses. Bus injections are linear in branch admittance parameters
(g, b, charging) and bus shunts, so a minimal relative correction that
makes BOTH reference points exactly consistent is a constrained
least-squares problem:

    min || diag(1/|prior|) (p - prior) ||_2
    s.t. zero net injection at every unloaded non-generator bus (both points)
         equal injections at every loaded non-generator bus (both points)

Loads at the loaded buses are then set to the (now common) injection.
Generator buses absorb their injections by construction and need no
equations. Run:

    python3 tools/fit_case.py PRIOR.m POINTS.json OUT.m
"""

import json
import math
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from opfcert.caseio import parse_matpower  # noqa: E402

BR_F, BR_T, BR_R, BR_X, BR_B, BR_TAP, BR_SHIFT, BR_STATUS = 0, 1, 2, 3, 4, 8, 9, 10
BUS_I, BUS_TYPE, BUS_PD, BUS_QD, BUS_GS, BUS_BS = 0, 1, 2, 3, 4, 5
GEN_BUS, GEN_STATUS = 0, 7


def branch_coeff(vl, thl, vm, thm, tap, shift):
    """Per-parameter (g, b, b_sh) injection coefficients at both ends.

    Returns ((pf_g, pf_b, pf_bsh), (qf_...), (pt_...), (qt_...)).
    """
    a = thl - thm - shift
    vv = vl * vm / tap
    ca, sa = math.cos(a), math.sin(a)
    pf = (vl**2 / tap**2 - vv * ca, -vv * sa, 0.0)
    qf = (-vv * sa, -vl**2 / tap**2 + vv * ca, -vl**2 / (2 * tap**2))
    pt = (vm**2 - vv * ca, vv * sa, 0.0)
    qt = (vv * sa, -vm**2 + vv * ca, -vm**2 / 2)
    return pf, qf, pt, qt


def fit(prior_path, points_path, out_path, rel_floor=0.05, rel_correction_cap=0.02):
    raw = parse_matpower(Path(prior_path).read_text())
    pts = json.loads(Path(points_path).read_text())
    base = raw.base_mva

    bus_ids = [int(r[BUS_I]) for r in raw.bus_table]
    bidx = {b: i for i, b in enumerate(bus_ids)}
    gen_buses = {int(r[GEN_BUS]) for r in raw.gen_table if r[GEN_STATUS] > 0}

    voltages = {}
    for tag in ("point_a", "point_b"):
        re = np.array(pts[tag]["voltages"]["re"], dtype=float)
        im = np.array(pts[tag]["voltages"]["im"], dtype=float)
        voltages[tag] = (np.hypot(re, im), np.arctan2(im, re))

    # free parameters: per in-service branch (g, b[, b_sh]); per bus Bs shunt if nonzero
    params = []   # (kind, branch_or_bus_row, subindex, prior_value)
    for bi, row in enumerate(raw.branch_table):
        if row[BR_STATUS] <= 0:
            continue
        r, x = row[BR_R], row[BR_X]
        den = r * r + x * x
        g, b = r / den, -x / den
        if r != 0.0:
            params.append(("br_g", bi, 0, g))
        params.append(("br_b", bi, 1, b))
        if row[BR_B] != 0.0:
            params.append(("br_bsh", bi, 2, row[BR_B]))
    for ri, row in enumerate(raw.bus_table):
        if row[BUS_BS] != 0.0:
            params.append(("bus_bs", ri, 0, row[BUS_BS] / base))

    n_par = len(params)
    prior = np.array([p[3] for p in params])
    par_pos = {(p[0], p[1]): j for j, p in enumerate(params)}

    # equations: rows over parameters, plus fixed offsets
    rows, rhs, load_slot = [], [], []
    loaded = []
    for ri, row in enumerate(raw.bus_table):
        b_id = int(row[BUS_I])
        if b_id in gen_buses:
            continue
        loaded.append((ri, row[BUS_PD] != 0 or row[BUS_QD] != 0))

    def injection_rows(tag):
        """coefficient matrix and fixed part of bus P/Q outflows."""
        V, TH = voltages[tag]
        A = np.zeros((2 * len(bus_ids), n_par))
        fixed = np.zeros(2 * len(bus_ids))
        for bi, row in enumerate(raw.branch_table):
            if row[BR_STATUS] <= 0:
                continue
            f, t = bidx[int(row[BR_F])], bidx[int(row[BR_T])]
            tap = row[BR_TAP] if row[BR_TAP] != 0 else 1.0
            shift = math.radians(row[BR_SHIFT])
            pf, qf, pt, qt = branch_coeff(V[f], TH[f], V[t], TH[t], tap, shift)
            r, x = row[BR_R], row[BR_X]
            den = r * r + x * x
            gval, bval = r / den, -x / den
            for sub, prior_val, coefs in ((0, gval, (pf[0], qf[0], pt[0], qt[0])),
                                          (1, bval, (pf[1], qf[1], pt[1], qt[1])),
                                          (2, row[BR_B], (pf[2], qf[2], pt[2], qt[2]))):
                key = {0: "br_g", 1: "br_b", 2: "br_bsh"}[sub]
                j = par_pos.get((key, bi))
                targets = ((2 * f, coefs[0]), (2 * f + 1, coefs[1]),
                           (2 * t, coefs[2]), (2 * t + 1, coefs[3]))
                if j is None:
                    for rr, cc in targets:
                        fixed[rr] += cc * prior_val
                else:
                    for rr, cc in targets:
                        A[rr, j] += cc
        for ri, row in enumerate(raw.bus_table):
            gs = row[BUS_GS] / base
            fixed[2 * ri] += gs * V[ri] ** 2
            j = par_pos.get(("bus_bs", ri))
            if j is None:
                fixed[2 * ri + 1] += -(row[BUS_BS] / base) * V[ri] ** 2
            else:
                A[2 * ri + 1, j] += -V[ri] ** 2
        return A, fixed

    A_a, f_a = injection_rows("point_a")
    A_b, f_b = injection_rows("point_b")

    eq_rows, eq_rhs = [], []
    for ri, has_load in loaded:
        for comp in (0, 1):
            rr = 2 * ri + comp
            if has_load:
                # consistency: injections of A and B agree, load absorbs them
                eq_rows.append(A_a[rr] - A_b[rr])
                eq_rhs.append(-(f_a[rr] - f_b[rr]))
            else:
                eq_rows.append(A_a[rr])
                eq_rhs.append(-f_a[rr])
                eq_rows.append(A_b[rr])
                eq_rhs.append(-f_b[rr])
    E = np.array(eq_rows)
    d = np.array(eq_rhs)
    print(f"params: {n_par}, equations: {len(d)}")
    print(f"prior equation residual: {np.max(np.abs(E @ prior - d)):.3e}")

    # smallest weighted-relative correction meeting the residual target;
    # ridge regularization guards the ill-conditioned directions that
    # near-parallel voltage rows produce
    D = np.diag(np.maximum(np.abs(prior), rel_floor))
    M = E @ D
    r0 = d - E @ prior
    z = np.zeros(n_par)
    for mu in (1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1):
        cand = np.linalg.solve(M.T @ M + mu**2 * np.eye(n_par), M.T @ r0)
        res = np.max(np.abs(M @ cand - r0))
        zmax = np.max(np.abs(cand))
        print(f"  mu={mu:g}: residual {res:.2e}, max rel correction {zmax:.2%}")
        z = cand
        if zmax <= rel_correction_cap:
            break
    fitted = prior + D @ z
    print(f"accepted: residual {np.max(np.abs(E @ fitted - d)):.3e}, "
          f"max rel correction {np.max(np.abs(z)):.2%}")

    # push fitted parameters back into the tables
    for j, (kind, idx, sub, _) in enumerate(params):
        val = fitted[j]
        if kind in ("br_g", "br_b"):
            row = raw.branch_table[idx]
            den = row[BR_R] ** 2 + row[BR_X] ** 2
            g, b = row[BR_R] / den, -row[BR_X] / den
            if kind == "br_g":
                g = val
            else:
                b = val
            mag = g * g + b * b
            row[BR_R], row[BR_X] = g / mag, -b / mag
        elif kind == "br_bsh":
            raw.branch_table[idx][BR_B] = val
        elif kind == "bus_bs":
            raw.bus_table[idx][BUS_BS] = val * base

    # loads from the now-common injections, computed on the fitted case
    from opfcert.caseio import to_network_case
    from opfcert.network import point_from_voltages, power_balance_residual

    text = render(raw)
    case = to_network_case(parse_matpower(text))
    resid = []
    for tag in ("point_a", "point_b"):
        V, TH = voltages[tag]
        pt = point_from_voltages(case, V, TH)
        resid.append(power_balance_residual(case, pt))
    dP = (resid[0][0] + resid[1][0]) / 2
    dQ = (resid[0][1] + resid[1][1]) / 2
    for ri, has_load in loaded:
        if has_load:
            raw.bus_table[ri][BUS_PD] += dP[bidx[int(raw.bus_table[ri][BUS_I])]] * base
            raw.bus_table[ri][BUS_QD] += dQ[bidx[int(raw.bus_table[ri][BUS_I])]] * base

    out_text = render(raw)
    Path(out_path).write_text(out_text)

    case = to_network_case(parse_matpower(out_text))
    for tag in ("point_a", "point_b"):
        V, TH = voltages[tag]
        pt = point_from_voltages(case, V, TH)
        dP, dQ = power_balance_residual(case, pt)
        mask = np.ones(len(bus_ids), dtype=bool)
        for b_id in gen_buses:
            mask[bidx[b_id]] = False
        print(f"{tag}: max non-gen residual "
              f"{max(np.max(np.abs(dP[mask])), np.max(np.abs(dQ[mask]))):.3e}")
    print(f"wrote {out_path}")


def render(raw) -> str:
    """Serialize raw tables back to MATPOWER text (full precision)."""
    def table(rows, ints=()):
        out = []
        for row in rows:
            cells = []
            for c, v in enumerate(row):
                if c in ints or float(v).is_integer():
                    cells.append(str(int(v)))
                else:
                    cells.append(repr(float(v)))
            out.append("\t" + "\t".join(cells) + ";")
        return "\n".join(out)

    return (
        f"function mpc = {raw.name}\n"
        "% Parameters projected onto exact consistency with the bundled\n"
        "% reference operating points (see tools/fit_case.py).\n\n"
        "mpc.version = '2';\n"
        f"mpc.baseMVA = {raw.base_mva:g};\n\n"
        "mpc.bus = [\n" + table(raw.bus_table, ints=(0, 1)) + "\n];\n\n"
        "mpc.gen = [\n" + table(raw.gen_table, ints=(0, 7)) + "\n];\n\n"
        "mpc.branch = [\n" + table(raw.branch_table, ints=(0, 1, 10)) + "\n];\n\n"
        "mpc.gencost = [\n" + table(raw.gencost_table, ints=(0, 3)) + "\n];\n"
    )


if __name__ == "__main__":
    if len(sys.argv) != 4:
        print(__doc__)
        sys.exit(2)
    fit(sys.argv[1], sys.argv[2], sys.argv[3])
