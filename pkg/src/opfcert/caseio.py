"""MATPOWER-style case parsing, per-unit conversion, and report I/O."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    IoFailure,
    IslandedBus,
    MalformedTable,
    MissingSection,
    MultipleReferenceBuses,
    NonNumericField,
    NoReferenceBus,
    ZeroImpedanceBranch,
)
from .network import Branch, Bus, CostCurve, Generator, NetworkCase

__all__ = ["RawCaseFile", "parse_matpower", "to_network_case", "write_report", "read_report"]

ANGLE_DEFAULT_DEG = 89.9

# column indices within the supported MATPOWER layout
BUS_I, BUS_TYPE, BUS_PD, BUS_QD, BUS_GS, BUS_BS = 0, 1, 2, 3, 4, 5
BUS_VMAX, BUS_VMIN = 11, 12
GEN_BUS, GEN_PG, GEN_QG, GEN_QMAX, GEN_QMIN, GEN_VG = 0, 1, 2, 3, 4, 5
GEN_STATUS, GEN_PMAX, GEN_PMIN = 7, 8, 9
BR_F, BR_T, BR_R, BR_X, BR_B, BR_RATE_A = 0, 1, 2, 3, 4, 5
BR_TAP, BR_SHIFT, BR_STATUS, BR_ANGMIN, BR_ANGMAX = 8, 9, 10, 11, 12


@dataclass
class RawCaseFile:
    """Losslessly captured case tables, still in mixed MW/ohm units."""

    name: str
    base_mva: float
    bus_table: list[list[float]]
    gen_table: list[list[float]]
    branch_table: list[list[float]]
    gencost_table: list[list[float]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _parse_matrix(body: str, section: str) -> list[list[float]]:
    rows: list[list[float]] = []
    for chunk in body.replace("\n", ";").split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        row = []
        for tok in chunk.split():
            try:
                row.append(float(tok))
            except ValueError:
                raise NonNumericField(f"{section}: cannot parse {tok!r}") from None
        rows.append(row)
    if rows:
        width = len(rows[0])
        for i, row in enumerate(rows):
            if len(row) != width:
                raise MalformedTable(
                    f"{section}: row {i + 1} has {len(row)} columns, expected {width}"
                )
    return rows


def parse_matpower(text: str) -> RawCaseFile:
    """Parse MATPOWER case text into raw tables.

    Requires baseMVA, bus, gen, and branch sections; gencost is
    optional (a warning is recorded when absent). Unknown trailing
    columns are preserved in the tables but ignored downstream.
    """
    clean = _strip_comments(text)
    m = re.search(r"function\s+\w+\s*=\s*(\w+)", clean)
    name = m.group(1) if m else "case"

    m = re.search(r"\.baseMVA\s*=\s*([0-9eE+.\-]+)\s*;", clean)
    if not m:
        raise MissingSection("baseMVA not found")
    try:
        base_mva = float(m.group(1))
    except ValueError:
        raise NonNumericField(f"baseMVA: cannot parse {m.group(1)!r}") from None

    tables: dict[str, list[list[float]]] = {}
    for section in ("bus", "gen", "branch", "gencost"):
        m = re.search(rf"\.{section}\s*=\s*\[(.*?)\];", clean, flags=re.DOTALL)
        if m:
            tables[section] = _parse_matrix(m.group(1), section)

    warnings = []
    for section in ("bus", "gen", "branch"):
        if section not in tables or not tables[section]:
            raise MissingSection(f"{section} table not found")
    if "gencost" not in tables:
        warnings.append("gencost table absent; zero costs assumed")
        tables["gencost"] = []

    if any(len(r) < 13 for r in tables["bus"]):
        raise MalformedTable("bus table has fewer than 13 columns")
    if any(len(r) < 10 for r in tables["gen"]):
        raise MalformedTable("gen table has fewer than 10 columns")
    if any(len(r) < 13 for r in tables["branch"]):
        raise MalformedTable("branch table has fewer than 13 columns")

    raw = RawCaseFile(
        name=name,
        base_mva=base_mva,
        bus_table=tables["bus"],
        gen_table=tables["gen"],
        branch_table=tables["branch"],
        gencost_table=tables["gencost"],
        warnings=warnings,
    )
    _validate_raw(raw)
    return raw


def _validate_raw(raw: RawCaseFile) -> None:
    if raw.base_mva <= 0:
        raise MalformedTable(f"baseMVA must be positive, got {raw.base_mva}")
    bus_ids = {int(r[BUS_I]) for r in raw.bus_table}
    if len(bus_ids) != len(raw.bus_table):
        raise MalformedTable("duplicate bus ids")
    for r in raw.gen_table:
        if int(r[GEN_BUS]) not in bus_ids:
            raise MalformedTable(f"generator references unknown bus {int(r[GEN_BUS])}")
    for r in raw.branch_table:
        f, t = int(r[BR_F]), int(r[BR_T])
        if f not in bus_ids or t not in bus_ids:
            raise MalformedTable(f"branch references unknown bus ({f},{t})")
        if f == t:
            raise MalformedTable(f"branch connects bus {f} to itself")


def _angle_window(angmin_deg: float, angmax_deg: float) -> tuple[float, float]:
    """Angle-difference window in radians, defaulted into (-90, 90).

    Zero-zero or out-of-window limits are treated as absent and replaced
    by the +/-89.9 degree default that keeps the trigonometric envelope
    formulas valid.
    """
    lo, hi = angmin_deg, angmax_deg
    if lo == 0 and hi == 0:
        lo, hi = -ANGLE_DEFAULT_DEG, ANGLE_DEFAULT_DEG
    lo = max(lo, -ANGLE_DEFAULT_DEG)
    hi = min(hi, ANGLE_DEFAULT_DEG)
    if lo >= hi:
        raise MalformedTable(f"empty angle window [{angmin_deg}, {angmax_deg}] deg")
    return math.radians(lo), math.radians(hi)


def to_network_case(raw: RawCaseFile) -> NetworkCase:
    """Convert raw tables into the canonical per-unit network model.

    Drops out-of-service branches and generators, converts MW/MVAr
    columns onto the MVA base, and derives series admittances.
    """
    base = raw.base_mva
    buses = []
    ref_ids = []
    for r in raw.bus_table:
        bus_id = int(r[BUS_I])
        if int(r[BUS_TYPE]) == 3:
            ref_ids.append(bus_id)
        buses.append(Bus(
            id=bus_id,
            Pd=r[BUS_PD] / base,
            Qd=r[BUS_QD] / base,
            g_sh=r[BUS_GS] / base,
            b_sh=r[BUS_BS] / base,
            V_min=r[BUS_VMIN],
            V_max=r[BUS_VMAX],
        ))
    if not ref_ids:
        raise NoReferenceBus("no type-3 bus in case")
    if len(ref_ids) > 1:
        raise MultipleReferenceBuses(f"type-3 buses: {ref_ids}")

    costs = []
    for r in raw.gencost_table:
        if int(r[0]) != 2:
            raise MalformedTable("only polynomial (model 2) cost rows are supported")
        ncost = int(r[3])
        if ncost > 3:
            raise MalformedTable("cost polynomials above degree 2 are not supported")
        coeff = list(r[4:4 + ncost])
        coeff = [0.0] * (3 - len(coeff)) + coeff
        # convert $/MW^k h onto the per-unit base
        costs.append(CostCurve(c2=coeff[0] * base**2, c1=coeff[1] * base, c0=coeff[2]))

    gens = []
    for i, r in enumerate(raw.gen_table):
        if r[GEN_STATUS] <= 0:
            continue
        cost = costs[i] if i < len(costs) else CostCurve()
        gens.append(Generator(
            bus=int(r[GEN_BUS]),
            P_min=r[GEN_PMIN] / base,
            P_max=r[GEN_PMAX] / base,
            Q_min=r[GEN_QMIN] / base,
            Q_max=r[GEN_QMAX] / base,
            cost=cost,
        ))

    branches = []
    for r in raw.branch_table:
        if r[BR_STATUS] <= 0:
            continue
        rr, xx = r[BR_R], r[BR_X]
        if rr == 0 and xx == 0:
            raise ZeroImpedanceBranch(f"branch ({int(r[BR_F])},{int(r[BR_T])}) has r = x = 0")
        den = rr * rr + xx * xx
        theta_min, theta_max = _angle_window(r[BR_ANGMIN], r[BR_ANGMAX])
        rate = r[BR_RATE_A]
        branches.append(Branch(
            from_bus=int(r[BR_F]),
            to_bus=int(r[BR_T]),
            g=rr / den,
            b=-xx / den,
            b_sh=r[BR_B],
            tap=r[BR_TAP] if r[BR_TAP] != 0 else 1.0,
            shift=math.radians(r[BR_SHIFT]),
            s_max=rate / base if rate > 0 else None,
            theta_min=theta_min,
            theta_max=theta_max,
        ))

    touched = set()
    for br in branches:
        touched.add(br.from_bus)
        touched.add(br.to_bus)
    for bus in buses:
        if bus.id not in touched:
            raise IslandedBus(f"bus {bus.id} has no in-service branch")

    return NetworkCase(
        name=raw.name,
        base_mva=base,
        buses=tuple(buses),
        generators=tuple(gens),
        branches=tuple(branches),
        ref_bus=ref_ids[0],
    )


def load_case(path: str | Path) -> NetworkCase:
    """Parse and convert a case file in one step."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return to_network_case(parse_matpower(text))


def write_report(certificate, bounds, path: str | Path) -> None:
    """Serialize a certification outcome to a JSON report.

    The schema keys are fixed: case_id, point_a, point_b, lambda,
    hyperplane, verdict, obbt_iterations, tightened_bounds, wall_time_s.
    """
    doc = {
        "case_id": certificate.case_id,
        "point_a": certificate.point_a.to_dict(),
        "point_b": certificate.point_b.to_dict(),
        "lambda": certificate.lam,
        "hyperplane": {
            "normal": [float(v) for v in certificate.hyperplane.normal],
            "offset_point": [float(v) for v in certificate.hyperplane.anchor],
            "rotation_angles_deg": [float(v) for v in certificate.hyperplane.rotation_angles],
        },
        "verdict": certificate.verdict,
        "obbt_iterations": certificate.obbt_iterations,
        "tightened_bounds": bounds.to_dict(),
        "wall_time_s": certificate.wall_time_s,
    }
    try:
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_report(path: str | Path) -> dict:
    """Read back a JSON report written by :func:`write_report`."""
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IoFailure(f"invalid report JSON in {path}: {exc}") from exc
