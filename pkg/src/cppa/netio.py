"""Network case files: parsing, validation and the immutable market data model.

All physical quantities are per-unit on ``base_mva``; bid prices stay in
$/MWh ($/MVArh). Two input formats are supported: a versioned JSON schema
("cppa-case-v1") and a MATPOWER .m subset with loads synthesized from bus
Pd/Qd at a configurable value-of-lost-load marginal benefit.
"""

from __future__ import annotations

import cmath
import json
import math
import re
from dataclasses import dataclass, replace

CASE_SCHEMA_VERSION = "cppa-case-v1"

_INF = float("inf")


class CaseError(ValueError):
    """Malformed case file or violated data invariant."""


@dataclass(frozen=True)
class Admittance:
    """2x2 complex branch admittance, split into conductance/susceptance parts."""

    g_ff: float
    b_ff: float
    g_ft: float
    b_ft: float
    g_tf: float
    b_tf: float
    g_tt: float
    b_tt: float


@dataclass(frozen=True)
class Bus:
    id: int
    vmin: float
    vmax: float


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_c: float
    tap: float
    shift: float
    max_angle_diff: float
    current_limit_sq: float
    status: bool
    admittance: Admittance


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    pmin: float
    pmax: float
    qmin: float
    qmax: float
    cost_segments: tuple  # ((breakpoint p.u., marginal cost $/MWh), ...)
    no_load_cost: float
    startup_cost: float
    shutdown_cost: float
    initial_on: bool


@dataclass(frozen=True)
class Load:
    id: int
    bus: int
    pmax: float
    benefit_segments: tuple  # ((breakpoint p.u., marginal benefit $/MWh), ...)
    power_factor_ratio: float


@dataclass(frozen=True)
class CaseData:
    base_mva: float
    buses: tuple
    branches: tuple
    generators: tuple
    loads: tuple
    scenario_name: str
    islanded: bool = False

    def bus_map(self):
        return {b.id: b for b in self.buses}

    def branch_map(self):
        return {b.id: b for b in self.branches}


def branch_admittance(r, x, b_c=0.0, tap=1.0, shift=0.0):
    """Pi-model admittance entries for one branch.

    Y_ff = (y_s + j b_c/2) / tap^2, Y_ft = -y_s e^{-j shift} / tap,
    Y_tf = -y_s e^{+j shift} / tap, Y_tt = y_s + j b_c/2,
    with y_s = 1 / (r + jx).
    """
    if x == 0.0:
        raise CaseError("zero reactance")
    if tap <= 0.0:
        raise CaseError("tap ratio must be positive")
    y_s = 1.0 / complex(r, x)
    y_sh = complex(0.0, b_c / 2.0)
    y_ff = (y_s + y_sh) / tap**2
    y_ft = -y_s * cmath.exp(complex(0.0, -shift)) / tap
    y_tf = -y_s * cmath.exp(complex(0.0, shift)) / tap
    y_tt = y_s + y_sh
    return Admittance(
        g_ff=y_ff.real, b_ff=y_ff.imag,
        g_ft=y_ft.real, b_ft=y_ft.imag,
        g_tf=y_tf.real, b_tf=y_tf.imag,
        g_tt=y_tt.real, b_tt=y_tt.imag,
    )


def _check_pwl(segments, pmax, nondecreasing, entity):
    """Validate a piecewise-linear bid: increasing breakpoints covering
    [0, pmax], marginal values monotone in the required direction."""
    if not segments:
        raise CaseError(f"{entity}: empty bid segments")
    prev_bp = 0.0
    prev_mv = None
    for bp, mv in segments:
        if bp <= prev_bp + 1e-15:
            raise CaseError(f"{entity}: breakpoints must be strictly increasing")
        if prev_mv is not None:
            if nondecreasing and mv < prev_mv - 1e-12:
                raise CaseError(f"{entity}: marginal costs must be nondecreasing (convexity)")
            if not nondecreasing and mv > prev_mv + 1e-12:
                raise CaseError(f"{entity}: marginal benefits must be nonincreasing (concavity)")
        prev_bp, prev_mv = bp, mv
    if prev_bp < pmax - 1e-9:
        raise CaseError(f"{entity}: bid segments do not cover [0, pmax]")


def _connected_components(bus_ids, branches):
    adj = {k: [] for k in bus_ids}
    for br in branches:
        if br.status:
            adj[br.from_bus].append(br.to_bus)
            adj[br.to_bus].append(br.from_bus)
    seen = set()
    comps = []
    for root in bus_ids:
        if root in seen:
            continue
        comp = {root}
        stack = [root]
        seen.add(root)
        while stack:
            k = stack.pop()
            for m in adj[k]:
                if m not in seen:
                    seen.add(m)
                    comp.add(m)
                    stack.append(m)
        comps.append(comp)
    return comps


def _is_islanded(buses, branches, generators, loads):
    """True when any bus with attached agents is cut off from the largest
    in-service component."""
    bus_ids = [b.id for b in buses]
    comps = _connected_components(bus_ids, branches)
    main = max(comps, key=lambda c: (len(c), -min(c)))
    agent_buses = {g.bus for g in generators} | {l.bus for l in loads}
    return any(k not in main for k in agent_buses)


def _validate(base_mva, buses, branches, generators, loads, scenario_name):
    if base_mva <= 0:
        raise CaseError("base_mva must be positive")
    for name, items in (("bus", buses), ("branch", branches),
                        ("generator", generators), ("load", loads)):
        seen = set()
        for it in items:
            if it.id in seen:
                raise CaseError(f"duplicate {name} id {it.id}")
            seen.add(it.id)
    bus_ids = {b.id for b in buses}
    for b in buses:
        if not (0.0 < b.vmin <= b.vmax):
            raise CaseError(f"bus {b.id}: requires 0 < vmin <= vmax")
    for br in branches:
        if br.from_bus not in bus_ids or br.to_bus not in bus_ids:
            raise CaseError(f"branch {br.id}: unknown endpoint bus")
        if br.x == 0.0:
            raise CaseError(f"branch {br.id}: zero reactance")
        if br.tap <= 0.0:
            raise CaseError(f"branch {br.id}: tap must be positive")
        if not (0.0 < br.max_angle_diff < math.pi / 2):
            raise CaseError(f"branch {br.id}: max_angle_diff must be in (0, pi/2)")
        if br.current_limit_sq <= 0.0:
            raise CaseError(f"branch {br.id}: current_limit_sq must be positive")
    for g in generators:
        if g.bus not in bus_ids:
            raise CaseError(f"generator {g.id}: unknown bus {g.bus}")
        if g.pmin > g.pmax:
            raise CaseError(f"generator {g.id}: pmin > pmax")
        if g.qmin > g.qmax:
            raise CaseError(f"generator {g.id}: qmin > qmax")
        _check_pwl(g.cost_segments, g.pmax, True, f"generator {g.id}")
    for l in loads:
        if l.bus not in bus_ids:
            raise CaseError(f"load {l.id}: unknown bus {l.bus}")
        if l.pmax < 0.0:
            raise CaseError(f"load {l.id}: pmax must be nonnegative")
        if l.pmax > 0.0:
            _check_pwl(l.benefit_segments, l.pmax, False, f"load {l.id}")
    return CaseData(
        base_mva=float(base_mva),
        buses=tuple(sorted(buses, key=lambda b: b.id)),
        branches=tuple(sorted(branches, key=lambda b: b.id)),
        generators=tuple(sorted(generators, key=lambda g: g.id)),
        loads=tuple(sorted(loads, key=lambda l: l.id)),
        scenario_name=scenario_name,
        islanded=_is_islanded(buses, branches, generators, loads),
    )


def make_case(base_mva, buses, branches, generators, loads, scenario_name="case"):
    """Assemble and validate a CaseData from already-built components."""
    return _validate(base_mva, buses, branches, generators, loads, scenario_name)


def _req(obj, key, entity):
    if key not in obj:
        raise CaseError(f"{entity}: missing field '{key}'")
    return obj[key]


def case_from_dict(data, scenario_name="case"):
    if data.get("version") != CASE_SCHEMA_VERSION:
        raise CaseError(f"unsupported case schema version {data.get('version')!r}")
    base_mva = float(_req(data, "base_mva", "case"))
    buses = [Bus(id=int(_req(b, "id", "bus")),
                 vmin=float(_req(b, "vmin", f"bus {b.get('id')}")),
                 vmax=float(_req(b, "vmax", f"bus {b.get('id')}")))
             for b in _req(data, "buses", "case")]
    branches = []
    for b in _req(data, "branches", "case"):
        ent = f"branch {b.get('id')}"
        r = float(_req(b, "r", ent))
        x = float(_req(b, "x", ent))
        b_c = float(b.get("b_c", 0.0))
        tap = float(b.get("tap", 1.0))
        shift = float(b.get("shift", 0.0))
        if x == 0.0:
            raise CaseError(f"{ent}: zero reactance")
        branches.append(Branch(
            id=int(_req(b, "id", "branch")),
            from_bus=int(_req(b, "from", ent)),
            to_bus=int(_req(b, "to", ent)),
            r=r, x=x, b_c=b_c, tap=tap, shift=shift,
            max_angle_diff=float(_req(b, "max_angle_diff", ent)),
            current_limit_sq=float(_req(b, "current_limit_sq", ent)),
            status=bool(b.get("status", True)),
            admittance=branch_admittance(r, x, b_c, tap, shift),
        ))
    generators = []
    for g in _req(data, "generators", "case"):
        ent = f"generator {g.get('id')}"
        generators.append(Generator(
            id=int(_req(g, "id", "generator")),
            bus=int(_req(g, "bus", ent)),
            pmin=float(_req(g, "pmin", ent)),
            pmax=float(_req(g, "pmax", ent)),
            qmin=float(_req(g, "qmin", ent)),
            qmax=float(_req(g, "qmax", ent)),
            cost_segments=tuple((float(p), float(mc))
                                for p, mc in _req(g, "cost_segments", ent)),
            no_load_cost=float(g.get("no_load_cost", 0.0)),
            startup_cost=float(g.get("startup_cost", 0.0)),
            shutdown_cost=float(g.get("shutdown_cost", 0.0)),
            initial_on=bool(g.get("initial_on", False)),
        ))
    loads = []
    for l in _req(data, "loads", "case"):
        ent = f"load {l.get('id')}"
        loads.append(Load(
            id=int(_req(l, "id", "load")),
            bus=int(_req(l, "bus", ent)),
            pmax=float(_req(l, "pmax", ent)),
            benefit_segments=tuple((float(p), float(mb))
                                   for p, mb in _req(l, "benefit_segments", ent)),
            power_factor_ratio=float(l.get("power_factor_ratio", 0.0)),
        ))
    return _validate(base_mva, buses, branches, generators, loads, scenario_name)


def case_to_dict(case):
    return {
        "version": CASE_SCHEMA_VERSION,
        "base_mva": case.base_mva,
        "buses": [{"id": b.id, "vmin": b.vmin, "vmax": b.vmax} for b in case.buses],
        "branches": [{
            "id": b.id, "from": b.from_bus, "to": b.to_bus,
            "r": b.r, "x": b.x, "b_c": b.b_c, "tap": b.tap, "shift": b.shift,
            "max_angle_diff": b.max_angle_diff,
            "current_limit_sq": b.current_limit_sq,
            "status": bool(b.status),
        } for b in case.branches],
        "generators": [{
            "id": g.id, "bus": g.bus, "pmin": g.pmin, "pmax": g.pmax,
            "qmin": g.qmin, "qmax": g.qmax,
            "cost_segments": [[p, mc] for p, mc in g.cost_segments],
            "no_load_cost": g.no_load_cost, "startup_cost": g.startup_cost,
            "shutdown_cost": g.shutdown_cost, "initial_on": bool(g.initial_on),
        } for g in case.generators],
        "loads": [{
            "id": l.id, "bus": l.bus, "pmax": l.pmax,
            "benefit_segments": [[p, mb] for p, mb in l.benefit_segments],
            "power_factor_ratio": l.power_factor_ratio,
        } for l in case.loads],
    }


def save_case(case, path):
    with open(path, "w") as fh:
        json.dump(case_to_dict(case), fh, indent=2, sort_keys=True)
        fh.write("\n")


def parse_case(path, voll=1000.0):
    """Parse a case file (JSON schema or MATPOWER .m by extension)."""
    path = str(path)
    name = re.sub(r"\.(json|m)$", "", path.rsplit("/", 1)[-1])
    if path.endswith(".m"):
        return parse_matpower(path, voll=voll)
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CaseError(f"invalid JSON in {path}: {exc}") from exc
    return case_from_dict(data, scenario_name=name)


def apply_contingency(case, out_branches):
    """Copy of the case with the listed branches taken out of service."""
    known = {b.id for b in case.branches}
    for bid in out_branches:
        if bid not in known:
            raise CaseError(f"unknown branch id {bid}")
    out = set(out_branches)
    branches = tuple(replace(b, status=False) if b.id in out else b
                     for b in case.branches)
    return replace(
        case,
        branches=branches,
        islanded=_is_islanded(case.buses, branches, case.generators, case.loads),
    )


# --- MATPOWER subset reader ---------------------------------------------

_MAT_BLOCK = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\];", re.DOTALL)
_MAT_SCALAR = re.compile(r"mpc\.(\w+)\s*=\s*([0-9.eE+-]+)\s*;")


def _matrix(text):
    rows = []
    for line in re.split(r"[;\n]", text):
        line = line.split("%")[0].strip()
        if not line:
            continue
        rows.append([float(t) for t in line.replace(",", " ").split()])
    return rows


def _quad_to_pwl(c2, c1, c0, pmax_mw, base_mva):
    """Convert a quadratic cost c2 p^2 + c1 p + c0 ($/h, p in MW) to a
    3-segment convex PWL over [0, pmax] via chord slopes."""
    if pmax_mw <= 0:
        return ((1e-6, max(c1, 0.0)),)
    bps = [pmax_mw / 3.0, 2.0 * pmax_mw / 3.0, pmax_mw]
    cost = lambda p: c2 * p * p + c1 * p
    segs = []
    prev = 0.0
    for bp in bps:
        mc = (cost(bp) - cost(prev)) / (bp - prev)
        segs.append((bp / base_mva, mc))
        prev = bp
    return tuple(segs)


def _pwl_points_to_segments(points, base_mva):
    """MATPOWER PWL points (MW, $/h) to (breakpoint p.u., $/MWh) segments."""
    segs = []
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        if x1 <= x0:
            continue
        segs.append((x1 / base_mva, (y1 - y0) / (x1 - x0)))
    return tuple(segs)


def parse_matpower(path, voll=1000.0):
    """Read a MATPOWER .m subset; bus Pd/Qd become elastic loads with a
    single value-of-lost-load benefit segment at ``voll`` $/MWh."""
    with open(path) as fh:
        text = fh.read()
    scalars = {k: float(v) for k, v in _MAT_SCALAR.findall(text)}
    blocks = {k: _matrix(v) for k, v in _MAT_BLOCK.findall(text)}
    if "baseMVA" not in scalars:
        raise CaseError("MATPOWER file missing mpc.baseMVA")
    for req in ("bus", "branch", "gen"):
        if req not in blocks:
            raise CaseError(f"MATPOWER file missing mpc.{req}")
    base = scalars["baseMVA"]

    buses, loads = [], []
    load_id = 1
    for row in blocks["bus"]:
        bid = int(row[0])
        vmax = row[11] if len(row) > 11 and row[11] > 0 else 1.1
        vmin = row[12] if len(row) > 12 and row[12] > 0 else 0.9
        buses.append(Bus(id=bid, vmin=vmin, vmax=vmax))
        pd, qd = row[2], row[3]
        if pd > 0:
            pmax = pd / base
            loads.append(Load(
                id=load_id, bus=bid, pmax=pmax,
                benefit_segments=((pmax, voll),),
                power_factor_ratio=(qd / pd),
            ))
            load_id += 1

    branches = []
    for i, row in enumerate(blocks["branch"], start=1):
        r, x, b_c = row[2], row[3], row[4]
        rate_a = row[5]
        tap = row[8] if row[8] > 0 else 1.0
        shift = math.radians(row[9])
        status = bool(row[10]) if len(row) > 10 else True
        angmin = row[11] if len(row) > 11 else 0.0
        angmax = row[12] if len(row) > 12 else 0.0
        if angmin < 0 and angmax > 0:
            ang = math.radians(min(-angmin, angmax))
            ang = min(ang, math.pi / 2 - 1e-6)
        else:
            ang = math.pi / 3
        flow_cap = rate_a / base if rate_a > 0 else 100.0
        branches.append(Branch(
            id=i, from_bus=int(row[0]), to_bus=int(row[1]),
            r=r, x=x, b_c=b_c, tap=tap, shift=shift,
            max_angle_diff=ang, current_limit_sq=flow_cap**2, status=status,
            admittance=branch_admittance(r, x, b_c, tap, shift),
        ))

    gencost = blocks.get("gencost", [])
    generators = []
    for i, row in enumerate(blocks["gen"], start=1):
        status = row[7] > 0 if len(row) > 7 else True
        if not status:
            continue
        pmax = row[8] / base
        pmin = row[9] / base
        qmax = row[3] / base
        qmin = row[4] / base
        startup = shutdown = no_load = 0.0
        if i - 1 < len(gencost):
            crow = gencost[i - 1]
            model_kind = int(crow[0])
            startup, shutdown = crow[1], crow[2]
            n = int(crow[3])
            params = crow[4:4 + 2 * n]
            if model_kind == 2:
                coeffs = crow[4:4 + n]
                c2 = coeffs[-3] if n >= 3 else 0.0
                c1 = coeffs[-2] if n >= 2 else 0.0
                c0 = coeffs[-1] if n >= 1 else 0.0
                no_load = c0
                segs = _quad_to_pwl(c2, c1, 0.0, row[8], base)
            else:
                points = list(zip(params[0::2], params[1::2]))
                no_load = points[0][1] if points else 0.0
                segs = _pwl_points_to_segments(points, base)
        else:
            segs = ((max(pmax, 1e-6), 0.0),)
        if not segs or segs[-1][0] < pmax - 1e-9:
            tail_mc = segs[-1][1] if segs else 0.0
            segs = tuple(segs) + ((pmax, tail_mc),)
        generators.append(Generator(
            id=i, bus=int(row[0]), pmin=max(pmin, 0.0), pmax=pmax,
            qmin=qmin, qmax=qmax, cost_segments=tuple(segs),
            no_load_cost=no_load, startup_cost=startup, shutdown_cost=shutdown,
            initial_on=True,
        ))

    name = re.sub(r"\.m$", "", str(path).rsplit("/", 1)[-1])
    return _validate(base, buses, branches, generators, loads, name)
