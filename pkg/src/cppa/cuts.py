"""Cone violation scoring, maximum-distance separating hyperplanes, and
the cut pool (selection, parallelism filtering, aging, persistence).

Every registered cone is handled in its 3- or 4-dimensional SOC rewrite
x^2 + y^2 <= wz  <=>  ||(2x, 2y, w-z)|| <= w+z; the deepest separating
hyperplane for a violated point (x', s') is (x')^T x <= ||x'|| s, mapped
back to model variables. Cut coefficients stay in model (p.u.) scale; the
cached unit normal is used only for the parallelism test.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .model import CURRENT_FROM, CURRENT_TO, JABR, Row, SENSE_LE

CUT_SCHEMA_VERSION = "cppa-cuts-v1"

EPS_VIOL = 1e-5
EPS_PAR = 1e-5
T_AGE = 5

# fixed coefficient ordering per cone kind, used for unit normals and the
# portable (role, value) serialization
ROLE_ORDER = {
    JABR: ("c", "s", "v2_from", "v2_to"),
    CURRENT_FROM: ("P_from", "Q_from", "v2_from"),
    CURRENT_TO: ("P_to", "Q_to", "v2_to"),
}


class CutError(ValueError):
    pass


class DegenerateCutError(CutError):
    """Separation attempted at the cone apex (zero-norm SOC vector)."""


@dataclass
class Cut:
    coefficients: dict          # role -> coefficient
    rhs: float
    branch_id: int
    cone_kind: str
    birth_round: int = 0
    last_tight_round: int = 0
    unit_normal: np.ndarray = None

    def __post_init__(self):
        if self.unit_normal is None:
            vec = np.array([self.coefficients.get(r, 0.0)
                            for r in ROLE_ORDER[self.cone_kind]])
            norm = np.linalg.norm(vec)
            if norm == 0.0:
                raise CutError("cut with zero coefficient vector")
            self.unit_normal = vec / norm

    def to_row(self, model):
        """Bind to a model over the same case: role tags -> variable ids."""
        roles = _cone_roles(model, self.branch_id)
        coeffs = {}
        for role, coeff in self.coefficients.items():
            if role not in roles:
                raise CutError(
                    f"cut for branch {self.branch_id}: role {role!r} "
                    "not present in model")
            coeffs[roles[role]] = coeff
        name = f"cut_{self.cone_kind}_b{self.branch_id}_r{self.birth_round}"
        return Row(name, coeffs, SENSE_LE, self.rhs)

    def evaluate(self, model, primal):
        """Left-hand side minus rhs at a primal point (positive = violated)."""
        roles = _cone_roles(model, self.branch_id)
        lhs = sum(coeff * primal[roles[role]]
                  for role, coeff in self.coefficients.items())
        return lhs - self.rhs


def _cone_roles(model, branch_id):
    if branch_id not in model.branch_vars:
        raise CutError(f"cut references unknown branch {branch_id}")
    return model.branch_vars[branch_id]


def cone_violation(primal, cone):
    """Quadratic-form violation of one registered cone; positive = violated."""
    v = cone.vars
    if cone.kind == JABR:
        return (primal[v["c"]] ** 2 + primal[v["s"]] ** 2
                - primal[v["v2_from"]] * primal[v["v2_to"]])
    return (primal[v["P"]] ** 2 + primal[v["Q"]] ** 2
            - cone.multiplier * primal[v["v2"]])


def soc_point(primal, cone):
    """(x', s') of the SOC rewrite at the given point."""
    v = cone.vars
    if cone.kind == JABR:
        w, z = primal[v["v2_from"]], primal[v["v2_to"]]
        xv = np.array([2.0 * primal[v["c"]], 2.0 * primal[v["s"]], w - z])
        return xv, w + z
    mu = cone.multiplier
    wz = mu * primal[v["v2"]]
    xv = np.array([2.0 * primal[v["P"]], 2.0 * primal[v["Q"]], wz - 1.0])
    return xv, wz + 1.0


def max_distance_cut(primal, cone, round_no=0, eps_viol=EPS_VIOL):
    """Deepest separating hyperplane for a point violating the cone."""
    if cone_violation(primal, cone) <= eps_viol:
        raise CutError("no cut for a satisfied cone")
    xv, _ = soc_point(primal, cone)
    norm = float(np.linalg.norm(xv))
    if norm < 1e-12:
        raise DegenerateCutError("separation at the cone apex")
    v = cone.vars
    if cone.kind == JABR:
        w_minus_z = xv[2]
        coeffs = {
            "c": 4.0 * primal[v["c"]],
            "s": 4.0 * primal[v["s"]],
            "v2_from": w_minus_z - norm,
            "v2_to": -w_minus_z - norm,
        }
        rhs = 0.0
        roles = {"c": "c", "s": "s", "v2_from": "v2_from", "v2_to": "v2_to"}
    else:
        mu = cone.multiplier
        wz1 = xv[2]  # mu*v2' - 1
        coeffs = {
            ("P_from" if cone.kind == CURRENT_FROM else "P_to"): 4.0 * primal[v["P"]],
            ("Q_from" if cone.kind == CURRENT_FROM else "Q_to"): 4.0 * primal[v["Q"]],
            ("v2_from" if cone.kind == CURRENT_FROM else "v2_to"): mu * (wz1 - norm),
        }
        rhs = wz1 + norm
    return Cut(coefficients=coeffs, rhs=rhs, branch_id=cone.branch_id,
               cone_kind=cone.kind, birth_round=round_no,
               last_tight_round=round_no)


def select_cuts(violations, eps_viol=EPS_VIOL, rho=1.0, k_max=None):
    """Keep violations above threshold, sorted descending with cone-index
    tie-break; return the top fraction rho, capped at k_max per round.

    ``violations`` is a list of (cone_index, cone, violation).
    """
    eligible = [t for t in violations if t[2] > eps_viol]
    eligible.sort(key=lambda t: (-t[2], t[0]))
    keep = math.ceil(rho * len(eligible))
    if k_max is not None:
        keep = min(keep, k_max)
    return eligible[:keep]


@dataclass
class CutPool:
    """Active cuts plus per-round admission/drop statistics."""

    cuts: list = field(default_factory=list)
    added: int = 0
    dropped_parallel: int = 0
    dropped_aged: int = 0

    def admit(self, cut, round_no, eps_par=EPS_PAR):
        """Reject iff an active cut from the same cone is nearly parallel
        (cosine similarity of unit normals >= 1 - eps_par)."""
        for other in self.cuts:
            if (other.branch_id == cut.branch_id
                    and other.cone_kind == cut.cone_kind
                    and float(other.unit_normal @ cut.unit_normal) >= 1.0 - eps_par):
                self.dropped_parallel += 1
                return False
        cut.birth_round = round_no
        cut.last_tight_round = round_no
        self.cuts.append(cut)
        self.added += 1
        return True

    def prune_aged(self, model, primal, round_no, t_age=T_AGE, tight_tol=1e-6):
        """Refresh tightness stamps from the solution and drop cuts that
        have not been tight for t_age rounds. Returns the drop count."""
        kept = []
        dropped = 0
        for cut in self.cuts:
            slack = -cut.evaluate(model, primal)
            if slack <= tight_tol:
                cut.last_tight_round = round_no
            if (t_age is not None and not math.isinf(t_age)
                    and round_no - cut.last_tight_round >= t_age):
                dropped += 1
            else:
                kept.append(cut)
        self.cuts = kept
        self.dropped_aged += dropped
        return dropped


def save_cuts(pool, path, case):
    """Persist active cuts with branch/cone provenance for warm starts."""
    data = {
        "version": CUT_SCHEMA_VERSION,
        "scenario": case.scenario_name,
        "bus_count": len(case.buses),
        "cuts": [{
            "branch_id": c.branch_id,
            "cone_kind": c.cone_kind,
            "coefficients": [[role, val] for role, val in
                             sorted(c.coefficients.items())],
            "rhs": c.rhs,
        } for c in pool.cuts],
    }
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_cuts(path, case):
    """Load a cut store onto a (possibly contingency-modified) case.

    Cuts whose branch is out of service are dropped; ages reset to round 0
    and unit normals recomputed. Returns (pool, loaded_count, dropped_count).
    """
    with open(path) as fh:
        data = json.load(fh)
    if data.get("version") != CUT_SCHEMA_VERSION:
        raise CutError(f"unsupported cut store version {data.get('version')!r}")
    if data.get("bus_count") != len(case.buses):
        raise CutError(
            f"cut store was built for a {data.get('bus_count')}-bus case, "
            f"got {len(case.buses)} buses")
    in_service = {b.id for b in case.branches if b.status}
    known = {b.id for b in case.branches}
    pool = CutPool()
    dropped = 0
    for rec in data["cuts"]:
        bid = rec["branch_id"]
        if bid not in known:
            raise CutError(f"cut references unknown branch {bid}")
        if bid not in in_service:
            dropped += 1
            continue
        pool.cuts.append(Cut(
            coefficients={role: float(val) for role, val in rec["coefficients"]},
            rhs=float(rec["rhs"]),
            branch_id=bid,
            cone_kind=rec["cone_kind"],
            birth_round=0,
            last_tight_round=0,
        ))
    return pool, len(pool.cuts), dropped
