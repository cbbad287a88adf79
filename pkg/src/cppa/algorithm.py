"""The cutting-plane pricing loop: solve, separate, manage cuts, then
apply the IP or CH pricing rule and extract nodal prices.

The loop always runs on the binary relaxation; cuts are pure cone
geometry and independent of commitments, so under the IP rule a single
MILP is solved once the relaxation has converged, the binaries are fixed
at their welfare-maximizing values, and the final LP duals are the
prices.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import cuts as cutmod
from . import model as modelmod
from . import solver

RULE_IP = "ip"
RULE_CH = "ch"

MODEL_CP = "cp"
MODEL_DC = "dc"

STATUS_OPTIMAL = "Optimal"
STATUS_INFEASIBLE = "Infeasible"
STATUS_TIME_LIMIT = "TimeLimit"


@dataclass
class CppaConfig:
    time_limit_s: float = 300.0
    ftol_rounds: int = 3
    ftol: float = 1e-5
    t_age: float = cutmod.T_AGE
    eps_viol: float = cutmod.EPS_VIOL
    eps_par: float = cutmod.EPS_PAR
    rho: float = 1.0
    k_max: int = None
    pricing_rule: str = RULE_CH
    milp_gap: float = 1e-6
    network_model: str = MODEL_CP
    max_rounds: int = None

    def __post_init__(self):
        if self.time_limit_s <= 0:
            raise ValueError("time limit must be positive")
        if self.ftol_rounds < 1:
            raise ValueError("ftol_rounds must be >= 1")
        if self.ftol <= 0:
            raise ValueError("ftol must be positive")
        if self.pricing_rule not in (RULE_IP, RULE_CH):
            raise ValueError(f"unknown pricing rule {self.pricing_rule!r}")
        if self.network_model not in (MODEL_CP, MODEL_DC):
            raise ValueError(f"unknown network model {self.network_model!r}")


@dataclass
class PricingResult:
    status: str
    prices_p: dict = None          # bus id -> $/MWh
    prices_q: dict = None          # bus id -> $/MVArh (None for DC)
    allocation: dict = None        # raw primal values keyed by variable name
    commitments: dict = None       # gen id -> {on, su, sd}
    objective: float = None
    objective_trace: list = field(default_factory=list)
    price_trace: list = field(default_factory=list)  # per-round prices_p
    rounds: int = 0
    cuts_added: list = field(default_factory=list)   # per round
    cuts_dropped: list = field(default_factory=list)
    pool: cutmod.CutPool = None
    time_lp: float = 0.0
    time_cut: float = 0.0
    termination: str = ""


def extract_prices(solution, model, base_mva):
    """Nodal prices from balance-row duals, rescaled to $/MWh ($/MVArh)."""
    prices_p = {}
    for bus_id, row in sorted(model.bus_p_row.items()):
        prices_p[bus_id] = float(solution.duals[row]) / base_mva
    if not model.bus_q_row:
        return prices_p, None
    prices_q = {}
    for bus_id, row in sorted(model.bus_q_row.items()):
        prices_q[bus_id] = float(solution.duals[row]) / base_mva
    return prices_p, prices_q


def _allocation_from(model, primal):
    return {v.name: float(primal[j]) for j, v in enumerate(model.variables)}


def _commitments_from(model, primal):
    out = {}
    for gid, roles in sorted(model.gen_vars.items()):
        out[gid] = {
            "on": float(primal[roles["on"]]),
            "su": float(primal[roles["su"]]),
            "sd": float(primal[roles["sd"]]),
        }
    return out


def _with_cut_rows(base_model, pool):
    m = base_model.copy()
    for cut in pool.cuts:
        m.rows.append(cut.to_row(m))
    return m


def run_cppa(case, config, warm_cuts=None):
    """Run the cutting-plane pricing algorithm on a case.

    The working model is the binary relaxation of the welfare problem with
    the current cut pool appended; the loop exits on convergence of the
    separation oracle, on the stall counter, on max_rounds, or on the wall
    clock.
    """
    t_start = time.perf_counter()
    result = PricingResult(status=STATUS_OPTIMAL)
    if case.islanded:
        result.status = STATUS_INFEASIBLE
        result.termination = "islanded"
        return result

    if config.network_model == MODEL_DC:
        base_model = modelmod.build_dc_welfare(case)
    else:
        base_model = modelmod.build_cp_welfare(case)
    relaxed = base_model.relax_binaries()

    pool = warm_cuts if warm_cuts is not None else cutmod.CutPool()
    result.pool = pool

    z_prev = None
    stall = 0
    sol = None
    working = None
    while True:
        if time.perf_counter() - t_start > config.time_limit_s:
            result.status = STATUS_TIME_LIMIT
            result.termination = "time_limit"
            return result

        working = _with_cut_rows(relaxed, pool)
        t0 = time.perf_counter()
        sol = solver.solve_lp(working)
        result.time_lp += time.perf_counter() - t0
        result.rounds += 1

        if sol.status != solver.OPTIMAL:
            result.status = STATUS_INFEASIBLE
            result.termination = sol.status
            return result

        result.objective_trace.append(sol.objective)
        result.price_trace.append(
            extract_prices(sol, working, case.base_mva)[0])

        t0 = time.perf_counter()
        violations = [(i, cone, cutmod.cone_violation(sol.primal, cone))
                      for i, cone in enumerate(working.cones)]
        selected = cutmod.select_cuts(
            violations, eps_viol=config.eps_viol, rho=config.rho,
            k_max=config.k_max)
        result.time_cut += time.perf_counter() - t0

        if not selected:
            result.termination = "converged"
            break

        t0 = time.perf_counter()
        added = 0
        for _, cone, _viol in selected:
            try:
                cut = cutmod.max_distance_cut(
                    sol.primal, cone, round_no=result.rounds,
                    eps_viol=config.eps_viol)
            except cutmod.DegenerateCutError:
                continue
            if pool.admit(cut, result.rounds, eps_par=config.eps_par):
                added += 1
        dropped = pool.prune_aged(
            working, sol.primal, result.rounds, t_age=config.t_age)
        result.time_cut += time.perf_counter() - t0
        result.cuts_added.append(added)
        result.cuts_dropped.append(dropped)

        z = sol.objective
        if z_prev is not None:
            improvement = abs(z_prev - z) / max(abs(z_prev), 1e-9)
            if improvement < config.ftol:
                stall += 1
            else:
                stall = 0
        z_prev = z
        if stall >= config.ftol_rounds:
            result.termination = "stalled"
            break
        if config.max_rounds is not None and result.rounds >= config.max_rounds:
            result.termination = "max_rounds"
            break

    # pricing rule
    if config.pricing_rule == RULE_CH or not base_model.binary_indices():
        price_sol, price_model = sol, working
    else:
        milp_model = _with_cut_rows(base_model, pool)
        milp = solver.solve_milp(milp_model, gap_tol=config.milp_gap)
        if milp.status != solver.OPTIMAL:
            result.status = STATUS_INFEASIBLE
            result.termination = f"milp_{milp.status}"
            return result
        fixes = {j: milp.primal[j] for j in milp_model.binary_indices()}
        fixed = solver.fix_binaries(milp_model, fixes)
        price_sol = solver.solve_lp(fixed)
        if price_sol.status != solver.OPTIMAL:
            result.status = STATUS_INFEASIBLE
            result.termination = f"fixed_lp_{price_sol.status}"
            return result
        price_model = fixed

    result.prices_p, result.prices_q = extract_prices(
        price_sol, price_model, case.base_mva)
    result.objective = price_sol.objective
    result.allocation = _allocation_from(price_model, price_sol.primal)
    result.commitments = _commitments_from(price_model, price_sol.primal)
    return result
