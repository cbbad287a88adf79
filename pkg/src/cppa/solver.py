"""Dense bounded-variable primal simplex with dual extraction, plus a
best-bound branch-and-bound for the mixed-binary welfare problems.

The simplex works on the standard form max c'x s.t. Ax = b, l <= x <= u
obtained by appending one slack per row (slack bounds encode the sense).
Phase 1 minimizes the sum of bound violations of basic variables with the
usual composite costs; Bland's rule engages after a stall of degenerate
pivots, which guarantees termination (e.g. on the Beale cycling example).
Duals come straight out of the terminal basis, signed so that for a
maximization model the dual of a binding <= row is nonnegative.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .model import SENSE_EQ, SENSE_GE, SENSE_LE

INF = float("inf")

FEAS_TOL = 1e-7
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
INT_TOL = 1e-6
STALL_LIMIT = 50  # consecutive degenerate pivots before Bland's rule

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"
ITERATION_LIMIT = "IterationLimit"
GAP_LIMIT = "GapLimit"

_AT_LOWER, _AT_UPPER, _BASIC, _FREE = 0, 1, 2, 3


class SolverError(RuntimeError):
    pass


class SingularBasisError(SolverError):
    pass


@dataclass
class LpSolution:
    status: str
    primal: np.ndarray          # structural variables only
    duals: np.ndarray           # one per row
    reduced_costs: np.ndarray   # structural variables only
    objective: float
    basis_status: np.ndarray = None  # full standard-form statuses (hint)
    iterations: int = 0


@dataclass
class MilpSolution:
    status: str
    primal: np.ndarray
    objective: float
    bound: float
    nodes: int = 0


def standard_form(model):
    """Dense (A, b, c, lb, ub, n_struct) with one slack column per row."""
    if not model.maximize:
        raise SolverError("models are maximization by construction")
    n = len(model.variables)
    m = len(model.rows)
    N = n + m
    A = np.zeros((m, N))
    b = np.empty(m)
    lb = np.empty(N)
    ub = np.empty(N)
    c = np.zeros(N)
    for j, v in enumerate(model.variables):
        lb[j], ub[j] = v.lb, v.ub
    for j, coeff in model.objective.items():
        c[j] = coeff
    for i, row in enumerate(model.rows):
        for j, coeff in row.coeffs.items():
            A[i, j] = coeff
        b[i] = row.rhs
        sj = n + i
        A[i, sj] = 1.0
        if row.sense == SENSE_LE:
            lb[sj], ub[sj] = 0.0, INF
        elif row.sense == SENSE_GE:
            lb[sj], ub[sj] = -INF, 0.0
        elif row.sense == SENSE_EQ:
            lb[sj], ub[sj] = 0.0, 0.0
        else:
            raise SolverError(f"unknown row sense {row.sense!r}")
    return A, b, c, lb, ub, n


def _initial_point(lb, ub, N, m):
    status = np.empty(N, dtype=np.int8)
    x = np.zeros(N)
    for j in range(N - m):
        if lb[j] > -INF:
            status[j], x[j] = _AT_LOWER, lb[j]
        elif ub[j] < INF:
            status[j], x[j] = _AT_UPPER, ub[j]
        else:
            status[j], x[j] = _FREE, 0.0
    basis = np.arange(N - m, N)
    status[basis] = _BASIC
    return status, x, basis


def _apply_hint(hint, lb, ub, N, m):
    if hint is None or len(hint) != N or int(np.sum(hint == _BASIC)) != m:
        return None
    status = np.asarray(hint, dtype=np.int8).copy()
    x = np.zeros(N)
    at_lo = status == _AT_LOWER
    at_up = status == _AT_UPPER
    if np.any(~np.isfinite(lb[at_lo])) or np.any(~np.isfinite(ub[at_up])):
        return None
    x[at_lo] = lb[at_lo]
    x[at_up] = ub[at_up]
    basis = np.flatnonzero(status == _BASIC)
    return status, x, basis


def simplex(A, b, c, lb, ub, basis_hint=None, iteration_limit=None):
    """Bounded-variable primal simplex. Returns (status, x, y, d, status_arr,
    iterations) over the standard form."""
    m, N = A.shape
    if iteration_limit is None:
        iteration_limit = 50 * (m + N)
    start = _apply_hint(basis_hint, lb, ub, N, m)
    if start is None:
        status, x, basis = _initial_point(lb, ub, N, m)
    else:
        status, x, basis = start
    fixed = (ub - lb) <= 0.0

    bland = False
    stall = 0
    y = np.zeros(m)
    d = c.copy()

    for it in range(1, iteration_limit + 1):
        Bmat = A[:, basis]
        xs = x.copy()
        xs[basis] = 0.0
        try:
            xB = np.linalg.solve(Bmat, b - A @ xs)
        except np.linalg.LinAlgError as exc:
            raise SingularBasisError(f"singular basis at iteration {it}") from exc
        x[basis] = xB

        below = xB < lb[basis] - FEAS_TOL
        above = xB > ub[basis] + FEAS_TOL
        phase1 = bool(below.any() or above.any())

        if phase1:
            cB = np.where(below, 1.0, np.where(above, -1.0, 0.0))
            c_eff = np.zeros(N)
        else:
            cB = c[basis]
            c_eff = c
        try:
            y = np.linalg.solve(Bmat.T, cB)
        except np.linalg.LinAlgError as exc:
            raise SingularBasisError(f"singular basis at iteration {it}") from exc
        d = c_eff - A.T @ y

        # entering candidates
        improving = np.zeros(N, dtype=bool)
        nb_lo = (status == _AT_LOWER) & ~fixed
        nb_up = (status == _AT_UPPER) & ~fixed
        nb_fr = status == _FREE
        improving[nb_lo] = d[nb_lo] > OPT_TOL
        improving[nb_up] = d[nb_up] < -OPT_TOL
        improving[nb_fr] = np.abs(d[nb_fr]) > OPT_TOL
        cand = np.flatnonzero(improving)
        if cand.size == 0:
            if phase1:
                return INFEASIBLE, x, y, d, status, it
            return OPTIMAL, x, y, d, status, it
        if bland:
            j = int(cand[0])
        else:
            j = int(cand[np.argmax(np.abs(d[cand]))])
        direction = 1.0 if (status[j] == _AT_LOWER or
                            (status[j] == _FREE and d[j] > 0)) else -1.0

        w = np.linalg.solve(Bmat, A[:, j])
        delta = -direction * w  # rate of change of x[basis] per unit step

        # ratio test
        t_best = ub[j] - lb[j] if np.isfinite(ub[j] - lb[j]) else INF
        leave = -1
        for i in range(m):
            di = delta[i]
            if abs(di) <= PIVOT_TOL:
                continue
            bi = basis[i]
            xi, li, ui = xB[i], lb[bi], ub[bi]
            if phase1 and xi < li - FEAS_TOL:
                if di <= 0:
                    continue
                ti, bound = (li - xi) / di, _AT_LOWER
            elif phase1 and xi > ui + FEAS_TOL:
                if di >= 0:
                    continue
                ti, bound = (ui - xi) / di, _AT_UPPER
            elif di > 0:
                if ui == INF:
                    continue
                ti, bound = (ui - xi) / di, _AT_UPPER
            else:
                if li == -INF:
                    continue
                ti, bound = (li - xi) / di, _AT_LOWER
            ti = max(ti, 0.0)
            if ti < t_best - 1e-12:
                t_best, leave, leave_bound = ti, i, bound
            elif leave >= 0 and ti < t_best + 1e-12:
                if bland:
                    if basis[i] < basis[leave]:
                        leave, leave_bound = i, bound
                elif abs(di) > abs(delta[leave]):
                    leave, leave_bound = i, bound

        if t_best == INF:
            if phase1:
                raise SolverError("phase-1 ray: numerical breakdown")
            return UNBOUNDED, x, y, d, status, it

        if t_best <= 1e-12:
            stall += 1
            if stall >= STALL_LIMIT:
                bland = True
        else:
            stall = 0

        x[j] = x[j] + direction * t_best
        x[basis] = xB + delta * t_best
        if leave < 0:
            # bound flip of the entering variable
            status[j] = _AT_UPPER if direction > 0 else _AT_LOWER
            x[j] = ub[j] if direction > 0 else lb[j]
        else:
            out = basis[leave]
            status[out] = leave_bound
            x[out] = lb[out] if leave_bound == _AT_LOWER else ub[out]
            basis[leave] = j
            status[j] = _BASIC

    return ITERATION_LIMIT, x, y, d, status, iteration_limit


def solve_lp(model, basis_hint=None, iteration_limit=None):
    """Solve the binary-relaxed model as an LP; duals and reduced costs come
    from the terminal basis."""
    if len(model.variables) == 0:
        raise SolverError("model has no variables")
    A, b, c, lb, ub, n = standard_form(model)
    st, x, y, d, statuses, it = simplex(
        A, b, c, lb, ub, basis_hint=basis_hint, iteration_limit=iteration_limit)
    obj = float(c[:n] @ x[:n]) if st == OPTIMAL else float("nan")
    return LpSolution(
        status=st,
        primal=x[:n].copy(),
        duals=y.copy(),
        reduced_costs=d[:n].copy(),
        objective=obj,
        basis_status=statuses.copy(),
        iterations=it,
    )


def kkt_report(model, sol):
    """Primal/dual feasibility, complementary slackness and duality-gap
    residuals for an Optimal solution; assertable from returned values."""
    A, b, c, lb, ub, n = standard_form(model)
    x = sol.primal
    y = sol.duals
    d = c[:n] - A[:, :n].T @ y

    primal = 0.0
    for j in range(n):
        if lb[j] > -INF:
            primal = max(primal, lb[j] - x[j])
        if ub[j] < INF:
            primal = max(primal, x[j] - ub[j])
    act = A[:, :n] @ x
    comp = 0.0
    dual = 0.0
    for i, row in enumerate(model.rows):
        res = act[i] - b[i]
        if row.sense == SENSE_EQ:
            primal = max(primal, abs(res))
        elif row.sense == SENSE_LE:
            primal = max(primal, res)
            dual = max(dual, -y[i])         # binding <= row: dual >= 0
            comp = max(comp, abs(y[i] * min(res, 0.0)))
        else:
            primal = max(primal, -res)
            dual = max(dual, y[i])          # binding >= row: dual <= 0
            comp = max(comp, abs(y[i] * max(res, 0.0)))

    dual_obj = float(y @ b)
    span_tol = 1e-7
    for j in range(n):
        interior = ((lb[j] == -INF or x[j] > lb[j] + span_tol) and
                    (ub[j] == INF or x[j] < ub[j] - span_tol))
        if interior:
            dual = max(dual, abs(d[j]))
        elif ub[j] < INF and abs(x[j] - ub[j]) <= span_tol and not (
                lb[j] > -INF and abs(x[j] - lb[j]) <= span_tol):
            dual = max(dual, -d[j])
        elif lb[j] > -INF and abs(x[j] - lb[j]) <= span_tol and not (
                ub[j] < INF and abs(x[j] - ub[j]) <= span_tol):
            dual = max(dual, d[j])
        # reduced costs pointing at an infinite bound are dual
        # infeasibilities, not contributions to the dual objective
        if d[j] > 0.0:
            if ub[j] < INF:
                dual_obj += d[j] * ub[j]
            else:
                dual = max(dual, d[j])
        elif d[j] < 0.0:
            if lb[j] > -INF:
                dual_obj += d[j] * lb[j]
            else:
                dual = max(dual, -d[j])
        comp = max(comp, abs(max(d[j], 0.0) * (ub[j] - x[j])) if ub[j] < INF else 0.0)
        comp = max(comp, abs(min(d[j], 0.0) * (x[j] - lb[j])) if lb[j] > -INF else 0.0)
    gap = abs(sol.objective - dual_obj) / max(1.0, abs(sol.objective))
    return {"primal": primal, "dual": dual, "complementarity": comp, "gap": gap}


def fix_binaries(model, values):
    """Pin binary variables to an integral assignment and clear the flags."""
    out = model.copy()
    for j, val in values.items():
        v = out.variables[j]
        if not v.binary:
            raise SolverError(f"variable {v.name} is not binary")
        if abs(val - round(val)) > INT_TOL:
            raise SolverError(f"non-integral value {val} for {v.name}")
        val = float(round(val))
        v.lb = v.ub = val
        v.binary = False
    for v in out.variables:
        v.binary = False
    return out


def solve_milp(model, gap_tol=1e-6, node_limit=10**6):
    """Best-bound branch-and-bound over the binary variables.

    Branching: most-fractional binary, ties to the lowest variable index.
    Deterministic given identical input.
    """
    A, b, c, lb0, ub0, n = standard_form(model)
    bins = model.binary_indices()
    for j in bins:
        lb0[j] = max(lb0[j], 0.0)
        ub0[j] = min(ub0[j], 1.0)

    def lp(fixes):
        lb = lb0.copy()
        ub = ub0.copy()
        for j, v in fixes.items():
            lb[j] = ub[j] = v
        st, x, *_ = simplex(A, b, c, lb, ub)
        if st == OPTIMAL:
            return st, x[:len(model.variables)], float(c[:n] @ x[:n])
        return st, None, -INF

    inc_x, inc_obj = None, -INF
    nodes = 0
    seq = 0
    heap = [(-INF, 0, {})]  # (-bound, tiebreak, fixes); root bound unknown
    best_bound = INF

    while heap:
        neg_bound, _, fixes = heapq.heappop(heap)
        parent_bound = -neg_bound
        gap_ref = max(1.0, abs(inc_obj))
        if inc_x is not None and parent_bound - inc_obj <= gap_tol * gap_ref:
            best_bound = max(parent_bound, inc_obj)
            break
        nodes += 1
        if nodes > node_limit:
            raise SolverError(f"node limit {node_limit} exceeded")
        st, x, obj = lp(fixes)
        if st != OPTIMAL:
            continue
        if inc_x is not None and obj - inc_obj <= gap_tol * gap_ref:
            continue
        frac = [(min(x[j] - np.floor(x[j]), np.ceil(x[j]) - x[j]), j)
                for j in bins if j not in fixes
                and min(x[j] % 1.0, 1.0 - x[j] % 1.0) > INT_TOL]
        if not frac:
            xr = x.copy()
            for j in bins:
                xr[j] = round(xr[j])
            if obj > inc_obj:
                inc_x, inc_obj = xr, obj
            continue
        frac.sort(key=lambda t: (-t[0], t[1]))
        j = frac[0][1]
        for val in (0.0, 1.0):
            child = dict(fixes)
            child[j] = val
            seq += 1
            heapq.heappush(heap, (-obj, seq, child))

    if heap:
        best_bound = max(-heap[0][0], inc_obj) if inc_x is not None else -heap[0][0]
    elif inc_x is not None and best_bound == INF:
        best_bound = inc_obj
    if inc_x is None:
        return MilpSolution(INFEASIBLE, None, -INF, best_bound, nodes)
    return MilpSolution(OPTIMAL, inc_x, inc_obj, best_bound, nodes)
