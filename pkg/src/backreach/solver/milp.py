"""Branch-and-bound for mixed binary programs on top of the simplex core.

Branching picks the most fractional binary (deterministic lowest-index
tie-break); node selection is best-bound with an insertion counter so runs
are reproducible.  When the node budget runs out the result carries the
still-valid relaxation bound and is flagged ``bound_only`` -- callers that
over-approximate sets stay sound because the bound is on the outer side.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .lp import DEFAULT_FEAS_TOL, LinearProgram, SolveResult, SolveStatus, solve_lp

DEFAULT_GAP_TOL = 1e-6
DEFAULT_NODE_LIMIT = 10**6
_INT_TOL = 1e-6


@dataclass
class MixedIntegerProgram:
    lp: LinearProgram
    binary_vars: frozenset

    def __post_init__(self):
        object.__setattr__(self, "binary_vars", frozenset(self.binary_vars))
        for j in self.binary_vars:
            if not (0 <= j < self.lp.n):
                raise ValueError(f"binary index {j} out of range")
            if self.lp.lb[j] < -1e-12 or self.lp.ub[j] > 1 + 1e-12:
                raise ValueError(f"binary variable {j} must have bounds within [0, 1]")


def _most_fractional(x, binaries):
    """Binary index whose relaxed value is closest to 1/2; -1 if integral."""
    best, best_frac = -1, _INT_TOL
    for j in binaries:
        frac = min(x[j], 1.0 - x[j])
        if frac > best_frac + 1e-15 or (best == -1 and frac > _INT_TOL):
            best, best_frac = j, frac
    return best


def solve_milp(
    mip: MixedIntegerProgram,
    gap_tol: float = DEFAULT_GAP_TOL,
    node_limit: int = DEFAULT_NODE_LIMIT,
    feas_tol: float = DEFAULT_FEAS_TOL,
    incumbent: tuple | None = None,
) -> SolveResult:
    """Solve to within ``gap_tol`` of the optimum (absolute, certified by bound).

    ``incumbent`` optionally warm-starts the search with (objective, x) from a
    known feasible point.
    """
    lp = mip.lp.validate()
    binaries = sorted(mip.binary_vars)
    sign = 1.0 if lp.sense == "min" else -1.0

    # work in min space: bound values are lower bounds on the true optimum
    def to_min(v):
        return sign * v

    best_x = None
    best_obj = np.inf  # min space
    if incumbent is not None:
        inc_obj, inc_x = incumbent
        best_obj = to_min(inc_obj)
        best_x = None if inc_x is None else np.asarray(inc_x, float)

    root = solve_lp(lp, feas_tol)
    if root.status == SolveStatus.INFEASIBLE:
        return SolveResult(SolveStatus.INFEASIBLE, nodes=1)
    if root.status == SolveStatus.UNBOUNDED:
        return SolveResult(SolveStatus.UNBOUNDED, nodes=1)
    if root.status == SolveStatus.ERROR:
        return SolveResult(SolveStatus.ERROR, message=root.message, nodes=1)

    counter = 0
    heap = []

    def push(bound, lb, ub):
        nonlocal counter
        heapq.heappush(heap, (bound, counter, lb, ub))
        counter += 1

    push(to_min(root.objective), lp.lb.copy(), lp.ub.copy())
    nodes = 0

    while heap:
        bound, _, lb, ub = heapq.heappop(heap)
        if bound >= best_obj - gap_tol:
            continue  # cannot improve enough
        if nodes >= node_limit:
            # remaining bound is still a valid outer bound on the optimum
            outer = min(bound, best_obj)
            return SolveResult(
                SolveStatus.OPTIMAL,
                x=best_x,
                objective=sign * outer,
                bound_only=True,
                message="node limit reached; objective is the relaxation bound",
                nodes=nodes,
            )
        nodes += 1
        node_lp = LinearProgram(lp.c, lp.A_ub, lp.b_ub, lp.A_eq, lp.b_eq, lb, ub, lp.sense)
        res = solve_lp(node_lp, feas_tol)
        if res.status == SolveStatus.INFEASIBLE:
            continue
        if res.status != SolveStatus.OPTIMAL:
            return SolveResult(SolveStatus.ERROR, message=res.message, nodes=nodes)
        node_obj = to_min(res.objective)
        if node_obj >= best_obj - gap_tol:
            continue
        j = _most_fractional(res.x, binaries)
        if j < 0:
            x = res.x.copy()
            x[binaries] = np.round(x[binaries])
            best_obj = node_obj
            best_x = x
            continue
        for val in (0.0, 1.0):
            clb, cub = lb.copy(), ub.copy()
            clb[j] = cub[j] = val
            if clb[j] < lb[j] - 1e-12 or cub[j] > ub[j] + 1e-12:
                continue
            push(node_obj, clb, cub)

    if best_x is None and not np.isfinite(best_obj):
        return SolveResult(SolveStatus.INFEASIBLE, nodes=nodes)
    return SolveResult(
        SolveStatus.OPTIMAL, x=best_x, objective=sign * best_obj, nodes=nodes
    )
