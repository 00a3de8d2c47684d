"""Dense bounded-variable primal simplex.

All set computations in the toolkit reduce to these LPs, so the solver is
kept self-contained and deterministic: entering variables are chosen by the
Dantzig rule with lowest-index tie-breaks, and the solver permanently
switches to Bland's rule (lowest eligible index) if it detects stalling, so
degenerate problems cannot cycle.  Identical inputs produce identical
results.

A wrong ``optimal`` is never returned: every optimal point is re-checked
against the constraint rows within ``feas_tol`` and numerical breakdown is
reported via ``SolveStatus.ERROR``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

DEFAULT_FEAS_TOL = 1e-8
_PIVOT_TOL = 1e-9
_COST_TOL = 1e-9
_BLAND_TRIGGER = 400   # degenerate iterations before switching to Bland
_REFRESH_EVERY = 64    # basic-solution recomputations to control drift


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ERROR = "error"


class SolverError(RuntimeError):
    pass


@dataclass
class SolveResult:
    status: SolveStatus
    x: np.ndarray | None = None
    objective: float | None = None
    bound_only: bool = False
    message: str = ""
    nodes: int = 0

    @property
    def is_optimal(self) -> bool:
        return self.status == SolveStatus.OPTIMAL


@dataclass
class LinearProgram:
    """min/max c.x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  lb <= x <= ub."""

    c: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    sense: str = "min"

    @staticmethod
    def build(n, c=None, sense="min") -> "LinearProgram":
        return LinearProgram(
            c=np.zeros(n) if c is None else np.asarray(c, float),
            A_ub=np.zeros((0, n)),
            b_ub=np.zeros(0),
            A_eq=np.zeros((0, n)),
            b_eq=np.zeros(0),
            lb=np.full(n, -np.inf),
            ub=np.full(n, np.inf),
            sense=sense,
        )

    @property
    def n(self) -> int:
        return self.c.size

    def validate(self):
        n = self.n
        for name, A, b in (("A_ub", self.A_ub, self.b_ub), ("A_eq", self.A_eq, self.b_eq)):
            if A.shape != (b.size, n):
                raise ValueError(f"{name} shape {A.shape} inconsistent with n={n}")
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bound vectors inconsistent with n")
        if np.any(self.lb > self.ub + 1e-15):
            raise ValueError("variable with lb > ub")
        if self.sense not in ("min", "max"):
            raise ValueError(f"bad sense {self.sense!r}")
        return self

    def residuals(self, x) -> float:
        """Worst constraint violation of a candidate point."""
        worst = 0.0
        if self.A_ub.shape[0]:
            worst = max(worst, float(np.max(self.A_ub @ x - self.b_ub, initial=0.0)))
        if self.A_eq.shape[0]:
            worst = max(worst, float(np.max(np.abs(self.A_eq @ x - self.b_eq), initial=0.0)))
        worst = max(worst, float(np.max(self.lb - x, initial=0.0)))
        worst = max(worst, float(np.max(x - self.ub, initial=0.0)))
        return worst


# variable status codes
_AT_LOWER, _AT_UPPER, _FREE, _BASIC = 0, 1, 2, 3


class _Simplex:
    def __init__(self, lp: LinearProgram, feas_tol: float):
        lp.validate()
        self.lp = lp
        self.feas_tol = feas_tol
        n = lp.n
        m_ub, m_eq = lp.A_ub.shape[0], lp.A_eq.shape[0]
        self.m = m = m_ub + m_eq
        self.n_struct = n + m_ub              # structural + slack
        self.b = np.concatenate([lp.b_ub, lp.b_eq])

        lo = np.concatenate([lp.lb, np.zeros(m_ub)])
        hi = np.concatenate([lp.ub, np.full(m_ub, np.inf)])

        # nonbasic start: finite lower bound if any, else upper, else free at 0
        status = np.full(self.n_struct, _AT_LOWER, dtype=np.int8)
        x = np.zeros(self.n_struct)
        fin_lo = np.isfinite(lo)
        fin_hi = np.isfinite(hi)
        x[fin_lo] = lo[fin_lo]
        only_hi = ~fin_lo & fin_hi
        status[only_hi] = _AT_UPPER
        x[only_hi] = hi[only_hi]
        status[~fin_lo & ~fin_hi] = _FREE

        # crash basis: slacks cover satisfied <= rows; artificial columns are
        # allocated only for equality rows and violated <= rows
        A_struct = np.zeros((m, self.n_struct))
        if m_ub:
            A_struct[:m_ub, :n] = lp.A_ub
            A_struct[:m_ub, n : n + m_ub] = np.eye(m_ub)
        if m_eq:
            A_struct[m_ub:, :n] = lp.A_eq
        resid = self.b - A_struct @ x
        need_art = np.ones(m, dtype=bool)
        need_art[:m_ub] = resid[:m_ub] < 0.0
        art_rows = np.nonzero(need_art)[0]
        n_art = art_rows.size
        self.n_total = self.n_struct + n_art

        self.lo = np.concatenate([lo, np.zeros(n_art)])
        self.hi = np.concatenate([hi, np.full(n_art, np.inf)])
        self.status = np.concatenate([status, np.full(n_art, _AT_LOWER, dtype=np.int8)])
        self.x = np.concatenate([x, np.zeros(n_art)])

        sign = np.ones(m)
        A = np.hstack([A_struct, np.zeros((m, n_art)), self.b[:, None]])
        self.basis = np.empty(m, dtype=int)
        for j, i in enumerate(art_rows):
            sign[i] = 1.0 if resid[i] >= 0 else -1.0
            A[i, self.n_struct + j] = sign[i]
            self.basis[i] = self.n_struct + j
        slack_rows = np.nonzero(~need_art)[0]
        self.basis[slack_rows] = n + slack_rows
        self.status[self.basis] = _BASIC
        self.x[self.basis] = np.where(need_art, np.abs(resid), resid)
        # tableau [B^-1 A | B^-1 b] with initial B = identity/sign columns
        self.T = A * sign[:, None]
        self.fixed = self.lo == self.hi

    def _refresh_basics(self):
        """Recompute basic values from the tableau to limit numerical drift."""
        if self.m == 0:
            return
        nb = np.nonzero(self.status != _BASIC)[0]
        xb = self.T[:, -1] - self.T[:, nb] @ self.x[nb]
        self.x[self.basis] = xb

    def _reduced_costs(self, c):
        return c - c[self.basis] @ self.T[:, : self.n_total]

    def _entering(self, d, bland: bool):
        eligible_dn = (self.status == _AT_LOWER) & ~self.fixed & (d < -_COST_TOL)
        eligible_up = (self.status == _AT_UPPER) & ~self.fixed & (d > _COST_TOL)
        eligible_fr = (self.status == _FREE) & (np.abs(d) > _COST_TOL)
        any_el = eligible_dn | eligible_up | eligible_fr
        if not any_el.any():
            return -1, 0
        idx = np.nonzero(any_el)[0]
        if bland:
            j = int(idx[0])
        else:
            j = int(idx[np.argmax(np.abs(d[idx]))])
        if eligible_up[j] or (eligible_fr[j] and d[j] > 0):
            return j, -1
        return j, +1

    def _ratio_test(self, j, sig):
        """Max step for entering variable j moving with direction sig.

        Returns (t, leaving_row); leaving_row -1 means the entering variable
        flips to its opposite bound, t = inf means the LP is unbounded in
        this direction.
        """
        own = self.hi[j] - self.lo[j]
        if self.m == 0:
            return (own, -1) if np.isfinite(own) else (np.inf, -1)
        w = self.T[:, j]
        xb = self.x[self.basis]
        lob = self.lo[self.basis]
        hib = self.hi[self.basis]
        sw = sig * w
        t = np.full(self.m, np.inf)
        dec = sw > _PIVOT_TOL
        inc = sw < -_PIVOT_TOL
        with np.errstate(invalid="ignore"):
            t[dec] = (xb[dec] - lob[dec]) / sw[dec]
            t[inc] = (xb[inc] - hib[inc]) / sw[inc]
        t = np.where(np.isnan(t), np.inf, np.maximum(t, 0.0))
        t_rows = float(t.min(initial=np.inf))

        if own < t_rows - 1e-12:
            return own, -1
        if not np.isfinite(t_rows):
            return (own, -1) if np.isfinite(own) else (np.inf, -1)
        cand = np.nonzero(t <= t_rows + 1e-12)[0]
        piv = np.abs(w[cand])
        best = cand[piv >= piv.max() - 1e-12]
        row = int(best[np.argmin(self.basis[best])])
        return float(t[row]), row

    def _pivot(self, j, sig, t, row):
        if row == -1:  # bound flip, basis unchanged
            self.x[self.basis] -= sig * t * self.T[:, j]
            self.x[j] = self.hi[j] if sig > 0 else self.lo[j]
            self.status[j] = _AT_UPPER if sig > 0 else _AT_LOWER
            return
        leave = self.basis[row]
        w = self.T[:, j]
        self.x[self.basis] -= sig * t * w
        self.x[j] += sig * t
        # leaving variable rests on the bound that limited the step
        if sig * w[row] > 0:
            self.status[leave] = _AT_LOWER
            self.x[leave] = self.lo[leave]
        else:
            self.status[leave] = _AT_UPPER
            self.x[leave] = self.hi[leave]
        piv = self.T[row, j]
        self.T[row, :] /= piv
        col = self.T[:, j].copy()
        col[row] = 0.0
        self.T -= np.outer(col, self.T[row, :])
        self.T[:, j] = 0.0
        self.T[row, j] = 1.0
        self.basis[row] = j
        self.status[j] = _BASIC

    def _optimize(self, c, max_iter):
        bland = False
        stall = 0
        last_obj = np.inf
        for it in range(max_iter):
            d = self._reduced_costs(c)
            j, sig = self._entering(d, bland)
            if j < 0:
                self._refresh_basics()
                return "optimal"
            t, row = self._ratio_test(j, sig)
            if not np.isfinite(t):
                return "unbounded"
            self._pivot(j, sig, t, row)
            if (it + 1) % _REFRESH_EVERY == 0:
                self._refresh_basics()
            obj = float(c @ self.x)
            if obj < last_obj - 1e-12:
                last_obj = obj
                stall = 0
            else:
                stall += 1
                if stall > _BLAND_TRIGGER:
                    bland = True
        return "iteration-limit"

    def _phase1(self, max_iter):
        if not np.any(self.basis >= self.n_struct):
            # crash basis is already feasible; nothing to drive out
            self.lo[self.n_struct :] = 0.0
            self.hi[self.n_struct :] = 0.0
            self.fixed[self.n_struct :] = True
            return "feasible"
        c1 = np.zeros(self.n_total)
        c1[self.n_struct :] = 1.0
        status = self._optimize(c1, max_iter)
        if status == "iteration-limit":
            return "error"
        infeas = float(np.sum(self.x[self.n_struct :]))
        if infeas > self.feas_tol:
            return "infeasible"
        # freeze artificials at zero for phase 2
        self.lo[self.n_struct :] = 0.0
        self.hi[self.n_struct :] = 0.0
        self.fixed[self.n_struct :] = True
        nonbasic_art = (self.status[self.n_struct :] != _BASIC)
        self.x[self.n_struct :][nonbasic_art] = 0.0
        return "feasible"

    def solve(self) -> SolveResult:
        max_iter = 2000 + 40 * (self.m + self.n_total)
        p1 = self._phase1(max_iter)
        if p1 == "error":
            return SolveResult(SolveStatus.ERROR, message="phase-1 iteration limit")
        if p1 == "infeasible":
            return SolveResult(SolveStatus.INFEASIBLE)

        n = self.lp.n
        c2 = np.zeros(self.n_total)
        sign = 1.0 if self.lp.sense == "min" else -1.0
        c2[:n] = sign * self.lp.c
        status = self._optimize(c2, max_iter)
        if status == "iteration-limit":
            return SolveResult(SolveStatus.ERROR, message="phase-2 iteration limit")
        if status == "unbounded":
            return SolveResult(SolveStatus.UNBOUNDED)

        x = self.x[:n].copy()
        worst = self.lp.residuals(x)
        if worst > max(self.feas_tol, 1e-7):
            return SolveResult(
                SolveStatus.ERROR, message=f"optimal point violates rows by {worst:.2e}"
            )
        return SolveResult(SolveStatus.OPTIMAL, x=x, objective=float(self.lp.c @ x))


def solve_lp(lp: LinearProgram, feas_tol: float = DEFAULT_FEAS_TOL) -> SolveResult:
    return _Simplex(lp, feas_tol).solve()


def check_feasible(lp: LinearProgram, feas_tol: float = DEFAULT_FEAS_TOL) -> bool:
    """Phase-1 feasibility test; true iff some point satisfies all rows."""
    sim = _Simplex(lp, feas_tol)
    p1 = sim._phase1(2000 + 40 * (sim.m + sim.n_total))
    if p1 == "error":
        raise SolverError("feasibility phase hit iteration limit")
    return p1 == "feasible"


def dump_lp(lp: LinearProgram, path) -> None:
    """Write the LP in a plain text format for debugging."""
    lines = [f"\\ {lp.sense} problem, {lp.n} vars", "Minimize" if lp.sense == "min" else "Maximize"]
    lines.append("  obj: " + _expr(lp.c))
    lines.append("Subject To")
    for i in range(lp.A_ub.shape[0]):
        lines.append(f"  r{i}: " + _expr(lp.A_ub[i]) + f" <= {lp.b_ub[i]:.12g}")
    for i in range(lp.A_eq.shape[0]):
        lines.append(f"  e{i}: " + _expr(lp.A_eq[i]) + f" = {lp.b_eq[i]:.12g}")
    lines.append("Bounds")
    for j in range(lp.n):
        lines.append(f"  {lp.lb[j]:.12g} <= x{j} <= {lp.ub[j]:.12g}")
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _expr(row) -> str:
    terms = [f"{v:+.12g} x{j}" for j, v in enumerate(row) if v != 0.0]
    return " ".join(terms) if terms else "0"
