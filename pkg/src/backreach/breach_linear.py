"""Multi-step backprojection over-approximation for linear systems.

One algorithm with a mode switch covers the three variants:

* ``concrete``  -- each step's LPs chain only through the previous set's
  bounding rectangle (cheapest, accrues the most wrapping error);
* ``symbolic``  -- every step's LP carries dynamics, relaxed-control and
  membership constraints for the whole chain back to the target;
* ``refine``    -- a concrete pass first, then every set is re-solved
  against the full chain of first-pass sets and control bounds.

Per timestep: compute the backreachable rectangle from control limits alone,
partition it, relax the network over each element, solve the two
per-coordinate LPs, and bound the union of the element contributions with a
rectangle.  The affine control bounds over that rectangle become the step's
contribution to later chains.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from threading import Lock

import numpy as np

from . import crown
from .dynamics import LinearSystem
from .geom import (
    EMPTY,
    HalfspacePolytope,
    Hyperrectangle,
    TimedSetSequence,
    intersect,
    subset,
)
from .network import FeedforwardNetwork
from .partition import estimate_bp_set, guided_partition, uniform_partition
from .solver import (
    DEFAULT_FEAS_TOL,
    LinearProgram,
    SolveStatus,
    SolverError,
    check_feasible,
    solve_lp,
)

INVARIANCE_TOL = 1e-9

CONCRETE, SYMBOLIC, REFINE = "concrete", "symbolic", "refine"


@dataclass(frozen=True)
class PartitionSpec:
    kind: str                      # "uniform" | "guided"
    r_vec: tuple | None = None     # uniform: cells per axis
    r: int = 1                     # guided: element budget
    v_m: float = 1e-4              # guided: minimum element volume

    @staticmethod
    def uniform(r_vec) -> "PartitionSpec":
        r_vec = tuple(int(v) for v in np.atleast_1d(r_vec))
        if any(v < 1 for v in r_vec):
            raise ValueError("uniform partition counts must be >= 1")
        return PartitionSpec("uniform", r_vec=r_vec)

    @staticmethod
    def guided(r: int, v_m: float = 1e-4) -> "PartitionSpec":
        if r < 1:
            raise ValueError("partition budget must be >= 1")
        return PartitionSpec("guided", r=int(r), v_m=float(v_m))

    @property
    def budget(self) -> int:
        return int(np.prod(self.r_vec)) if self.kind == "uniform" else self.r


@dataclass
class BpConfig:
    tau: int
    partition: PartitionSpec
    mode: str = SYMBOLIC
    skip_lp: bool = True
    seed: int | None = None
    n_samples: int = 10_000
    feas_tol: float = DEFAULT_FEAS_TOL

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError("horizon must be >= 1")
        if self.mode not in (CONCRETE, SYMBOLIC, REFINE):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.partition.kind == "guided" and self.seed is None:
            raise ValueError("guided partitioning requires a seed")


@dataclass
class RunStats:
    lp_bp_solved: int = 0
    lp_bp_skipped: int = 0
    lp_backreach: int = 0
    lp_feasibility: int = 0
    milp_solved: int = 0
    milp_bound_only: int = 0
    crown_calls: int = 0
    wall_ms: float = 0.0


# --- backreachable sets ------------------------------------------------------

def _target_rows(A, B, cvec, target, n_x, n_u, x_off, u_off, nvars):
    """Rows forcing A x + B u + c into the target set (box or polytope)."""
    if isinstance(target, Hyperrectangle):
        G = np.vstack([np.eye(n_x), -np.eye(n_x)])
        h = np.concatenate([target.hi, -target.lo])
    elif isinstance(target, HalfspacePolytope):
        G, h = target.A, target.b
    else:
        raise TypeError("target must be a box or halfspace polytope")
    M = np.zeros((G.shape[0], nvars))
    M[:, x_off : x_off + n_x] = G @ A
    M[:, u_off : u_off + n_u] = G @ B
    return M, h - G @ cvec


def backreachable_set(sys: LinearSystem, next_set,
                      feas_tol: float = DEFAULT_FEAS_TOL) -> Hyperrectangle:
    """Hyper-rectangular outer bound on states that can reach ``next_set``.

    Policy-agnostic: solves 2 n_x LPs over {A x + B u + c in next_set,
    u in U, x in X}; EMPTY when no admissible control reaches the set.
    """
    box, _ = _backreachable_with_count(sys, next_set, feas_tol)
    return box


def _backreachable_with_count(sys, next_set, feas_tol=DEFAULT_FEAS_TOL):
    if next_set is EMPTY:
        return EMPTY, 0
    n_x, n_u = sys.n_x, sys.n_u
    nvars = n_x + n_u
    A_ub, b_ub = _target_rows(sys.A, sys.B, sys.c, next_set, n_x, n_u, 0, n_x, nvars)
    lb = np.concatenate([sys.X.lo, np.full(n_u, -np.inf)])
    ub = np.concatenate([sys.X.hi, np.full(n_u, np.inf)])
    if isinstance(sys.U, Hyperrectangle):
        lb[n_x:], ub[n_x:] = sys.U.lo, sys.U.hi
    else:
        Gu = np.zeros((sys.U.A.shape[0], nvars))
        Gu[:, n_x:] = sys.U.A
        A_ub = np.vstack([A_ub, Gu])
        b_ub = np.concatenate([b_ub, sys.U.b])
    lo, hi = np.empty(n_x), np.empty(n_x)
    solved = 0
    for k in range(n_x):
        c = np.zeros(nvars)
        c[k] = 1.0
        for sense, out in (("min", lo), ("max", hi)):
            lp = LinearProgram(c, A_ub, b_ub, np.zeros((0, nvars)), np.zeros(0),
                               lb.copy(), ub.copy(), sense)
            res = solve_lp(lp, feas_tol)
            solved += 1
            if res.status == SolveStatus.INFEASIBLE:
                return EMPTY, solved
            if res.status != SolveStatus.OPTIMAL:
                raise SolverError(
                    f"backreachable LP {sense} x[{k}]: {res.status.value} {res.message}"
                )
            out[k] = res.objective
    return Hyperrectangle(lo, hi), solved


# --- chained BP LPs ----------------------------------------------------------

@dataclass
class ChainContext:
    """Constraint context for the BP LPs at one timestep.

    For each chain step i in {t, ..., -1}: ``rbar[i]`` is the backreachable
    rectangle, ``pbar[i+1]`` the bounded set the step must land in, and
    ``omega[i]`` the affine control bounds (the current element's relaxation
    replaces omega[t]).  ``concrete`` truncates the chain to the single step
    t -> pbar[t+1].
    """

    sys: LinearSystem
    t: int
    rbar: dict
    pbar: dict
    omega: dict
    mode: str = SYMBOLIC
    feas_tol: float = DEFAULT_FEAS_TOL


def _chain_lp_parts(ctx: ChainContext, element: Hyperrectangle, relaxation):
    """(A_ub, b_ub, A_eq, b_eq, lb, ub) for one element; None if trivially empty."""
    sys = ctx.sys
    n_x, n_u = sys.n_x, sys.n_u
    times = [ctx.t] if ctx.mode == CONCRETE else list(range(ctx.t, 0))
    L = len(times)
    nvars = (L + 1) * n_x + L * n_u

    def x_off(j):
        return j * n_x

    def u_off(j):
        return (L + 1) * n_x + j * n_u

    lb = np.full(nvars, -np.inf)
    ub = np.full(nvars, np.inf)
    lb[:n_x], ub[:n_x] = element.lo, element.hi
    for j in range(1, L + 1):
        if j == L:
            nxt = ctx.pbar[times[-1] + 1]
        else:
            i = times[j]
            nxt = intersect(ctx.rbar[i], ctx.pbar[i])
            if nxt is EMPTY:
                return None
        lb[x_off(j) : x_off(j) + n_x] = nxt.lo
        ub[x_off(j) : x_off(j) + n_x] = nxt.hi

    A_eq = np.zeros((L * n_x, nvars))
    b_eq = np.zeros(L * n_x)
    A_ub = np.zeros((2 * L * n_u, nvars))
    b_ub = np.zeros(2 * L * n_u)
    for j, i in enumerate(times):
        r0 = j * n_x
        A_eq[r0 : r0 + n_x, x_off(j + 1) : x_off(j + 1) + n_x] = np.eye(n_x)
        A_eq[r0 : r0 + n_x, x_off(j) : x_off(j) + n_x] = -sys.A
        A_eq[r0 : r0 + n_x, u_off(j) : u_off(j) + n_u] = -sys.B
        b_eq[r0 : r0 + n_x] = sys.c

        bnds = relaxation if j == 0 else ctx.omega[i]
        q0 = 2 * j * n_u
        A_ub[q0 : q0 + n_u, u_off(j) : u_off(j) + n_u] = np.eye(n_u)
        A_ub[q0 : q0 + n_u, x_off(j) : x_off(j) + n_x] = -bnds.Psi
        b_ub[q0 : q0 + n_u] = bnds.alpha
        A_ub[q0 + n_u : q0 + 2 * n_u, u_off(j) : u_off(j) + n_u] = -np.eye(n_u)
        A_ub[q0 + n_u : q0 + 2 * n_u, x_off(j) : x_off(j) + n_x] = bnds.Phi
        b_ub[q0 + n_u : q0 + 2 * n_u] = -bnds.beta
    return A_ub, b_ub, A_eq, b_eq, lb, ub


def bp_bounds(sys: LinearSystem, net: FeedforwardNetwork, ctx: ChainContext,
              element: Hyperrectangle, relaxation: crown.AffineBounds):
    """Min/max box of x_t over the chained BP constraints for one element.

    EMPTY when no state in the element can reach the target through the chain.
    """
    parts = _chain_lp_parts(ctx, element, relaxation)
    if parts is None:
        return EMPTY
    A_ub, b_ub, A_eq, b_eq, lb, ub = parts
    n_x = sys.n_x
    lo, hi = np.empty(n_x), np.empty(n_x)
    for k in range(n_x):
        c = np.zeros(lb.size)
        c[k] = 1.0
        for sense, out in (("min", lo), ("max", hi)):
            lp = LinearProgram(c, A_ub, b_ub, A_eq, b_eq, lb.copy(), ub.copy(), sense)
            res = solve_lp(lp, ctx.feas_tol)
            if res.status == SolveStatus.INFEASIBLE:
                return EMPTY
            if res.status != SolveStatus.OPTIMAL:
                raise SolverError(f"BP LP {sense} x[{k}]: {res.status.value} {res.message}")
            out[k] = res.objective
    return Hyperrectangle(lo, hi)


def skip_lp_filter(current_union, element: Hyperrectangle, k: int, sense: str) -> bool:
    """True iff the (k, sense) LP cannot extend the running union: the
    element's own face in that direction is already inside the union box."""
    if current_union is EMPTY or current_union is None:
        return False
    if sense == "max":
        return element.hi[k] <= current_union.hi[k]
    return element.lo[k] >= current_union.lo[k]


class _UnionBox:
    """Bounding rectangle of the union of completed element boxes."""

    def __init__(self, n_x):
        self.lo = np.full(n_x, np.inf)
        self.hi = np.full(n_x, -np.inf)
        self.count = 0

    def _snap(self):
        # solver noise can cross the faces of measure-zero sets by ~1e-15;
        # widen to the conservative hull (never shrink)
        if np.any(self.lo > self.hi + 1e-9):
            raise SolverError("union box faces crossed beyond tolerance")
        return np.minimum(self.lo, self.hi), np.maximum(self.lo, self.hi)

    def current(self):
        if self.count == 0:
            return EMPTY
        return Hyperrectangle(*self._snap())

    def add(self, faces):
        # faces: list of (k, sense, value) from one feasible element
        for k, sense, v in faces:
            if sense == "max":
                self.hi[k] = max(self.hi[k], v)
            else:
                self.lo[k] = min(self.lo[k], v)
        self.count += 1

    def box(self):
        if self.count == 0 or np.any(~np.isfinite(self.lo)) or np.any(~np.isfinite(self.hi)):
            return EMPTY
        return Hyperrectangle(*self._snap())


def _solve_elements(sys, net, ctx, elements, skip_lp, stats, lock, threads):
    """Relax + 2 n_x LPs per element; returns the union bounding box."""
    n_x = sys.n_x
    acc = _UnionBox(n_x)

    def handle(element):
        relaxation = crown.relax(net, element)
        with lock:
            stats.crown_calls += 1
        parts = _chain_lp_parts(ctx, element, relaxation)
        if parts is None:
            return
        A_ub, b_ub, A_eq, b_eq, lb, ub = parts
        faces = []
        solved = skipped = 0
        infeasible = False
        for k in range(n_x):
            for sense in ("min", "max"):
                if skip_lp:
                    if infeasible:
                        skipped += 1
                        continue
                    with lock:
                        cur = acc.current()
                    if skip_lp_filter(cur, element, k, sense):
                        skipped += 1
                        continue
                c = np.zeros(lb.size)
                c[k] = 1.0
                lp = LinearProgram(c, A_ub, b_ub, A_eq, b_eq, lb.copy(), ub.copy(), sense)
                res = solve_lp(lp, ctx.feas_tol)
                solved += 1
                if res.status == SolveStatus.INFEASIBLE:
                    infeasible = True
                    faces.clear()
                    continue
                if res.status != SolveStatus.OPTIMAL:
                    raise SolverError(f"BP LP: {res.status.value} {res.message}")
                if not infeasible:
                    faces.append((k, sense, res.objective))
        with lock:
            stats.lp_bp_solved += solved
            stats.lp_bp_skipped += skipped
            if faces and not infeasible:
                acc.add(faces)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(handle, elements))
    else:
        for e in elements:
            handle(e)
    return acc.box()


def _make_elements(sys, net, target, t, domain, cfg, ctx, stats):
    spec = cfg.partition
    if spec.kind == "uniform":
        return uniform_partition(domain, spec.r_vec)
    q, samples = estimate_bp_set(sys, net, target, t, domain, cfg.n_samples, cfg.seed)

    def feasible(box):
        relaxation = crown.relax(net, box)
        stats.crown_calls += 1
        parts = _chain_lp_parts(ctx, box, relaxation)
        if parts is None:
            return False
        A_ub, b_ub, A_eq, b_eq, lb, ub = parts
        lp = LinearProgram(np.zeros(lb.size), A_ub, b_ub, A_eq, b_eq, lb, ub, "min")
        stats.lp_feasibility += 1
        return check_feasible(lp, cfg.feas_tol)

    return guided_partition(domain, feasible, q, samples, spec.r, spec.v_m)


def _fill_empty(seq, t_from, t_to):
    for i in range(t_from, t_to - 1, -1):
        seq.sets[i] = EMPTY


def hybreach(sys: LinearSystem, net: FeedforwardNetwork, target: Hyperrectangle,
             cfg: BpConfig):
    """Backprojection over-approximations for t in {-tau, ..., 0}.

    Returns (TimedSetSequence, RunStats).  Every true backprojection set is
    contained in the reported rectangle; when the one-step set lands inside
    the target the run stops early with the invariance flag set and the
    target itself is a valid bound for all remaining steps.
    """
    if target is EMPTY:
        raise ValueError("target set must be non-empty")
    if not isinstance(target, Hyperrectangle):
        raise TypeError("the recursion needs a hyperrectangular target set")
    t0 = time.perf_counter()
    threads = max(1, int(os.environ.get("BACKREACH_THREADS", "1")))
    stats = RunStats()
    lock = Lock()
    tau = cfg.tau

    seq = TimedSetSequence(tau=tau)
    seq.sets[0] = target
    rbar = {}
    omega = {}
    first_mode = CONCRETE if cfg.mode == REFINE else cfg.mode

    for t in range(-1, -tau - 1, -1):
        rt, n_lp = _backreachable_with_count(sys, seq.sets[t + 1], cfg.feas_tol)
        stats.lp_backreach += n_lp
        rbar[t] = rt
        if rt is EMPTY:
            _fill_empty(seq, t, -tau)
            break
        ctx = ChainContext(sys=sys, t=t, rbar=rbar,
                           pbar={i: seq.sets[i] for i in range(t + 1, 1)},
                           omega=omega, mode=first_mode, feas_tol=cfg.feas_tol)
        elements = _make_elements(sys, net, target, t, rt, cfg, ctx, stats)
        seq.partitions[t] = elements
        if not elements:
            _fill_empty(seq, t, -tau)
            break
        box = _solve_elements(sys, net, ctx, elements, cfg.skip_lp, stats, lock, threads)
        seq.sets[t] = box
        if box is EMPTY:
            _fill_empty(seq, t - 1, -tau)
            break
        omega[t] = crown.relax(net, box)
        stats.crown_calls += 1
        if t == -1 and subset(box, target, INVARIANCE_TOL):
            seq.invariance = True
            seq.invariance_step = t
            for i in range(t - 1, -tau - 1, -1):
                seq.sets[i] = target
            break

    seq.omega = omega
    seq.validate()

    if cfg.mode == REFINE and not seq.invariance and all(
        seq.sets[t] is not EMPTY for t in range(-tau, 0)
    ):
        seq = _refine_pass(sys, net, target, cfg, seq, rbar, omega, stats, lock, threads)

    stats.wall_ms = (time.perf_counter() - t0) * 1e3
    return seq, stats


def _refine_pass(sys, net, target, cfg, first: TimedSetSequence, rbar, omega,
                 stats, lock, threads):
    """Second pass of refine mode: re-solve each set over the full chain of
    first-pass sets and control bounds, partitioning over the first-pass set."""
    tau = cfg.tau
    out = TimedSetSequence(tau=tau)
    out.sets[0] = target
    out.sets[-1] = first.sets[-1]
    out.partitions[-1] = first.partitions.get(-1, [])
    out.omega = dict(omega)
    pbar_first = {i: first.sets[i] for i in range(-tau, 1)}
    for t in range(-2, -tau - 1, -1):
        domain = first.sets[t]
        ctx = ChainContext(sys=sys, t=t, rbar=rbar, pbar=pbar_first,
                           omega=omega, mode=SYMBOLIC, feas_tol=cfg.feas_tol)
        elements = _make_elements(sys, net, target, t, domain, cfg, ctx, stats)
        out.partitions[t] = elements
        if not elements:
            _fill_empty(out, t, -tau)
            break
        box = _solve_elements(sys, net, ctx, elements, cfg.skip_lp, stats, lock, threads)
        out.sets[t] = box
        if box is EMPTY:
            _fill_empty(out, t - 1, -tau)
            break
    out.validate()
    return out
