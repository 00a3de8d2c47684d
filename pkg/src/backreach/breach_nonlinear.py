"""Backprojection over-approximation for nonlinear dynamics.

The dynamics are abstracted by sound piecewise-linear sandwiches (built once
over the full operating region for backreachable sets, then rebuilt over
each step's backreachable rectangle for tightness), the network is encoded
exactly with big-M constraints, and each face bound is one MILP.

``breach_milp`` is the concrete recursion (one step of constraints at a
time); ``hybrid_symbolic`` additionally replaces every
``symbolic_period``-th set with a single chained MILP spanning all steps
back to the last concretization anchor, which tightens the estimate at extra
solve cost.  Node-limited solves fall back to the LP relaxation bound on the
affected face, which stays on the outer (sound) side and is flagged.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .breach_linear import RunStats
from .dynamics import NonlinearModel
from .geom import EMPTY, Hyperrectangle, TimedSetSequence, intersect, sample
from .network import FeedforwardNetwork, interval_bounds
from .oracle import rng_for, rollout_batch
from .overt import abstract_dynamics, encode_abstraction
from .solver import (
    DEFAULT_FEAS_TOL,
    DEFAULT_GAP_TOL,
    ModelBuilder,
    SolveStatus,
    SolverError,
    encode_relu_bigm,
    solve_milp,
)


@dataclass
class NlBpConfig:
    tau: int
    epsilon: float = 0.1
    symbolic_period: int = 1     # 1 = fully concrete
    gap_tol: float = DEFAULT_GAP_TOL
    node_limit: int = 10**6
    feas_tol: float = DEFAULT_FEAS_TOL
    seed: int = 0
    warm_samples: int = 2000

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError("horizon must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("abstraction tolerance must be positive")
        if self.symbolic_period < 1:
            raise ValueError("symbolic period must be >= 1")


def _domain_box(model: NonlinearModel, box: Hyperrectangle) -> Hyperrectangle:
    out = intersect(box, model.X)
    if out is EMPTY:
        raise ValueError("domain does not meet the operating region")
    return out


def _encode_step(builder: ModelBuilder, model, net, abs_dyn, domain: Hyperrectangle,
                 x_vars=None, name="step"):
    """One closed-loop step block: u = pi(x) exactly, successor via abstraction."""
    if x_vars is None:
        x_vars = [builder.new_var(domain.lo[k], domain.hi[k], f"{name}.x{k}")
                  for k in range(model.n_x)]
    else:
        for k, v in enumerate(x_vars):
            builder.tighten(v, domain.lo[k], domain.hi[k])
    enc = encode_relu_bigm(builder, net, x_vars, interval_bounds(net, domain),
                           name=f"{name}.nn")
    for k, uv in enumerate(enc.output_vars):
        builder.tighten(uv, model.U.lo[k], model.U.hi[k])
    succ, _, _ = encode_abstraction(builder, abs_dyn, x_vars, enc.output_vars,
                                    name=f"{name}.dyn")
    return x_vars, enc.output_vars, succ


def _solve_faces(builder: ModelBuilder, x_vars, gap_tol, node_limit, feas_tol,
                 incumbent_for, stats):
    """Solve the 2 n_x face MILPs on a prebuilt model; returns (box, flags)."""
    n_x = len(x_vars)
    lo, hi = np.empty(n_x), np.empty(n_x)
    flags = []
    for k in range(n_x):
        for sense, out in (("min", lo), ("max", hi)):
            mip = builder.build_mip({x_vars[k]: 1.0}, sense)
            res = solve_milp(mip, gap_tol=gap_tol, node_limit=node_limit,
                             feas_tol=feas_tol, incumbent=incumbent_for(k, sense))
            stats.milp_solved += 1
            if res.status == SolveStatus.INFEASIBLE:
                return EMPTY, []
            if res.status != SolveStatus.OPTIMAL:
                raise SolverError(f"face MILP {sense} x[{k}]: {res.status.value} {res.message}")
            if res.bound_only:
                flags.append(f"{sense}_x{k}_bound_only")
                stats.milp_bound_only += 1
            out[k] = res.objective
    return Hyperrectangle(lo, hi), flags


def backreachable_set_nl(model: NonlinearModel, next_set, epsilon: float,
                         gap_tol: float = DEFAULT_GAP_TOL,
                         node_limit: int = 10**6,
                         feas_tol: float = DEFAULT_FEAS_TOL,
                         abs_full=None, stats: RunStats | None = None,
                         seed: int = 0):
    """Outer rectangle on states from which some admissible control can reach
    ``next_set`` under the abstracted dynamics built over the full region."""
    if next_set is EMPTY:
        return EMPTY
    stats = stats if stats is not None else RunStats()
    if abs_full is None:
        abs_full = abstract_dynamics(model, model.X, model.U, epsilon)

    # true transitions landing in the target warm-start the face solves
    rng = rng_for(seed, "nl-backreach")
    xs = sample(model.X, 4000, rng)
    us = sample(model.U, 4000, rng)
    land = model.step(xs, us)
    hits = np.all(land >= next_set.lo, axis=1) & np.all(land <= next_set.hi, axis=1)
    warm = xs[hits]

    b = ModelBuilder()
    xv = [b.new_var(model.X.lo[k], model.X.hi[k], f"x{k}") for k in range(model.n_x)]
    uv = [b.new_var(model.U.lo[k], model.U.hi[k], f"u{k}") for k in range(model.n_u)]
    succ, _, _ = encode_abstraction(b, abs_full, xv, uv, name="dyn")
    for k, sv in enumerate(succ):
        b.tighten(sv, next_set.lo[k], next_set.hi[k])
    box, _ = _solve_faces(b, xv, gap_tol, node_limit, feas_tol,
                          _incumbent_factory(warm), stats)
    return box


def _warm_points(model, net, domain, chain_boxes, cfg, t):
    """True rollout points threading every chain box; objective warm starts."""
    rng = rng_for(cfg.seed, "nl-warm", abs(t))
    x0 = sample(domain, cfg.warm_samples, rng)
    states = rollout_batch(model, net, x0, len(chain_boxes))
    ok = np.ones(x0.shape[0], dtype=bool)
    for s, box in enumerate(chain_boxes, start=1):
        xs = states[s]
        ok &= np.all(xs >= box.lo - 1e-12, axis=1) & np.all(xs <= box.hi + 1e-12, axis=1)
    return x0[ok]


def _incumbent_factory(points):
    def incumbent_for(k, sense):
        if points.shape[0] == 0:
            return None
        v = points[:, k].max() if sense == "max" else points[:, k].min()
        return (float(v), None)
    return incumbent_for


def breach_milp(model: NonlinearModel, net: FeedforwardNetwork,
                target: Hyperrectangle, cfg: NlBpConfig):
    """Concrete multi-step BP over-approximation (one MILP step at a time)."""
    return _run_nl(model, net, target, cfg, symbolic=False)


def hybrid_symbolic(model: NonlinearModel, net: FeedforwardNetwork,
                    target: Hyperrectangle, cfg: NlBpConfig):
    """Concrete stepping with a chained symbolic solve every
    ``symbolic_period`` steps (and at the horizon); the symbolic set replaces
    the concrete one and anchors later chains."""
    if cfg.symbolic_period < 2:
        raise ValueError("hybrid-symbolic needs symbolic_period >= 2")
    return _run_nl(model, net, target, cfg, symbolic=True)


def _run_nl(model, net, target, cfg, symbolic: bool):
    t0 = time.perf_counter()
    stats = RunStats()
    seq = TimedSetSequence(tau=cfg.tau)
    seq.sets[0] = target
    abs_full = abstract_dynamics(model, model.X, model.U, cfg.epsilon)
    rbar = {}
    abs_by_t = {}
    anchor = 0

    for t in range(-1, -cfg.tau - 1, -1):
        prev = seq.sets[t + 1]
        if prev is EMPTY:
            seq.sets[t] = EMPTY
            continue
        rt = backreachable_set_nl(model, prev, cfg.epsilon, cfg.gap_tol,
                                  cfg.node_limit, cfg.feas_tol, abs_full, stats,
                                  seed=cfg.seed)
        if rt is EMPTY:
            for i in range(t, -cfg.tau - 1, -1):
                seq.sets[i] = EMPTY
            break
        rt = _domain_box(model, rt)
        rbar[t] = rt
        abs_by_t[t] = abstract_dynamics(model, rt, model.U, cfg.epsilon)

        warm = _warm_points(model, net, rt, [prev], cfg, t)
        b = ModelBuilder()
        xv, _, succ = _encode_step(b, model, net, abs_by_t[t], rt, name="s0")
        for k, sv in enumerate(succ):
            b.tighten(sv, prev.lo[k], prev.hi[k])
        box, flags = _solve_faces(b, xv, cfg.gap_tol, cfg.node_limit, cfg.feas_tol,
                                  _incumbent_factory(warm), stats)
        if box is EMPTY:
            for i in range(t, -cfg.tau - 1, -1):
                seq.sets[i] = EMPTY
            break
        seq.sets[t] = box
        if flags:
            seq.flags[t] = flags

        steps_since_anchor = anchor - t
        if symbolic and steps_since_anchor >= 2 and (
            steps_since_anchor % cfg.symbolic_period == 0 or t == -cfg.tau
        ):
            sym_box, sym_flags = _symbolic_solve(model, net, cfg, seq, rbar,
                                                 abs_by_t, t, anchor, stats)
            if sym_box is EMPTY:
                for i in range(t, -cfg.tau - 1, -1):
                    seq.sets[i] = EMPTY
                break
            seq.sets[t] = sym_box
            if sym_flags:
                seq.flags[t] = seq.flags.get(t, []) + sym_flags
            anchor = t

    seq.validate()
    stats.wall_ms = (time.perf_counter() - t0) * 1e3
    return seq, stats


def _symbolic_solve(model, net, cfg, seq, rbar, abs_by_t, t, anchor, stats):
    """One chained MILP over steps t .. anchor-1 anchored at seq.sets[anchor]."""
    chain = list(range(t, anchor))
    chain_boxes = []
    for i in chain[1:]:
        chain_boxes.append(intersect(rbar[i], seq.sets[i]))
    chain_boxes.append(seq.sets[anchor])
    if any(b is EMPTY for b in chain_boxes):
        return EMPTY, []
    warm = _warm_points(model, net, rbar[t], chain_boxes, cfg, t)

    b = ModelBuilder()
    x_vars = None
    first_x = None
    for j, i in enumerate(chain):
        dom = rbar[i] if j == 0 else intersect(rbar[i], seq.sets[i])
        xv, _, succ = _encode_step(b, model, net, abs_by_t[i], dom,
                                   x_vars=x_vars, name=f"s{j}")
        if j == 0:
            first_x = xv
        x_vars = succ
    final = seq.sets[anchor]
    for k, sv in enumerate(x_vars):
        b.tighten(sv, final.lo[k], final.hi[k])
    return _solve_faces(b, first_x, cfg.gap_tol, cfg.node_limit, cfg.feas_tol,
                        _incumbent_factory(warm), stats)
