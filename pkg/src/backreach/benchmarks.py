"""Benchmark systems, vector fields, and constructed control policies.

Policies are constructed, not trained: each one exactly encodes a
piecewise-linear interpolant of its target vector field (sampled on a
documented grid) as a ReLU network, with a final clip stage guaranteeing the
output lies in the control set.  Every builder runs a rollout smoke test and
raises if the grid is too coarse to preserve the intended behavior.
"""

from __future__ import annotations

import numpy as np

from . import dynamics as dyn
from .dynamics import LinearSystem, NonlinearModel
from .geom import Hyperrectangle, contains, sample
from .network import FeedforwardNetwork, evaluate
from .oracle import rng_for, rollout_batch, reaching_mask
from .policies import PwlBuilder

BENCHMARKS = (
    "double_integrator",
    "ground_robot_linear",
    "ground_robot_linear_faulty",
    "ground_robot_nonlinear_0_2pi",
    "ground_robot_nonlinear_pm_pi",
    "quadrotor_6d",
)


class PolicyBuildError(ValueError):
    pass


# --- vector fields -----------------------------------------------------------

def robot_field(pts, exp_sign: float = -2.0) -> np.ndarray:
    """Obstacle-avoidance velocity field for the ground robot.

    Radial push away from the origin plus a sigmoid-derivative bump that
    steers trajectories around the obstacle; components clipped to [-1, 1].
    """
    pts = np.atleast_2d(np.asarray(pts, float))
    px, py = pts[:, 0], pts[:, 1]
    r2 = np.maximum(px * px + py * py, 1e-9)
    s = np.exp(-px / 2.0 + exp_sign)
    bump = s / (1.0 + s) ** 2
    ux = np.clip(1.0 + 2.0 * px / r2, -1.0, 1.0)
    uy = np.clip(py / r2 + 2.0 * np.sign(py) * bump, -1.0, 1.0)
    return np.stack([ux, uy], axis=1)


def quadrotor_h(py) -> np.ndarray:
    """Raw sideways swerve term 4/y - y/4 (odd; declared 0 at y = 0)."""
    py = np.asarray(py, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(py == 0.0, 0.0, 4.0 / np.where(py == 0.0, 1.0, py) - py / 4.0)
    return out


# --- policy builders ---------------------------------------------------------

_DI_GAINS = (0.5, 1.25)  # deadbeat-flavored regulator, closed-loop poles {0, 0.5}


def build_double_integrator_policy() -> FeedforwardNetwork:
    """u = clip(-k1 p - k2 v, -1, 1)."""
    box = Hyperrectangle([-12.0, -12.0], [12.0, 12.0])
    b = PwlBuilder(box)
    k1, k2 = _DI_GAINS
    h = b.lin([(-k1, b.input(0)), (-k2, b.input(1))])
    return b.finish([b.clip(h, -1.0, 1.0)])


ROBOT_PX_NODES = np.array(
    [-10.0, -6.0, -4.0, -3.0, -2.5, -2.0, -1.5, -1.0, -0.6, 0.0,
     0.6, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 6.0, 10.0]
)
ROBOT_PY_NODES = np.array(
    [-10.0, -6.0, -3.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0, 6.0, 10.0]
)
ROBOT_PY_REF = -1.5      # column along which the sideways profile is sampled


ROBOT_CRUISE = 0.25  # forward-speed cap; bounds backprojection growth per step


def robot_axis_profile(px) -> np.ndarray:
    """On-axis forward speed: the field's clip(1 + 2 px / max(px^2, e), -1, 1)
    with the cruise portion capped so approach toward the obstacle is slow."""
    px = np.asarray(px, float)
    raw = np.clip(1.0 + 2.0 * px / np.maximum(px * px, 0.36), -1.0, 1.0)
    return np.minimum(raw, ROBOT_CRUISE)


def robot_floor_profile(py) -> np.ndarray:
    """Forward-speed floor off the axis: the strongest-repulsion column
    px = -1, capped at cruise speed.  Even in py."""
    py = np.asarray(py, float)
    return np.minimum(np.clip(1.0 - 2.0 / (1.0 + py * py), -1.0, 1.0), ROBOT_CRUISE)


def robot_sideways_profile(py, exp_sign: float = -2.0) -> np.ndarray:
    """u_y of the field sampled along the px = ROBOT_PY_REF column."""
    py = np.asarray(py, float)
    pts = np.stack([np.full(py.shape, ROBOT_PY_REF), py], axis=1)
    return robot_field(pts, exp_sign=exp_sign)[:, 1]


FAULT_CORRIDOR = (1.0, 2.1)  # py band steered down toward the axis


def robot_fault_boost(py) -> np.ndarray:
    """Faulty forward-speed floor: full speed inside the corridor and along
    the axis approach, so buggy trajectories race toward the obstacle."""
    py = np.asarray(py, float)
    hi = FAULT_CORRIDOR[1]
    return np.interp(py, [-21.0, -0.8, -0.6, hi, hi + 0.2, 21.0],
                     [-1.0, -1.0, 1.0, 1.0, -1.0, -1.0])


def robot_fault_ceiling(py) -> np.ndarray:
    """Faulty sideways ceiling: dive toward the axis inside the corridor,
    settle proportionally below it, no effect elsewhere."""
    py = np.asarray(py, float)
    lo, hi = FAULT_CORRIDOR
    return np.interp(py, [-21.0, -0.2, 0.0, lo, hi, hi + 0.2, 21.0],
                     [1.0, 1.0, 0.0, -1.0, -1.0, 1.0, 1.0])


def robot_ridge_field(pts, exp_sign: float = -2.0, faulty: bool = False) -> np.ndarray:
    """The declared policy target: a shallow decomposition of the paper field.

    u_x = max(axis(px), floor(py)) [, fault boost(py)]: radial avoidance on
    the axis, capped cruise off it.  u_y = sideways(py) [min fault
    ceiling(py)]: the faulty variant steers a corridor of states down onto
    the axis and races them toward the obstacle at the origin.
    """
    pts = np.atleast_2d(np.asarray(pts, float))
    px, py = pts[:, 0], pts[:, 1]
    ux = np.maximum(robot_axis_profile(px), robot_floor_profile(py))
    uy = robot_sideways_profile(py, exp_sign)
    if faulty:
        ux = np.maximum(ux, robot_fault_boost(py))
        uy = np.minimum(uy, robot_fault_ceiling(py))
    return np.stack([ux, uy], axis=1)


def build_robot_policy(exp_sign: float = -2.0, faulty: bool = False,
                       px_nodes=None, py_nodes=None) -> FeedforwardNetwork:
    """Shallow network for the ground robot.

    Interpolates the field's 1-D profiles on their grids and combines them
    with single max/min gates; all profile values already lie in the control
    range, so the final clip stage is an exact pass-through and affine
    relaxations stay tight on small boxes.
    """
    px_nodes = ROBOT_PX_NODES if px_nodes is None else np.asarray(px_nodes, float)
    py_nodes = ROBOT_PY_NODES if py_nodes is None else np.asarray(py_nodes, float)
    box = Hyperrectangle([-10.0, -10.0], [10.0, 10.0])
    b = PwlBuilder(box)
    px, py = b.input(0), b.input(1)
    axis = b.pwl1d(px, px_nodes, robot_axis_profile(px_nodes))
    floor = b.pwl1d(py, py_nodes, robot_floor_profile(py_nodes))
    ux = b.vmax(axis, floor)
    uy = b.pwl1d(py, py_nodes, robot_sideways_profile(py_nodes, exp_sign))
    if faulty:
        fb_nodes = np.array([-21.0, -0.8, -0.6, FAULT_CORRIDOR[1],
                             FAULT_CORRIDOR[1] + 0.2, 21.0])
        ux = b.vmax(ux, b.pwl1d(py, fb_nodes, robot_fault_boost(fb_nodes)))
        fc_nodes = np.array([-21.0, -0.2, 0.0, FAULT_CORRIDOR[0], FAULT_CORRIDOR[1],
                             FAULT_CORRIDOR[1] + 0.2, 21.0])
        uy = b.vmin(uy, b.pwl1d(py, fc_nodes, robot_fault_ceiling(fc_nodes)))
    return b.finish([b.clip(ux, -1.0, 1.0), b.clip(uy, -1.0, 1.0)])


NL_ROBOT_PY_NODES = np.array([-6.0, -2.0, -0.5, 0.0, 0.5, 2.0, 6.0])


def nl_robot_targets(theta_param: str, px_ref: float, py) -> tuple:
    """Target (speed, heading) of the robot field along the sampling line."""
    py = np.asarray(py, float)
    pts = np.stack([np.full(py.shape, px_ref), py], axis=1)
    u = robot_field(pts)
    v = np.minimum(np.hypot(u[:, 0], u[:, 1]), 1.0)
    theta = np.arctan2(u[:, 1], u[:, 0])
    if theta_param == "0_2pi":
        theta = np.mod(theta, 2.0 * np.pi)
    elif theta_param != "pm_pi":
        raise ValueError(f"unknown theta parameterization {theta_param!r}")
    return v, theta


def build_nl_robot_policy(theta_param: str, py_nodes=None) -> FeedforwardNetwork:
    """[speed, heading] policy interpolated along a py grid line.

    The heading is interpolated across the field's angle-wraparound, which
    reproduces the vulnerable band near the axis: in the [0, 2pi]
    parameterization the interpolant sweeps through pi on the positive side
    of the obstacle, in [-pi, pi] through 0 on the negative side.
    """
    py_nodes = NL_ROBOT_PY_NODES if py_nodes is None else np.asarray(py_nodes, float)
    # sample where the wraparound band lives for each parameterization
    px_ref = -3.0 if theta_param == "0_2pi" else -1.0
    v_vals, th_vals = nl_robot_targets(theta_param, px_ref, py_nodes)
    box = Hyperrectangle([-6.0, -6.0], [6.0, 6.0])
    b = PwlBuilder(box)
    py = b.input(1)
    v = b.clip(b.pwl1d(py, py_nodes, v_vals), 0.0, 1.0)
    if theta_param == "0_2pi":
        th = b.clip(b.pwl1d(py, py_nodes, th_vals), 0.0, 2.0 * np.pi)
    else:
        th = b.clip(b.pwl1d(py, py_nodes, th_vals), -np.pi, np.pi)
    return b.finish([v, th])


QUAD_OBSTACLE = np.array([0.0, 0.0, 2.5])
QUAD_RAMP_SLOPE = 2.2  # sign-ramp steepness at the obstacle
QUAD_SAT = 4.0 / QUAD_RAMP_SLOPE   # |offset| where the ramp saturates at 4
QUAD_ZONE = 2.25       # repel plateau half-width around the obstacle
QUAD_DECAY = 4.0       # repulsion has died out beyond this distance


def quadrotor_repel_profile(s) -> np.ndarray:
    """Odd 1-D profile of 4*sign(s): a ramp through zero saturating at full
    strength, a plateau around the obstacle, decaying to nothing far away."""
    s = np.asarray(s, float)
    return np.interp(
        s,
        [-21.0, -QUAD_DECAY, -QUAD_ZONE, -QUAD_SAT, QUAD_SAT, QUAD_ZONE, QUAD_DECAY, 21.0],
        [0.0, 0.0, -4.0, -4.0, 4.0, 4.0, 0.0, 0.0],
    )


def quadrotor_swerve_profile(s) -> np.ndarray:
    """Sideways profile: repel near the obstacle, the 4/y - y/4 swerve beyond."""
    s = np.asarray(s, float)
    nodes = np.array([3.0, 4.0, 6.0, 10.0, 21.0])
    tail = quadrotor_h(nodes)
    xs = np.concatenate([-nodes[::-1], [-QUAD_ZONE, -QUAD_SAT, QUAD_SAT, QUAD_ZONE], nodes])
    ys = np.concatenate([-tail[::-1], [-4.0, -4.0, 4.0, 4.0], tail])
    return np.interp(s, xs, ys)


def quadrotor_field(states) -> np.ndarray:
    """Declared per-axis target field of the quadrotor policy."""
    states = np.atleast_2d(np.asarray(states, float))
    p = states[:, :3] - QUAD_OBSTACLE
    ux = np.clip(quadrotor_repel_profile(p[:, 0]), -4, 4)
    uy = np.clip(quadrotor_swerve_profile(p[:, 1]), -4, 4)
    uz = np.clip(quadrotor_repel_profile(p[:, 2]), -4, 4)
    return np.stack([ux, uy, uz], axis=1)


def build_quadrotor_policy() -> FeedforwardNetwork:
    """Per-axis repel-and-swerve field for the 6-D quadrotor.

    Each control is a clipped 1-D profile of its own position coordinate
    relative to the obstacle: the saturated sign field 4*sign(p) near the
    obstacle, decaying outward, with the y axis carrying the sideways swerve
    term beyond the repel zone.  One hidden layer per profile keeps the
    affine relaxation tight, which the 6-D invariance certificate needs.
    """
    lo = np.array([-10.0, -10.0, -10.0, -1.0, -1.0, -1.0])
    hi = np.array([10.0, 10.0, 10.0, 1.0, 1.0, 1.0])
    b = PwlBuilder(Hyperrectangle(lo, hi))
    outs = []
    for k in range(3):
        p_rel = b.lin([(1.0, b.input(k))], -QUAD_OBSTACLE[k])
        if k == 1:
            nodes = np.array([-21.0, -10.0, -6.0, -4.0, -3.0, -QUAD_ZONE, -QUAD_SAT,
                              QUAD_SAT, QUAD_ZONE, 3.0, 4.0, 6.0, 10.0, 21.0])
            prof = b.pwl1d(p_rel, nodes, quadrotor_swerve_profile(nodes))
        else:
            nodes = np.array([-21.0, -QUAD_DECAY, -QUAD_ZONE, -QUAD_SAT,
                              QUAD_SAT, QUAD_ZONE, QUAD_DECAY, 21.0])
            prof = b.pwl1d(p_rel, nodes, quadrotor_repel_profile(nodes))
        outs.append(b.clip(prof, -4.0, 4.0))
    return b.finish(outs)


# --- systems -----------------------------------------------------------------

def double_integrator_system() -> LinearSystem:
    return LinearSystem(
        A=[[1.0, 1.0], [0.0, 1.0]],
        B=[[0.5], [1.0]],
        c=[0.0, 0.0],
        U=Hyperrectangle([-1.0], [1.0]),
        X=Hyperrectangle([-10.0, -10.0], [10.0, 10.0]),
    )


def ground_robot_system() -> LinearSystem:
    return LinearSystem(
        A=np.eye(2), B=np.eye(2), c=[0.0, 0.0],
        U=Hyperrectangle([-1.0, -1.0], [1.0, 1.0]),
        X=Hyperrectangle([-10.0, -10.0], [10.0, 10.0]),
    )


def quadrotor_system() -> LinearSystem:
    A = np.eye(6)
    A[0, 3] = A[1, 4] = A[2, 5] = 1.0
    B = np.zeros((6, 3))
    B[0, 0] = B[1, 1] = B[2, 2] = 0.5
    B[3, 0] = B[4, 1] = B[5, 2] = 1.0
    return LinearSystem(
        A=A, B=B, c=np.zeros(6),
        U=Hyperrectangle([-4.0, -4.0, -4.0], [4.0, 4.0, 4.0]),
        X=Hyperrectangle([-10.0, -10.0, -10.0, -1.0, -1.0, -1.0],
                         [10.0, 10.0, 10.0, 1.0, 1.0, 1.0]),
    )


def nl_robot_model(theta_param: str) -> NonlinearModel:
    theta_lo, theta_hi = (0.0, 2.0 * np.pi) if theta_param == "0_2pi" else (-np.pi, np.pi)
    exprs = (
        dyn.add(dyn.x_var(0), dyn.mul(dyn.u_var(0), dyn.cos(dyn.u_var(1)))),
        dyn.add(dyn.x_var(1), dyn.mul(dyn.u_var(0), dyn.sin(dyn.u_var(1)))),
    )
    return NonlinearModel(
        name=f"ground_robot_nonlinear_{theta_param}",
        exprs=exprs,
        U=Hyperrectangle([0.0, theta_lo], [1.0, theta_hi]),
        X=Hyperrectangle([-6.0, -6.0], [6.0, 6.0]),
    )


# --- smoke tests --------------------------------------------------------------

def _smoke_no_entry(system, net, x0_box, target, steps, n, seed, what):
    rng = rng_for(seed, "smoke", steps)
    x0 = sample(x0_box, n, rng)
    states = rollout_batch(system, net, x0, steps)
    hits = reaching_mask(states, target, steps)
    for s in range(1, steps + 1):
        hits = hits | reaching_mask(states, target, s)
    if hits.any():
        raise PolicyBuildError(f"{what}: {int(hits.sum())}/{n} rollouts enter the target set")


def _smoke_entry(system, net, x0_box, target, steps, n, seed, what):
    rng = rng_for(seed, "smoke", steps)
    x0 = sample(x0_box, n, rng)
    states = rollout_batch(system, net, x0, steps)
    hits = np.zeros(n, dtype=bool)
    for s in range(1, steps + 1):
        hits |= reaching_mask(states, target, s)
    if not hits.any():
        raise PolicyBuildError(f"{what}: no rollout reaches the target set")


def _smoke_grid_match(net, pts, targets, what, tol=1e-9):
    got = evaluate(net, pts)
    err = np.max(np.abs(got - targets))
    if err > tol:
        raise PolicyBuildError(f"{what}: interpolant misses field at grid nodes by {err:.2e}")
