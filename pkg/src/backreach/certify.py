"""Scenario definitions, benchmark assembly, and certification verdicts."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import benchmarks as bm
from .breach_linear import BpConfig, PartitionSpec, hybreach
from .breach_nonlinear import NlBpConfig, breach_milp, hybrid_symbolic
from .dynamics import (
    LinearSystem,
    NonlinearModel,
    expr_from_json,
    expr_to_json,
)
from .geom import (
    EMPTY,
    Hyperrectangle,
    TimedSetSequence,
    intersects,
    subset,
)
from .network import FeedforwardNetwork, load_network, network_from_json, network_to_json

SCHEMA_VERSION = 1

CERTIFIED_SAFE = "CertifiedSafe"
POSSIBLE_COLLISION = "PossibleCollision"
INCONCLUSIVE = "Inconclusive"

EXIT_CODES = {CERTIFIED_SAFE: 0, POSSIBLE_COLLISION: 2, INCONCLUSIVE: 3}


class ScenarioError(ValueError):
    """Scenario file violates the schema; message carries the JSON path."""


@dataclass
class Scenario:
    name: str
    system: object                    # LinearSystem | NonlinearModel
    policy: FeedforwardNetwork
    x_T: Hyperrectangle
    x_0: Hyperrectangle
    config: object                    # BpConfig | NlBpConfig
    seed: int
    policy_spec: dict | None = None

    def __post_init__(self):
        X = self.system.X
        for nm, box in (("x_0", self.x_0), ("x_T", self.x_T)):
            if not subset(box, X, 1e-12):
                raise ScenarioError(f"{nm} must be contained in the operating region X")

    @property
    def is_linear(self) -> bool:
        return isinstance(self.system, LinearSystem)


@dataclass
class Certificate:
    verdict: str
    horizon: int
    invariance: bool
    sets: TimedSetSequence | None
    collision_steps: list = field(default_factory=list)
    bound_only_steps: list = field(default_factory=list)
    diagnostics: str = ""
    stats: object = None

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.verdict]

    def to_json(self) -> dict:
        out = {
            "verdict": self.verdict,
            "horizon": self.horizon,
            "invariance": self.invariance,
            "collision_steps": self.collision_steps,
            "bound_only_steps": self.bound_only_steps,
        }
        if self.diagnostics:
            out["diagnostics"] = self.diagnostics
        if self.sets is not None:
            out["sets"] = self.sets.to_json()
        if self.stats is not None:
            out["stats"] = {k: v for k, v in vars(self.stats).items()}
        return out


def run_pipeline(scenario: Scenario):
    """Backward-reachability run matching the scenario's system class."""
    if scenario.is_linear:
        return hybreach(scenario.system, scenario.policy, scenario.x_T, scenario.config)
    cfg = scenario.config
    if cfg.symbolic_period >= 2:
        return hybrid_symbolic(scenario.system, scenario.policy, scenario.x_T, cfg)
    return breach_milp(scenario.system, scenario.policy, scenario.x_T, cfg)


def certify(scenario: Scenario) -> Certificate:
    """Run the pipeline and intersect every backprojection set with X_0.

    Conservative by construction: a touching set already counts as a
    possible collision, and any face that was only bounded by a relaxation
    (node-limited MILP) near X_0 downgrades the verdict to inconclusive
    rather than safe.
    """
    try:
        seq, stats = run_pipeline(scenario)
    except Exception as exc:  # pipeline errors surface as a verdict, not a crash
        return Certificate(
            verdict=INCONCLUSIVE, horizon=scenario.config.tau, invariance=False,
            sets=None, diagnostics=f"pipeline error: {exc}",
        )
    collision = []
    bound_only = []
    for t in range(-seq.tau, 1):
        box = seq.sets[t]
        if box is EMPTY:
            continue
        if intersects(box, scenario.x_0):
            if seq.flags.get(t):
                bound_only.append(t)
            else:
                collision.append(t)
    if collision:
        verdict = POSSIBLE_COLLISION
    elif bound_only:
        verdict = INCONCLUSIVE
    else:
        verdict = CERTIFIED_SAFE
    return Certificate(
        verdict=verdict, horizon=seq.tau, invariance=seq.invariance, sets=seq,
        collision_steps=collision, bound_only_steps=bound_only, stats=stats,
    )


# --- benchmark scenarios ------------------------------------------------------

def build_policy(spec: dict) -> FeedforwardNetwork:
    """Construct a benchmark policy network from its family spec.

    Each family runs a rollout smoke test; a grid too coarse to preserve the
    intended avoid/reach behavior raises PolicyBuildError.
    """
    family = spec.get("family")
    if family == "double_integrator":
        net = bm.build_double_integrator_policy()
        sys_ = bm.double_integrator_system()
        bm._smoke_entry(sys_, net, Hyperrectangle([-3.0, -1.0], [3.0, 1.0]),
                        Hyperrectangle([-1.0, -1.0], [1.0, 1.0]), 8, 256, 0,
                        "double integrator regulator")
        return net
    if family == "ground_robot":
        exp_sign = float(spec.get("exp_sign", -2.0))
        faulty = bool(spec.get("faulty", False))
        px_nodes = np.asarray(spec.get("px_nodes", bm.ROBOT_PX_NODES), float)
        py_nodes = np.asarray(spec.get("py_nodes", bm.ROBOT_PY_NODES), float)
        net = bm.build_robot_policy(exp_sign=exp_sign, faulty=faulty,
                                    px_nodes=px_nodes, py_nodes=py_nodes)
        # the ridge interpolates the declared field exactly on its grid lines
        gx, gy = np.meshgrid(px_nodes, py_nodes, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
        bm._smoke_grid_match(net, pts, bm.robot_ridge_field(pts, exp_sign, faulty),
                             "robot policy grid")
        sys_ = bm.ground_robot_system()
        target = Hyperrectangle([-1.0, -1.0], [1.0, 1.0])
        if faulty:
            bm._smoke_entry(sys_, net, Hyperrectangle.from_center([-5.0, 1.0], [0.5, 0.5]),
                            target, 9, 512, 1, "faulty robot policy")
        else:
            bm._smoke_no_entry(sys_, net, Hyperrectangle.from_center([-5.0, 0.0], [0.5, 0.5]),
                               target, 9, 512, 1, "robot avoid policy")
        return net
    if family == "ground_robot_nonlinear":
        theta_param = spec.get("theta_param", "0_2pi")
        py_nodes = np.asarray(spec.get("py_nodes", bm.NL_ROBOT_PY_NODES), float)
        net = bm.build_nl_robot_policy(theta_param, py_nodes)
        px_ref = -3.0 if theta_param == "0_2pi" else -1.0
        v_t, th_t = bm.nl_robot_targets(theta_param, px_ref, py_nodes)
        pts = np.stack([np.full(py_nodes.shape, px_ref), py_nodes], axis=1)
        bm._smoke_grid_match(net, pts, np.stack([v_t, th_t], axis=1),
                             f"nonlinear robot policy ({theta_param})")
        model = bm.nl_robot_model(theta_param)
        target = Hyperrectangle([-1.0, -1.0], [1.0, 1.0])
        # the heading interpolant sweeps through the backward direction in a
        # band just below the axis; states there step straight into the target
        strip = (Hyperrectangle([1.05, -0.35], [1.45, -0.25]) if theta_param == "0_2pi"
                 else Hyperrectangle([-1.45, -0.35], [-1.05, -0.25]))
        bm._smoke_entry(model, net, strip, target, 1, 512, 2,
                        f"wraparound band ({theta_param})")
        return net
    if family == "quadrotor":
        net = bm.build_quadrotor_policy()
        sys_ = bm.quadrotor_system()
        x0 = Hyperrectangle.from_center([-5, 0, 2.5, 0.97, 0, 0],
                                        [0.25, 0.25, 0.25, 0.02, 0.01, 0.01])
        target = Hyperrectangle.from_center([0, 0, 2.5, 0, 0, 0], np.ones(6))
        bm._smoke_no_entry(sys_, net, x0, target, 6, 512, 3, "quadrotor avoid policy")
        return net
    raise ScenarioError(f"unknown policy family {family!r}")


def build_benchmark(name: str) -> Scenario:
    """Shipped benchmark scenarios with the published matrices and sets."""
    if name == "double_integrator":
        spec = {"family": "double_integrator"}
        return Scenario(
            name=name,
            system=bm.double_integrator_system(),
            policy=build_policy(spec),
            x_T=Hyperrectangle([-1.0, -1.0], [1.0, 1.0]),
            x_0=Hyperrectangle.from_center([-7.0, 0.5], [0.5, 0.5]),
            config=BpConfig(tau=5, partition=PartitionSpec.guided(16, v_m=0.3), mode="symbolic", seed=20),
            seed=20,
            policy_spec=spec,
        )
    if name in ("ground_robot_linear", "ground_robot_linear_faulty"):
        faulty = name.endswith("faulty")
        spec = {"family": "ground_robot", "faulty": faulty}
        center = [-5.0, 1.0] if faulty else [-5.0, 0.0]
        return Scenario(
            name=name,
            system=bm.ground_robot_system(),
            policy=build_policy(spec),
            x_T=Hyperrectangle([-1.0, -1.0], [1.0, 1.0]),
            x_0=Hyperrectangle.from_center(center, [0.5, 0.5]),
            config=BpConfig(tau=9, partition=PartitionSpec.guided(24, v_m=0.15), mode="symbolic", seed=21),
            seed=21,
            policy_spec=spec,
        )
    if name in ("ground_robot_nonlinear_0_2pi", "ground_robot_nonlinear_pm_pi"):
        theta_param = "0_2pi" if name.endswith("0_2pi") else "pm_pi"
        spec = {"family": "ground_robot_nonlinear", "theta_param": theta_param}
        return Scenario(
            name=name,
            system=bm.nl_robot_model(theta_param),
            policy=build_policy(spec),
            x_T=Hyperrectangle([-1.0, -1.0], [1.0, 1.0]),
            x_0=Hyperrectangle.from_center([-5.0, 1.0], [0.5, 0.5]),
            config=NlBpConfig(tau=3, epsilon=0.1, symbolic_period=1, seed=22),
            seed=22,
            policy_spec=spec,
        )
    if name == "quadrotor_6d":
        spec = {"family": "quadrotor"}
        return Scenario(
            name=name,
            system=bm.quadrotor_system(),
            policy=build_policy(spec),
            x_T=Hyperrectangle.from_center([0, 0, 2.5, 0, 0, 0], np.ones(6)),
            x_0=Hyperrectangle.from_center([-5, 0, 2.5, 0.97, 0, 0],
                                           [0.25, 0.25, 0.25, 0.02, 0.01, 0.01]),
            config=BpConfig(tau=6, partition=PartitionSpec.guided(256, v_m=0.5), mode="symbolic", seed=23),
            seed=23,
            policy_spec=spec,
        )
    raise ScenarioError(f"unknown benchmark {name!r}; choose from {bm.BENCHMARKS}")


# --- scenario JSON ------------------------------------------------------------

def _box_json(box):
    return box.to_json()


def _require(obj, key, where):
    if key not in obj:
        raise ScenarioError(f"{where}: missing required key {key!r}")
    return obj[key]


def scenario_to_json(s: Scenario) -> dict:
    if s.is_linear:
        system = {
            "type": "linear",
            "A": s.system.A.tolist(), "B": s.system.B.tolist(), "c": s.system.c.tolist(),
            "U": _box_json(s.system.U), "X": _box_json(s.system.X),
        }
        cfg = s.config
        part = ({"kind": "uniform", "r": list(cfg.partition.r_vec)}
                if cfg.partition.kind == "uniform"
                else {"kind": "guided", "r": cfg.partition.r, "v_m": cfg.partition.v_m})
        config = {
            "pipeline": "linear", "tau": cfg.tau, "mode": cfg.mode,
            "partition": part, "skip_lp": cfg.skip_lp, "n_samples": cfg.n_samples,
        }
    else:
        system = {
            "type": "nonlinear",
            "name": s.system.name,
            "dynamics": [expr_to_json(e) for e in s.system.exprs],
            "U": _box_json(s.system.U), "X": _box_json(s.system.X),
            "clip_to_x": s.system.clip_to_x,
        }
        cfg = s.config
        config = {
            "pipeline": "nonlinear", "tau": cfg.tau, "epsilon": cfg.epsilon,
            "symbolic_period": cfg.symbolic_period, "gap_tol": cfg.gap_tol,
            "node_limit": cfg.node_limit,
        }
    policy = {"builder": s.policy_spec} if s.policy_spec else {"weights": network_to_json(s.policy)}
    return {
        "schema_version": SCHEMA_VERSION,
        "name": s.name,
        "seed": s.seed,
        "system": system,
        "policy": policy,
        "x_T": _box_json(s.x_T),
        "x_0": _box_json(s.x_0),
        "config": config,
    }


def scenario_from_json(obj: dict, base_dir=None) -> Scenario:
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise ScenarioError(
            f"schema_version: expected {SCHEMA_VERSION}, got {obj.get('schema_version')!r}"
        )
    name = obj.get("name", "scenario")
    seed = int(_require(obj, "seed", "scenario"))
    sy = _require(obj, "system", "scenario")
    sy_type = _require(sy, "type", "system")
    try:
        U = Hyperrectangle.from_json(_require(sy, "U", "system"))
        X = Hyperrectangle.from_json(_require(sy, "X", "system"))
        if sy_type == "linear":
            system = LinearSystem(A=sy["A"], B=sy["B"], c=sy["c"], U=U, X=X)
        elif sy_type == "nonlinear":
            exprs = tuple(expr_from_json(e) for e in _require(sy, "dynamics", "system"))
            system = NonlinearModel(sy.get("name", name), exprs, U, X,
                                    clip_to_x=bool(sy.get("clip_to_x", True)))
        else:
            raise ScenarioError(f"system.type: unknown {sy_type!r}")
    except (KeyError, ValueError, TypeError) as exc:
        raise ScenarioError(f"system: {exc}") from exc

    pol = _require(obj, "policy", "scenario")
    if isinstance(pol, str):
        import os
        path = pol if base_dir is None else os.path.join(base_dir, pol)
        policy = load_network(path)
        policy_spec = None
    elif "builder" in pol:
        policy = build_policy(pol["builder"])
        policy_spec = pol["builder"]
    elif "weights" in pol:
        policy = network_from_json(pol["weights"])
        policy_spec = None
    else:
        raise ScenarioError("policy: expected a path string, a builder spec, or inline weights")
    if policy.input_dim != system.n_x:
        raise ScenarioError(f"policy: input dim {policy.input_dim} != state dim {system.n_x}")
    if policy.output_dim != system.n_u:
        raise ScenarioError(f"policy: output dim {policy.output_dim} != control dim {system.n_u}")

    cfg_obj = _require(obj, "config", "scenario")
    pipeline = _require(cfg_obj, "pipeline", "config")
    try:
        if pipeline == "linear":
            part = _require(cfg_obj, "partition", "config")
            if part.get("kind") == "uniform":
                pspec = PartitionSpec.uniform(part["r"])
            elif part.get("kind") == "guided":
                pspec = PartitionSpec.guided(int(part["r"]), float(part.get("v_m", 1e-4)))
            else:
                raise ScenarioError(f"config.partition.kind: unknown {part.get('kind')!r}")
            config = BpConfig(
                tau=int(_require(cfg_obj, "tau", "config")),
                partition=pspec,
                mode=cfg_obj.get("mode", "symbolic"),
                skip_lp=bool(cfg_obj.get("skip_lp", True)),
                seed=seed,
                n_samples=int(cfg_obj.get("n_samples", 10_000)),
            )
        elif pipeline == "nonlinear":
            config = NlBpConfig(
                tau=int(_require(cfg_obj, "tau", "config")),
                epsilon=float(cfg_obj.get("epsilon", 0.1)),
                symbolic_period=int(cfg_obj.get("symbolic_period", 1)),
                gap_tol=float(cfg_obj.get("gap_tol", 1e-6)),
                node_limit=int(cfg_obj.get("node_limit", 10**6)),
                seed=seed,
            )
            if not isinstance(system, NonlinearModel):
                raise ScenarioError("config.pipeline: nonlinear pipeline needs a nonlinear system")
        else:
            raise ScenarioError(f"config.pipeline: unknown {pipeline!r}")
    except (KeyError, ValueError, TypeError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"config: {exc}") from exc

    try:
        x_T = Hyperrectangle.from_json(_require(obj, "x_T", "scenario"))
        x_0 = Hyperrectangle.from_json(_require(obj, "x_0", "scenario"))
    except (KeyError, ValueError) as exc:
        raise ScenarioError(f"sets: {exc}") from exc
    return Scenario(name=name, system=system, policy=policy, x_T=x_T, x_0=x_0,
                    config=config, seed=seed, policy_spec=policy_spec)


def load_scenario(path) -> Scenario:
    import os
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return scenario_from_json(obj, base_dir=os.path.dirname(os.path.abspath(path)))
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def save_scenario(s: Scenario, path) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_json(s), fh, indent=2)
