"""Command-line interface.

Exit codes: 0 = CertifiedSafe, 2 = PossibleCollision, 3 = Inconclusive,
1 = error (bad config, unknown benchmark, IO failure).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time

import numpy as np

from . import oracle as orc
from .benchmarks import BENCHMARKS
from .breach_linear import PartitionSpec
from .certify import (
    EXIT_CODES,
    Scenario,
    ScenarioError,
    build_benchmark,
    build_policy,
    certify,
    load_scenario,
    run_pipeline,
    save_scenario,
    scenario_to_json,
)
from .geom import EMPTY, Hyperrectangle, TimedSetSequence
from .network import save_network
from .partition import estimate_bp_set


def _load(path_or_name: str) -> Scenario:
    if path_or_name in BENCHMARKS:
        return build_benchmark(path_or_name)
    return load_scenario(path_or_name)


def _apply_seed(scenario: Scenario, seed):
    if seed is None:
        return scenario
    scenario.seed = int(seed)
    scenario.config.seed = int(seed)
    return scenario


def cmd_certify(args) -> int:
    scenario = _apply_seed(_load(args.scenario), args.seed)
    cert = certify(scenario)
    print(f"scenario: {scenario.name}")
    print(f"verdict: {cert.verdict}")
    print(f"horizon: {cert.horizon}   invariance: {cert.invariance}")
    if cert.collision_steps:
        print(f"intersecting steps: {cert.collision_steps}")
    if cert.bound_only_steps:
        print(f"bound-only steps touching X_0: {cert.bound_only_steps}")
    if cert.diagnostics:
        print(f"diagnostics: {cert.diagnostics}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(cert.to_json(), fh, indent=2)
        print(f"wrote {args.out}")
    return cert.exit_code


def cmd_bp(args) -> int:
    scenario = _apply_seed(_load(args.scenario), args.seed)
    seq, stats = run_pipeline(scenario)
    obj = seq.to_json()
    obj["x_T"] = scenario.x_T.to_json()
    obj["x_0"] = scenario.x_0.to_json()
    obj["stats"] = dict(vars(stats))
    with open(args.out, "w") as fh:
        json.dump(obj, fh, indent=2)
    for t in range(-seq.tau, 1):
        print(f"t={t:3d}: {seq.sets[t]}")
    print(f"wrote {args.out} (lp={stats.lp_bp_solved}, skipped={stats.lp_bp_skipped}, "
          f"milp={stats.milp_solved}, {stats.wall_ms:.0f} ms)")
    return 0


def cmd_render(args) -> int:
    from .render import render_sets

    with open(args.sets) as fh:
        obj = json.load(fh)
    seq = TimedSetSequence.from_json(obj)
    x_T = Hyperrectangle.from_json(obj["x_T"]) if "x_T" in obj else None
    x_0 = Hyperrectangle.from_json(obj["x_0"]) if "x_0" in obj else None
    axes = tuple(int(a) for a in args.axes.split(","))
    if len(axes) != 2:
        raise ScenarioError("--axes needs two comma-separated indices")
    render_sets(seq, args.out, x_T=x_T, x_0=x_0, axes=axes, title=args.title)
    print(f"wrote {args.out}")
    return 0


def cmd_oracle(args) -> int:
    scenario = _apply_seed(_load(args.scenario), args.seed)
    seq, _ = run_pipeline(scenario)
    rows = []
    all_samples = []
    for t in range(-seq.tau, 0):
        box = seq.sets[t]
        if box is EMPTY:
            rows.append({"t": t, "reaching": 0, "error": ""})
            continue
        domain = Hyperrectangle(box.lo - 0.1 * (box.hi - box.lo + 1e-9),
                                box.hi + 0.1 * (box.hi - box.lo + 1e-9))
        hull, pts = orc.true_bp_hull(scenario.system, scenario.policy, scenario.x_T,
                                     t, domain, args.samples, scenario.seed)
        err = "" if hull is EMPTY else f"{orc.approx_error(box, hull):.6f}"
        rows.append({"t": t, "reaching": int(pts.shape[0]), "error": err})
        for p in pts:
            all_samples.append([t] + p.tolist())
        print(f"t={t:3d}: reaching={pts.shape[0]:6d} error={err}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i}" for i in range(scenario.system.n_x)])
            w.writerows(all_samples)
        print(f"wrote {args.out}")
    return 0


def cmd_sweep(args) -> int:
    from .render import render_sweep

    scenario = _apply_seed(_load(args.scenario), args.seed)
    rows = []
    if args.partitions:
        values = [int(v) for v in args.partitions.split(",")]
        for r in values:
            scenario.config.partition = PartitionSpec.guided(r)
            t0 = time.perf_counter()
            seq, stats = run_pipeline(scenario)
            wall = (time.perf_counter() - t0) * 1e3
            err = _final_error(scenario, seq)
            rows.append({"r": r, "error": err, "lp_count": stats.lp_bp_solved,
                         "wall_ms": round(wall, 3)})
            print(f"r={r:5d} error={err} lp={stats.lp_bp_solved} wall_ms={wall:.0f}")
        fields = ["r", "error", "lp_count", "wall_ms"]
        x_key = "r"
    elif args.period:
        values = [int(v) for v in args.period.split(",")]
        for p in values:
            scenario.config.symbolic_period = p
            t0 = time.perf_counter()
            seq, stats = run_pipeline(scenario)
            wall = (time.perf_counter() - t0) * 1e3
            err = _final_error(scenario, seq)
            rows.append({"period": p, "error": err, "milp_count": stats.milp_solved,
                         "wall_ms": round(wall, 3)})
            print(f"period={p:3d} error={err} milp={stats.milp_solved} wall_ms={wall:.0f}")
        fields = ["period", "error", "milp_count", "wall_ms"]
        x_key = "period"
    else:
        raise ScenarioError("sweep needs --partitions or --period")
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {args.out}")
    fig_path = args.fig or (args.out.rsplit(".", 1)[0] + ".svg")
    plot_rows = [r for r in rows if isinstance(r["error"], float)]
    if plot_rows:
        render_sweep(plot_rows, x_key, "error", fig_path,
                     title=f"{scenario.name}: final-step error", logy=True)
        print(f"wrote {fig_path}")
    return 0


def _final_error(scenario, seq) -> float | str:
    t = -seq.tau
    box = seq.sets[t]
    if box is EMPTY:
        return ""
    domain = Hyperrectangle(box.lo - 0.1 * (box.hi - box.lo + 1e-9),
                            box.hi + 0.1 * (box.hi - box.lo + 1e-9))
    hull, _ = orc.true_bp_hull(scenario.system, scenario.policy, scenario.x_T,
                               t, domain, 100_000, scenario.seed)
    if hull is EMPTY:
        return ""
    return round(orc.approx_error(box, hull), 6)


def cmd_policy_build(args) -> int:
    with open(args.spec) as fh:
        spec = json.load(fh)
    net = build_policy(spec)
    save_network(net, args.out)
    print(f"wrote {args.out} ({net.hidden_neurons} hidden neurons, "
          f"{len(net.layers)} layers)")
    return 0


def cmd_scenario(args) -> int:
    scenario = build_benchmark(args.name)
    save_scenario(scenario, args.out)
    print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="backreach",
        description="Backward reachability safety certification for "
                    "neural-network feedback loops",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", help="compute BP sets and a safety verdict")
    p.add_argument("scenario", help="scenario.json path or a benchmark name")
    p.add_argument("--out", help="write the certificate as JSON")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.set_defaults(fn=cmd_certify)

    p = sub.add_parser("bp", help="compute BP over-approximations only")
    p.add_argument("scenario")
    p.add_argument("--out", required=True, help="sets.json output path")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_bp)

    p = sub.add_parser("render", help="draw a sets.json file")
    p.add_argument("sets")
    p.add_argument("--out", required=True, help="figure path (.svg/.png/.pdf)")
    p.add_argument("--axes", default="0,1", help="coordinate pair, e.g. 0,1")
    p.add_argument("--title")
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("oracle", help="Monte-Carlo hulls and error metrics")
    p.add_argument("scenario")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--out", help="CSV of reaching samples")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("sweep", help="partition or period sweeps with CSV+figure report")
    p.add_argument("scenario")
    p.add_argument("--partitions", help="comma-separated guided budgets, e.g. 1,4,16,64")
    p.add_argument("--period", help="comma-separated symbolic periods (nonlinear)")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--fig", help="figure path (defaults next to the CSV)")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("policy", help="policy utilities")
    psub = p.add_subparsers(dest="policy_command", required=True)
    pb = psub.add_parser("build", help="build a policy network from a spec")
    pb.add_argument("spec", help="policy spec JSON")
    pb.add_argument("--out", required=True, help="weight file output path")
    pb.set_defaults(fn=cmd_policy_build)

    p = sub.add_parser("scenario", help="write a shipped benchmark scenario file")
    p.add_argument("name", choices=list(BENCHMARKS))
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_scenario)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
