"""Command line front end: design, gamma, simulate, verify.

Exit codes: 0 success, 1 infeasible design or failed check, 2 usage/schema error.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import lmi, scenario as scen, sim
from .lmi import DesignInfeasibleError, LmiContext
from .scenario import ConfigError, TOOL_VERSION, config_hash


def _load(config_path):
    cfg = scen.load_config(config_path)
    plant = scen.build_plant(cfg)
    underlying = scen.build_graph(cfg)
    return cfg, plant, underlying


def cmd_design(args) -> int:
    try:
        cfg, plant, underlying = _load(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    gains = scen.build_gains(cfg, plant, underlying)
    gamma_mode = args.gamma_mode or cfg["design"]["gamma_mode"]
    t0 = time.time()
    try:
        design = lmi.solve_design(
            plant, gains, underlying,
            weights=cfg["design"]["weights"],
            alpha_grid=cfg["design"]["alpha_grid"],
            gamma_mode=gamma_mode,
            config_cap=cfg["design"]["config_cap"],
        )
    except DesignInfeasibleError as exc:
        print(f"design infeasible:\n{exc}", file=sys.stderr)
        return 1
    data = lmi.design_to_dict(design, gains, config_hash(cfg))
    data["resolved_config"] = cfg
    data["wall_time_s"] = time.time() - t0
    out = args.out or "design.json"
    with open(out, "w") as fh:
        json.dump(data, fh, indent=1)
    print(f"design written to {out} in {data['wall_time_s']:.1f}s "
          f"(gamma_full={design.gamma_full:.4f}, "
          f"gamma_zero={design.table.gamma_zero:.4f}, "
          f"dominance={'ok' if design.dominance['holds'] else 'FAILED'})")
    return 0 if design.dominance["holds"] or gamma_mode == "worst_case" else 1


def cmd_gamma(args) -> int:
    try:
        cfg, plant, underlying = _load(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    data = lmi.load_design(args.design)
    if data["config_hash"] != config_hash(cfg):
        print("design/config hash mismatch: refusing", file=sys.stderr)
        return 1
    ctx, _, _, p_bar, _ = lmi.design_from_file(data, plant, underlying)
    mode = args.gamma_mode or data["gamma_table"]["mode"]
    table = lmi.gamma_table(ctx, p_bar, cfg["design"]["alpha_grid"], mode=mode,
                            cap=cfg["design"]["config_cap"])
    rows = []
    for _, (cfg_entry, gamma) in sorted(table.entries.items()):
        rows.append({"members": sorted(cfg_entry.connected_set), "gamma": gamma})
        print(f"  gamma{sorted(cfg_entry.connected_set)} = {gamma:.4f}")
    print(f"  worst_case = {table.worst_case:.4f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"tool": "etconnect", "version": TOOL_VERSION,
                       "config_hash": data["config_hash"], "mode": mode,
                       "worst_case": table.worst_case, "entries": rows}, fh, indent=1)
    return 0


def cmd_simulate(args) -> int:
    try:
        cfg, plant, underlying = _load(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    data = lmi.load_design(args.design)
    if data["config_hash"] != config_hash(cfg):
        print("design/config hash mismatch: refusing to simulate", file=sys.stderr)
        return 1
    gains = lmi.gains_from_design(data)
    table = lmi.table_from_design(data, underlying)
    scenario = scen.build_scenario(cfg, plant, gains, underlying, data, table)
    if args.seed is not None:
        scenario.seed = args.seed
    outdir = args.out or "."
    os.makedirs(outdir, exist_ok=True)

    summaries = []
    for trial in range(args.trials):
        result = sim.run(scenario, always_connected=args.always_connected,
                         seed=scenario.seed + trial, keep_trace=(trial == 0))
        summaries.append(result.summary)
        if trial == 0:
            sim.write_trace_csv(result, os.path.join(outdir, "trace_trial0.csv"))
            sim.write_events_csv(result, os.path.join(outdir, "events_trial0.csv"))
    import csv as _csv
    with open(os.path.join(outdir, "trials.csv"), "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["trial", "seed", "convergence_time_s",
                         "disconnect_fraction_mean", "n_events",
                         "invariance_violations"])
        for k, s in enumerate(summaries):
            writer.writerow([k, scenario.seed + k, s["convergence_time_s"],
                             s["disconnect_fraction_mean"], s["n_events"],
                             s["invariance_violations"]])
    conv = [s["convergence_time_s"] for s in summaries
            if s["convergence_time_s"] is not None]
    aggregate = {
        "tool": "etconnect",
        "version": TOOL_VERSION,
        "config_hash": data["config_hash"],
        "seed": scenario.seed,
        "trials": args.trials,
        "always_connected": bool(args.always_connected),
        "mean_convergence_time_s": float(np.mean(conv)) if conv else None,
        "disconnect_fraction_mean": float(np.mean(
            [s["disconnect_fraction_mean"] for s in summaries])),
        "disconnect_fraction_per_agent": np.mean(
            [s["disconnect_fraction_per_agent"] for s in summaries], axis=0).tolist(),
        "connected_steps_per_agent": np.mean(
            [s["connected_steps_per_agent"] for s in summaries], axis=0).tolist(),
        "n_events": float(np.mean([s["n_events"] for s in summaries])),
        "invariance_violations": int(sum(s["invariance_violations"]
                                         for s in summaries)),
        "resolved_config": cfg,
    }
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(aggregate, fh, indent=1)
    print(json.dumps({k: v for k, v in aggregate.items()
                      if k not in ("resolved_config",)}, indent=1))
    return 0


def cmd_verify(args) -> int:
    try:
        cfg, plant, underlying = _load(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    data = lmi.load_design(args.design)
    ok_hash = data["config_hash"] == config_hash(cfg)
    checks = [("provenance:config_hash", ok_hash,
               "design file matches this configuration")]
    checks += lmi.verify_design(data, plant, underlying)
    failed = [c for c in checks if not c[1]]
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return 0 if not failed else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="etconnect",
        description="Design and simulate decentralized event-triggered "
                    "network connection for multi-agent LTI control.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_design = sub.add_parser("design", help="solve the certificate design problem")
    p_design.add_argument("config")
    p_design.add_argument("--out", default=None)
    p_design.add_argument("--gamma-mode", choices=["enumerate", "worst_case"],
                          default=None)
    p_design.set_defaults(fn=cmd_design)

    p_gamma = sub.add_parser("gamma", help="recompute the per-configuration rate table")
    p_gamma.add_argument("config")
    p_gamma.add_argument("design")
    p_gamma.add_argument("--gamma-mode", choices=["enumerate", "worst_case"],
                         default=None)
    p_gamma.add_argument("--out", default=None)
    p_gamma.set_defaults(fn=cmd_gamma)

    p_sim = sub.add_parser("simulate", help="run closed-loop trials")
    p_sim.add_argument("config")
    p_sim.add_argument("design")
    p_sim.add_argument("--trials", type=int, default=1)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--always-connected", action="store_true")
    p_sim.add_argument("--out", default=None)
    p_sim.set_defaults(fn=cmd_simulate)

    p_verify = sub.add_parser("verify", help="re-check every certificate in a design file")
    p_verify.add_argument("design")
    p_verify.add_argument("config")
    p_verify.set_defaults(fn=cmd_verify)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
