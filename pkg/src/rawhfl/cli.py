"""Command line entry point: ``rawhfl {run,solve,oracle,bound}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from typing import Optional, Sequence

import numpy as np

from . import bounds
from .config import (ALGORITHMS, ConfigError, ExperimentConfig, desk_profile, load_config,
                     full_profile)
from .experiment import run
from .planner import (brute_force_oracle, load_instance, plan_rows, random_instance,
                      sca_solve)


def _config(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    elif getattr(args, "profile", "desk") == "full":
        cfg = full_profile()
    else:
        cfg = desk_profile()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "algorithm", None):
        overrides["algorithm"] = args.algorithm
    return cfg.replace(**overrides) if overrides else cfg


def cmd_run(args) -> int:
    cfg = _config(args)
    paths = run(cfg, args.out)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    plan = sca_solve(inst)
    rows = list(plan_rows(plan, inst, 0, 0, 0))
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0].keys()), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    print(f"# objective={plan.objective!r} feasible={plan.feasible} "
          f"iterations={plan.iterations}", file=sys.stderr)
    return 0 if plan.feasible else 2


def cmd_oracle(args) -> int:
    within = 0
    for s in range(args.seed, args.seed + args.instances):
        inst = random_instance(s, n_clients=args.clients, Z=args.Z, max_rounds=args.L)
        plan = sca_solve(inst)
        best, _ = brute_force_oracle(inst, args.grid)
        gap = (plan.objective - best) / abs(best) if np.isfinite(best) and best else 0.0
        ok = gap <= args.tolerance
        within += ok
        print(f"seed={s} sca={plan.objective:.6g} oracle={best:.6g} gap={gap:.4%}")
    print(f"{within}/{args.instances} within {args.tolerance:.0%}")
    return 0


def cmd_bound(args) -> int:
    cfg = _config(args)
    lc = cfg.learning
    summaries = []
    noise = None
    with open(args.metrics, encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            noise = (float(row["sigma_sq"]), float(row["eps0_sq"]), float(row["eps1_sq"]))
            if float(row["omega"]) <= 0:
                continue
            summaries.append(bounds.RoundSummary(
                float(row["omega"]), float(row["alpha_sq"]), float(row["alpha_b_alpha_u_sq"]),
                float(row["wireless_lin"]), float(row["wireless_sq"]), float(row["loss_delta"])))
    if not summaries:
        print("no training rounds in metrics file", file=sys.stderr)
        return 2
    beta = args.smoothness if args.smoothness is not None else cfg.bound.smoothness
    params = bounds.BoundParams(beta, lc.lr, lc.edge_rounds, lc.local_rounds, *noise, summaries)
    ok, margin = bounds.check_step_size(lc.lr, beta, lc.edge_rounds, lc.local_rounds)
    fn = bounds.evaluate_bound_full_rounds if args.full_rounds else bounds.evaluate_bound
    total, terms = fn(params)
    print(f"step_size_ok={ok} margin={margin:.6g}")
    for name, v in zip(bounds.TERM_NAMES, terms):
        print(f"{name}={v!r}")
    print(f"total={total!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rawhfl")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add_cfg(sp):
        sp.add_argument("--config", help="YAML experiment file")
        sp.add_argument("--profile", choices=("desk", "full"), default="desk",
                        help="built-in defaults when no --config is given")
        sp.add_argument("--seed", type=int)

    r = sub.add_parser("run", help="run one experiment and write CSV outputs")
    add_cfg(r)
    r.add_argument("--algorithm", choices=ALGORITHMS)
    r.add_argument("--out", default="out")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("solve", help="plan a single instance stored as JSON")
    s.add_argument("instance")
    s.set_defaults(func=cmd_solve)

    o = sub.add_parser("oracle", help="compare the planner against exhaustive search")
    o.add_argument("--instances", type=int, default=50)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--clients", type=int, default=4)
    o.add_argument("--Z", type=int, default=2)
    o.add_argument("--L", type=int, default=3)
    o.add_argument("--grid", type=int, default=8)
    o.add_argument("--tolerance", type=float, default=0.05)
    o.set_defaults(func=cmd_oracle)

    b = sub.add_parser("bound", help="evaluate the convergence bound from a metrics file")
    add_cfg(b)
    b.add_argument("metrics")
    b.add_argument("--smoothness", type=float)
    b.add_argument("--full-rounds", action="store_true",
                   help="closed form assuming every client ran all L local rounds")
    b.set_defaults(func=cmd_bound)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
