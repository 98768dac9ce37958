"""Experiment dispatch, energy CDFs and CSV output."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import baselines, engine
from .config import ExperimentConfig, validate
from .planner import PlanningInstance, RoundPlan, plan_with_fallback

METRICS_FILE = "metrics.csv"
CDF_FILE = "energy_cdf.csv"
TOPM_FILE = "topm_summary.csv"
PLANS_FILE = "plans.csv"


def rawhfl_planner(cfg: ExperimentConfig) -> Callable[[PlanningInstance], RoundPlan]:
    p = cfg.planner

    def plan(inst: PlanningInstance) -> RoundPlan:
        return plan_with_fallback(inst, max_iter=p.max_iter, tol=p.tol)

    return plan


def planner_for(cfg: ExperimentConfig) -> tuple[Callable[[PlanningInstance], RoundPlan], bool]:
    """Planning function of the configured algorithm and whether it enforces constraints."""
    algo = cfg.algorithm
    if algo == "rawhfl":
        return rawhfl_planner(cfg), True
    if algo == "hfedavg_m1":
        return baselines.hfedavg_m1_plan, True
    if algo == "hfedavg_m2":
        return baselines.hfedavg_m2_plan, True
    if algo == "hfedavg_ub":
        return baselines.hfedavg_ub_plan, False
    raise ValueError(f"algorithm {algo!r} has no planner")


@dataclass
class ExperimentResult:
    algorithm: str
    metrics: list[dict]
    edge_energy: list[dict] = field(default_factory=list)
    client_energy: list[dict] = field(default_factory=list)
    plans: list[dict] = field(default_factory=list)
    violations: int = 0

    @property
    def final(self) -> dict:
        return self.metrics[-1]

    @property
    def total_energy(self) -> float:
        return float(self.metrics[-1]["energy_cum"]) if self.metrics else 0.0

    def curve(self, key: str = "top1_mean") -> np.ndarray:
        return np.array([row[key] for row in self.metrics], dtype=float)

    def edge_energies(self) -> np.ndarray:
        return np.array([row["energy"] for row in self.edge_energy], dtype=float)


def _top_popular(cfg: ExperimentConfig) -> ExperimentResult:
    pop = engine.build_population(cfg)
    accs = {m: [baselines.top_popular_accuracy(pop.catalog, c.test_y, m) for c in pop.clients]
            for m in engine.TOP_M}
    metrics = []
    for k in range(cfg.learning.global_rounds):
        row = {"k": k, "test_loss": math.nan}
        for m in engine.TOP_M:
            row[f"top{m}_mean"] = float(np.mean(accs[m]))
            row[f"top{m}_std"] = float(np.std(accs[m]))
        row["energy_round"] = 0.0
        row["energy_cum"] = 0.0
        for b in range(cfg.topology.num_bs):
            row[f"energy_bs{b}"] = 0.0
        metrics.append(row)
    edge = [{"k": k, "e": e, "energy": 0.0}
            for k in range(cfg.learning.global_rounds) for e in range(cfg.learning.edge_rounds)]
    return ExperimentResult("top_popular", metrics, edge)


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    validate(cfg)
    if cfg.algorithm == "top_popular":
        return _top_popular(cfg)
    plan_fn, enforce = planner_for(cfg)
    res = engine.run_hfl(cfg, plan_fn, enforce_constraints=enforce)
    return ExperimentResult(cfg.algorithm, res.metrics, res.edge_energy, res.client_energy,
                            res.plans, res.violations)


def energy_cdf(energies: Sequence[float]) -> list[tuple[float, float]]:
    """Empirical CDF as (x, F(x)) at each distinct value."""
    x = np.sort(np.asarray(energies, dtype=float))
    if x.size == 0:
        return []
    values, counts = np.unique(x, return_counts=True)
    cum = np.cumsum(counts) / x.size
    return [(float(v), float(c)) for v, c in zip(values, cum)]


def cdf_quantiles(energies: Sequence[float], qs: Sequence[float]) -> np.ndarray:
    """Lower empirical quantiles: the smallest x with F(x) >= q."""
    x = np.sort(np.asarray(energies, dtype=float))
    idx = np.ceil(np.asarray(qs) * x.size).astype(int) - 1
    return x[np.clip(idx, 0, x.size - 1)]


def plateau_round(curve: Sequence[float], tol: float = 0.02) -> int:
    """First round from which the curve stays within ``tol`` of its final value."""
    c = np.asarray(curve, dtype=float)
    final = c[-1]
    outside = np.flatnonzero(np.abs(c - final) > tol)
    return 0 if outside.size == 0 else int(outside[-1] + 1)


def _write_csv(path: Path, rows: list[dict], header: Optional[list[str]] = None) -> None:
    header = header or (list(rows[0].keys()) if rows else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in header})


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer, np.bool_)):
        return int(v)
    return v


def write_outputs(result: ExperimentResult, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in (METRICS_FILE, CDF_FILE, TOPM_FILE, PLANS_FILE)}
    _write_csv(paths[METRICS_FILE], result.metrics)
    cdf = energy_cdf(result.edge_energies())
    _write_csv(paths[CDF_FILE], [{"energy_j": x, "cdf": f} for x, f in cdf],
               ["energy_j", "cdf"])
    final = result.final
    summary = [{"algorithm": result.algorithm, "M": m, "mean": final[f"top{m}_mean"],
                "std": final[f"top{m}_std"], "total_energy_j": result.total_energy}
               for m in engine.TOP_M]
    _write_csv(paths[TOPM_FILE], summary)
    plan_header = ["k", "e", "bs", "user", "selected", "rounds", "freq_hz",
                   "t_cp", "t_up", "e_cp", "e_up"]
    _write_csv(paths[PLANS_FILE], result.plans, plan_header)
    return paths


def run(cfg: ExperimentConfig, out_dir) -> dict[str, Path]:
    return write_outputs(run_experiment(cfg), out_dir)
