"""Reference schemes: fixed-round hierarchical FedAvg variants and Top-Popular."""

from __future__ import annotations

import math

import numpy as np

from .content import ContentCatalog
from .planner import PlanningInstance, RoundPlan, empty_plan, make_plan


def max_feasible_freq(inst: PlanningInstance, u: int, rounds: int) -> float | None:
    """Highest frequency at which ``rounds`` rounds meet both deadline and budget."""
    lo = inst.min_feasible_freq(u, rounds)
    if lo is None:
        return None
    spare = inst.e_bd[u] - inst.e_up[u]
    f = min(inst.f_max[u], math.sqrt(spare / (rounds * 0.5 * inst.zeta_cap * inst.cycles[u])))
    while f > lo and not inst.feasible(u, rounds, f):
        f = float(np.nextafter(f, 0.0))
    return max(f, lo)


def per_client_max_rounds(inst: PlanningInstance) -> np.ndarray:
    return np.array([inst.max_feasible_rounds(u) for u in range(inst.n)], dtype=int)


def _common_rounds_plan(inst: PlanningInstance, members: np.ndarray,
                        max_rounds: np.ndarray) -> RoundPlan:
    common = int(max_rounds[members].min())
    selected = np.zeros(inst.n, dtype=bool)
    selected[members] = True
    rounds = np.where(selected, common, 0)
    freq = np.zeros(inst.n)
    for u in members:
        freq[u] = max_feasible_freq(inst, int(u), common)
    return make_plan(inst, selected, rounds, freq)


def hfedavg_m1_plan(inst: PlanningInstance) -> RoundPlan:
    """Every client, one common L: the smallest per-client maximum.

    A single client unable to run even one round makes the BS skip the round.
    """
    lmax = per_client_max_rounds(inst)
    if lmax.min() == 0:
        return empty_plan(inst, feasible=False)
    return _common_rounds_plan(inst, np.arange(inst.n), lmax)


def hfedavg_m2_plan(inst: PlanningInstance) -> RoundPlan:
    """As M1, but clients unable to run one round are dropped first."""
    lmax = per_client_max_rounds(inst)
    keep = np.flatnonzero(lmax > 0)
    if keep.size == 0:
        return empty_plan(inst, feasible=False)
    return _common_rounds_plan(inst, keep, lmax)


def hfedavg_ub_plan(inst: PlanningInstance) -> RoundPlan:
    """Every client runs L rounds at f_max; deadlines and budgets are ignored."""
    selected = np.ones(inst.n, dtype=bool)
    rounds = np.full(inst.n, inst.max_rounds)
    return make_plan(inst, selected, rounds, inst.f_max.copy())


def top_popular_predict(catalog: ContentCatalog, m: int) -> np.ndarray:
    if m < 1:
        raise ValueError(f"M must be >= 1, got {m}")
    return catalog.global_rank[:min(m, catalog.total)].copy()


def top_popular_accuracy(catalog: ContentCatalog, labels: np.ndarray, m: int) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty label set")
    return float(np.isin(labels, top_popular_predict(catalog, m)).mean())
