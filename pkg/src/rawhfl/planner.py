"""Per-edge-round client selection, local-round and CPU-frequency planning.

The mixed-integer problem is relaxed (continuous selection indicators with a
concave exact penalty, an auxiliary ``Lbar = 1_sl * L_u``) and the nonconvex
computation time/energy terms are linearized around the previous iterate, so
each successive step is a linear program. The relaxed solution is then turned
into a binary plan and every selected client's (L_u, f_u) is refit against the
exact cost model.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .lp import LinearProgram, LPResult, solve_lp

log = logging.getLogger(__name__)

GHZ = 1e9
F_FLOOR = 1e-4  # lowest LP frequency, as a fraction of f_max
BINARY_TOL = 0.01


@dataclass
class PlanningInstance:
    """Candidates of one BS for one edge round (channels already realized)."""

    e_up: np.ndarray
    t_up: np.ndarray
    cycles: np.ndarray          # n * n_bar * c_u * D_u per local round
    f_max: np.ndarray
    e_bd: np.ndarray
    t_th: np.ndarray
    Z: int
    max_rounds: int
    alpha_u: Optional[np.ndarray] = None
    alpha_b: float = 1.0
    zeta_cap: float = 2e-28
    theta: float = 0.4
    rho: float = 1.0
    user_ids: Optional[list[int]] = None

    def __post_init__(self):
        n = len(self.e_up)
        for name in ("e_up", "t_up", "cycles", "f_max", "e_bd", "t_th"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (n,)).copy()
            setattr(self, name, arr)
        if self.alpha_u is None:
            self.alpha_u = np.full(n, 1.0 / max(self.Z, 1))
        else:
            self.alpha_u = np.broadcast_to(np.asarray(self.alpha_u, dtype=float), (n,)).copy()
        if self.user_ids is None:
            self.user_ids = list(range(n))
        if not 0 <= self.Z <= n:
            raise ValueError(f"Z={self.Z} must lie in [0, {n}]")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")

    @property
    def n(self) -> int:
        return self.e_up.size

    @property
    def weight(self) -> np.ndarray:
        return self.alpha_b * self.alpha_u

    def compute_time(self, u: int, rounds: float, f: float) -> float:
        return rounds * self.cycles[u] / f

    def compute_energy(self, u: int, rounds: float, f: float) -> float:
        return rounds * 0.5 * self.zeta_cap * self.cycles[u] * f * f

    def feasible(self, u: int, rounds: int, f: float) -> bool:
        """Exact C3-C6 check for one selected client."""
        if not (1 <= rounds <= self.max_rounds and 0.0 < f <= self.f_max[u]):
            return False
        t = self.compute_time(u, rounds, f) + self.t_up[u]
        e = self.compute_energy(u, rounds, f) + self.e_up[u]
        return t <= self.t_th[u] and e <= self.e_bd[u]

    def min_feasible_freq(self, u: int, rounds: int) -> Optional[float]:
        """Smallest f meeting the deadline with ``rounds`` rounds, if C4/C6 allow it."""
        slack = self.t_th[u] - self.t_up[u]
        if slack <= 0.0:
            return None
        f = rounds * self.cycles[u] / slack
        # nudge upward until the exact deadline check holds in floating point
        for _ in range(8):
            if self.compute_time(u, rounds, f) + self.t_up[u] <= self.t_th[u]:
                break
            f = np.nextafter(f, np.inf)
        if f > self.f_max[u] or not self.feasible(u, rounds, f):
            return None
        return float(f)

    def max_feasible_rounds(self, u: int, f: Optional[float] = None) -> int:
        """Largest L satisfying C5-C6, at ``f`` or at the best frequency when None."""
        best = 0
        for rounds in range(1, self.max_rounds + 1):
            ok = (self.feasible(u, rounds, f) if f is not None
                  else self.min_feasible_freq(u, rounds) is not None)
            if not ok:
                break
            best = rounds
        return best

    def client_utility(self, u: int, rounds: int, f: float) -> float:
        e_tot = self.compute_energy(u, rounds, f) + self.e_up[u]
        return float(self.weight[u] * (-self.theta * rounds + (1.0 - self.theta) * e_tot))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PlanningInstance":
        d = dict(d)
        for k in ("e_up", "t_up", "cycles", "f_max", "e_bd", "t_th", "alpha_u"):
            if d.get(k) is not None:
                d[k] = np.asarray(d[k], dtype=float)
        return cls(**d)


@dataclass
class RelaxedIterate:
    sel: np.ndarray
    rounds: np.ndarray
    rounds_bar: np.ndarray
    freq: np.ndarray
    index: int = 0

    def binarity_gap(self) -> float:
        return float(np.sum(self.sel - self.sel ** 2))


@dataclass
class RoundPlan:
    selected: np.ndarray
    rounds: np.ndarray
    freq: np.ndarray
    t_cp: np.ndarray
    e_cp: np.ndarray
    t_up: np.ndarray
    e_up: np.ndarray
    objective: float
    iterations: int = 0
    feasible: bool = True
    fallback: bool = False
    rho: float = 1.0
    lin_objectives: list[float] = field(default_factory=list)
    relaxed: Optional[RelaxedIterate] = None

    @property
    def num_selected(self) -> int:
        return int(self.selected.sum())

    @property
    def e_tot(self) -> np.ndarray:
        return np.where(self.selected, self.e_cp + self.e_up, 0.0)

    @property
    def total_energy(self) -> float:
        return float(self.e_tot.sum())


def empty_plan(inst: PlanningInstance, feasible: bool = False) -> RoundPlan:
    n = inst.n
    return RoundPlan(
        selected=np.zeros(n, dtype=bool), rounds=np.zeros(n, dtype=int),
        freq=np.zeros(n), t_cp=np.zeros(n), e_cp=np.zeros(n),
        t_up=inst.t_up.copy(), e_up=inst.e_up.copy(),
        objective=0.0 if feasible else math.inf, feasible=feasible)


def make_plan(inst: PlanningInstance, selected, rounds, freq, **kw) -> RoundPlan:
    """Assemble a RoundPlan with exact per-client costs."""
    plan = empty_plan(inst, feasible=True)
    for u in np.flatnonzero(selected):
        plan.selected[u] = True
        plan.rounds[u] = int(rounds[u])
        plan.freq[u] = float(freq[u])
        plan.t_cp[u] = inst.compute_time(u, plan.rounds[u], plan.freq[u])
        plan.e_cp[u] = inst.compute_energy(u, plan.rounds[u], plan.freq[u])
    plan.objective = utility(plan, inst)
    for k, v in kw.items():
        setattr(plan, k, v)
    return plan


def utility(plan: RoundPlan, inst: PlanningInstance, theta: Optional[float] = None) -> float:
    """Weighted local-round / energy utility of a plan (lower is better)."""
    theta = inst.theta if theta is None else theta
    sel = plan.selected.astype(float)
    w = inst.weight
    rounds_term = float(np.sum(w * sel * plan.rounds))
    energy_term = float(np.sum(w * sel * (plan.e_cp + plan.e_up)))
    return -theta * rounds_term + (1.0 - theta) * energy_term


def plan_satisfies_constraints(plan: RoundPlan, inst: PlanningInstance) -> bool:
    if plan.num_selected != inst.Z:
        return False
    return all(inst.feasible(u, int(plan.rounds[u]), float(plan.freq[u]))
               for u in np.flatnonzero(plan.selected))


# -- relaxation ---------------------------------------------------------------

def initial_iterate(inst: PlanningInstance, freq_fraction: float = 0.5) -> RelaxedIterate:
    """Interior start: uniform selection mass over clients able to run one round.

    Frequencies start at ``freq_fraction * f_max``, raised to the one-round
    minimum where that speed cannot meet the deadline.
    """
    n = inst.n
    ok = exactly_feasible_clients(inst)
    s0 = np.where(ok, inst.Z / max(int(ok.sum()), 1), 0.0)
    f0 = inst.f_max * freq_fraction
    for u in np.flatnonzero(ok):
        f_one = inst.min_feasible_freq(u, 1)
        if f_one > f0[u]:
            f0[u] = f_one
    lmax = np.array([inst.max_feasible_rounds(u, f0[u]) for u in range(n)], dtype=float)
    lbar = np.minimum(inst.max_rounds, lmax) * s0
    rounds = np.clip(lbar + (1.0 - s0), 1.0, inst.max_rounds)
    return RelaxedIterate(s0, rounds, lbar, f0.copy(), 0)


def linearize(inst: PlanningInstance, it: RelaxedIterate, rho: Optional[float] = None) -> LinearProgram:
    """Linear subproblem around ``it``.

    Variables per client u, in order: selection s, local rounds L, Lbar = s*L
    and frequency in GHz.
    """
    rho = inst.rho if rho is None else rho
    if np.any(it.freq <= 0.0):
        raise ValueError("linearization point needs strictly positive frequencies")
    n, Lm, th = inst.n, float(inst.max_rounds), inst.theta
    nv = 4 * n
    c = np.zeros(nv)
    A = np.zeros((6 * n, nv))
    b = np.zeros(6 * n)
    fam = []
    constant = 0.0
    # weights normalized so that rho keeps the same strength whatever the alpha scale
    w = inst.weight / (inst.Z * float(np.mean(inst.weight)))
    for u in range(n):
        s, L, Lb, f = 4 * u, 4 * u + 1, 4 * u + 2, 4 * u + 3
        a = inst.cycles[u]
        fi, lbi, si = it.freq[u], it.rounds_bar[u], it.sel[u]
        zk = inst.zeta_cap * a * fi  # zeta * A * f_i
        c[s] = (1 - th) * w[u] * inst.e_up[u] + rho * (1.0 - 2.0 * si)
        c[Lb] = -th * w[u] + (1 - th) * w[u] * zk * 0.5 * fi
        c[f] = (1 - th) * w[u] * zk * lbi * GHZ
        constant += -(1 - th) * w[u] * zk * fi * lbi + rho * si * si
        r = 6 * u
        A[r, Lb], A[r, s], b[r] = 1.0, -Lm, 0.0
        A[r + 1, L], A[r + 1, Lb], A[r + 1, s], b[r + 1] = -1.0, 1.0, -1.0, -1.0
        A[r + 2, L], A[r + 2, Lb], A[r + 2, s], b[r + 2] = 1.0, -1.0, Lm, Lm
        A[r + 3, Lb], A[r + 3, L], A[r + 3, s], b[r + 3] = 1.0, -1.0, Lm, Lm
        A[r + 4, Lb] = a / fi
        A[r + 4, f] = -a * lbi / fi ** 2 * GHZ
        A[r + 4, s] = inst.t_up[u] - inst.t_th[u]
        b[r + 4] = -a * lbi / fi
        A[r + 5, Lb] = zk * 0.5 * fi
        A[r + 5, f] = zk * lbi * GHZ
        A[r + 5, s] = inst.e_up[u] - inst.e_bd[u]
        b[r + 5] = zk * fi * lbi
        fam += ["selection_coupling", "rounds_gap", "rounds_gap", "rounds_cap",
                "deadline", "energy"]
    A_eq = np.zeros((1, nv))
    A_eq[0, 0::4] = 1.0
    lo = np.zeros(nv)
    hi = np.zeros(nv)
    lo[0::4], hi[0::4] = 0.0, 1.0
    lo[1::4], hi[1::4] = 1.0, Lm
    lo[2::4], hi[2::4] = 0.0, Lm
    lo[3::4], hi[3::4] = F_FLOOR * inst.f_max / GHZ, inst.f_max / GHZ
    return LinearProgram(c, A, b, A_eq, np.array([float(inst.Z)]), lo, hi, constant, fam)


def iterate_from_solution(x: np.ndarray, index: int) -> RelaxedIterate:
    return RelaxedIterate(x[0::4].copy(), x[1::4].copy(), x[2::4].copy(),
                          x[3::4] * GHZ, index)


def linearized_energy(inst: PlanningInstance, it: RelaxedIterate, u: int,
                      rounds_bar: float, f: float) -> float:
    fi, lbi = it.freq[u], it.rounds_bar[u]
    return inst.zeta_cap * inst.cycles[u] * fi * (0.5 * fi * rounds_bar + lbi * f - fi * lbi)


def linearized_time(inst: PlanningInstance, it: RelaxedIterate, u: int,
                    rounds_bar: float, f: float) -> float:
    fi, lbi = it.freq[u], it.rounds_bar[u]
    return inst.cycles[u] / fi * (lbi - lbi * f / fi + rounds_bar)


# -- SCA ----------------------------------------------------------------------

def _sca_pass(inst: PlanningInstance, init: RelaxedIterate, rho: float, max_iter: int,
              tol: float) -> tuple[RelaxedIterate, list[float], Optional[LPResult]]:
    it = init
    history: list[float] = []
    failure = None
    for i in range(1, max_iter + 1):
        res = solve_lp(linearize(inst, it, rho))
        if not res.ok:
            failure = res
            log.debug("SCA step %d infeasible (%s); keeping previous iterate",
                      i, res.violated_family)
            break
        obj = res.objective
        if history and obj > history[-1] + 1e-9 * max(1.0, abs(history[-1])):
            # the local models no longer agree; keep the last accepted iterate
            log.debug("SCA objective rose from %.12g to %.12g at step %d", history[-1], obj, i)
            break
        it = iterate_from_solution(res.x, i)
        history.append(obj)
        if len(history) > 1 and abs(history[-1] - history[-2]) <= tol * max(1.0, abs(history[-2])):
            break
    return it, history, failure


def refit_client(inst: PlanningInstance, u: int, cap: int) -> Optional[tuple[int, float]]:
    """Exact best (L, f) for one selected client with L <= cap."""
    best = None
    for rounds in range(1, max(1, cap) + 1):
        f = inst.min_feasible_freq(u, rounds)
        if f is None:
            continue
        val = inst.client_utility(u, rounds, f)
        if best is None or val < best[0]:
            best = (val, rounds, f)
    return None if best is None else (best[1], best[2])


def exactly_feasible_clients(inst: PlanningInstance) -> np.ndarray:
    return np.array([inst.min_feasible_freq(u, 1) is not None for u in range(inst.n)])


START_FRACTIONS = (0.5, 0.75, 1.0)


def sca_solve(inst: PlanningInstance, init: Optional[RelaxedIterate] = None,
              max_iter: int = 50, tol: float = 1e-4, rho: Optional[float] = None,
              max_doublings: int = 3) -> RoundPlan:
    """Iterative linearize/solve loop followed by integer recovery.

    Without an explicit ``init`` the loop is started from each of
    ``START_FRACTIONS`` of f_max and the best exact plan is kept; the
    linearization is only locally accurate, so a single start often freezes on
    a poor selection.
    """
    if inst.Z == 0:
        return empty_plan(inst, feasible=True)
    if exactly_feasible_clients(inst).sum() < inst.Z:
        return empty_plan(inst, feasible=False)
    if init is not None:
        return _sca_from(inst, init, max_iter, tol, rho, max_doublings)
    best = None
    for frac in START_FRACTIONS:
        plan = _sca_from(inst, initial_iterate(inst, frac), max_iter, tol, rho, max_doublings)
        if best is None or plan.objective < best.objective - 1e-12:
            best = plan
    return best


def _sca_from(inst: PlanningInstance, init: RelaxedIterate, max_iter: int, tol: float,
              rho: Optional[float], max_doublings: int) -> RoundPlan:
    rho = inst.rho if rho is None else rho
    ok = exactly_feasible_clients(inst)

    it, history, iterations = init, [], 0
    for attempt in range(max_doublings + 1):
        it, history, _ = _sca_pass(inst, init, rho, max_iter, tol)
        iterations += len(history)
        if it.binarity_gap() < BINARY_TOL or attempt == max_doublings:
            break
        rho *= 2.0

    # integer recovery: largest relaxed indicators among exactly feasible clients
    order = sorted(range(inst.n), key=lambda u: (-it.sel[u], inst.e_up[u], u))
    chosen = [u for u in order if ok[u]][:inst.Z]
    rounds = np.zeros(inst.n, dtype=int)
    freq = np.zeros(inst.n)
    for u in chosen:
        if it.sel[u] > 1e-9:
            cap = int(np.clip(round(it.rounds_bar[u] / it.sel[u]), 1, inst.max_rounds))
        else:
            cap = inst.max_rounds
        rounds[u], freq[u] = refit_client(inst, u, cap)
    selected = np.zeros(inst.n, dtype=bool)
    selected[chosen] = True
    plan = make_plan(inst, selected, rounds, freq, iterations=iterations, rho=rho,
                     lin_objectives=history, relaxed=it)
    assert plan_satisfies_constraints(plan, inst)
    return plan


def plan_with_fallback(inst: PlanningInstance, **kw) -> RoundPlan:
    """Plan a round; with fewer than Z feasible clients, re-plan over those only."""
    plan = sca_solve(inst, **kw)
    if plan.feasible:
        return plan
    ok = exactly_feasible_clients(inst)
    z = int(ok.sum())
    if z == 0:
        idle = empty_plan(inst, feasible=False)
        idle.fallback = True
        return idle
    sub = PlanningInstance(
        e_up=inst.e_up, t_up=inst.t_up, cycles=inst.cycles, f_max=inst.f_max,
        e_bd=inst.e_bd, t_th=inst.t_th, Z=z, max_rounds=inst.max_rounds,
        alpha_u=np.full(inst.n, 1.0 / z), alpha_b=inst.alpha_b, zeta_cap=inst.zeta_cap,
        theta=inst.theta, rho=inst.rho, user_ids=inst.user_ids)
    plan = sca_solve(sub, **kw)
    plan.fallback = True
    return plan


# -- verification oracle --------------------------------------------------------

def brute_force_oracle(inst: PlanningInstance, f_grid_size: int = 8) -> tuple[float, RoundPlan]:
    """Exact minimizer over Z-subsets x L in {1..L} x a uniform f grid of (0, f_max].

    The utility is a sum of per-client terms once the subset is fixed, so each
    client's best grid point is found once and reused for every subset.
    """
    if inst.n > 8 or inst.Z > 4 or inst.max_rounds > 5 or f_grid_size > 16:
        raise ValueError("instance too large for exhaustive enumeration")
    best_client: dict[int, tuple[float, int, float]] = {}
    for u in range(inst.n):
        for rounds in range(1, inst.max_rounds + 1):
            for j in range(1, f_grid_size + 1):
                f = inst.f_max[u] * j / f_grid_size
                t = rounds * inst.cycles[u] / f + inst.t_up[u]
                e = rounds * 0.5 * inst.zeta_cap * inst.cycles[u] * f ** 2 + inst.e_up[u]
                if t > inst.t_th[u] or e > inst.e_bd[u]:
                    continue
                w = inst.alpha_b * inst.alpha_u[u]
                val = w * (-inst.theta * rounds + (1 - inst.theta) * e)
                if u not in best_client or val < best_client[u][0]:
                    best_client[u] = (val, rounds, f)
    best_val, best_subset = math.inf, None
    for subset in itertools.combinations(range(inst.n), inst.Z):
        if not all(u in best_client for u in subset):
            continue
        val = sum(best_client[u][0] for u in subset)
        if val < best_val:
            best_val, best_subset = val, subset
    if best_subset is None:
        return math.inf, empty_plan(inst, feasible=False)
    selected = np.zeros(inst.n, dtype=bool)
    rounds = np.zeros(inst.n, dtype=int)
    freq = np.zeros(inst.n)
    for u in best_subset:
        selected[u] = True
        _, rounds[u], freq[u] = best_client[u]
    plan = make_plan(inst, selected, rounds, freq)
    return plan.objective, plan


def random_instance(seed: int, n_clients: int = 4, Z: int = 2, max_rounds: int = 3,
                    theta: float = 0.4) -> PlanningInstance:
    """Small instance whose deadline and energy budget actually bind."""
    rng = np.random.default_rng(seed)
    return PlanningInstance(
        e_up=rng.uniform(0.2, 1.3, n_clients),
        t_up=rng.uniform(0.05, 0.6, n_clients),
        cycles=rng.uniform(1.5e8, 5e8, n_clients),
        f_max=rng.uniform(1.2e9, 2.0e9, n_clients),
        e_bd=rng.uniform(0.8, 1.5, n_clients),
        t_th=np.full(n_clients, 1.0),
        Z=Z, max_rounds=max_rounds, theta=theta)


def load_instance(path) -> PlanningInstance:
    with open(path, encoding="utf-8") as fh:
        return PlanningInstance.from_dict(json.load(fh))


def plan_rows(plan: RoundPlan, inst: PlanningInstance, round_k: int, edge_e: int, bs: int):
    for u in range(inst.n):
        yield {
            "k": round_k, "e": edge_e, "bs": bs, "user": inst.user_ids[u],
            "selected": int(plan.selected[u]), "rounds": int(plan.rounds[u]),
            "freq_hz": float(plan.freq[u]), "t_cp": float(plan.t_cp[u]),
            "t_up": float(plan.t_up[u]), "e_cp": float(plan.e_cp[u]),
            "e_up": float(plan.e_up[u]),
        }
