"""Run-time evaluation of the average global-gradient-norm upper bound.

Per global round the bound only needs a handful of weighted sums over the
selected clients, so rounds are reduced to :class:`RoundSummary` records as the
simulation goes; those records are also what the metrics CSV stores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

TERM_NAMES = (
    "loss_delta",
    "sigma_weights",
    "sigma_drift",
    "eps0",
    "eps1",
    "wireless",
)


@dataclass
class ClientRecord:
    alpha_u: float
    rounds: int
    p_sc: float = 1.0
    sq_grad_norms: Sequence[float] = ()


@dataclass
class EdgeRecord:
    """One BS in one edge round."""

    alpha_b: float
    clients: list[ClientRecord] = field(default_factory=list)


@dataclass
class RoundSummary:
    """Weighted sums of one global round.

    omega: sum_e sum_b a_b sum_u a_u L_u
    alpha_sq: sum_e sum_b a_b^2 sum_u a_u^2
    alpha_b_alpha_u_sq: sum_e sum_b a_b sum_u a_u^2
    wireless_lin / wireless_sq: sum_e sum_b a_b sum_u (a_u or a_u^2) *
        sum_l (1/p_sc - 1) ||g||^2
    """

    omega: float
    alpha_sq: float
    alpha_b_alpha_u_sq: float
    wireless_lin: float = 0.0
    wireless_sq: float = 0.0
    loss_delta: float = 0.0


@dataclass
class BoundParams:
    beta: float
    lr: float
    E: int
    L: int
    sigma_sq: float
    eps0_sq: float
    eps1_sq: float
    rounds: list[RoundSummary]

    def __post_init__(self):
        for name in ("beta", "lr", "sigma_sq", "eps0_sq", "eps1_sq"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def K(self) -> int:
        return len(self.rounds)


def check_step_size(lr: float, beta: float, E: int, L: int) -> tuple[bool, float]:
    """Both step-size conditions of the bound; margin is the smaller slack."""
    limit = 1.0 / (2.0 * math.sqrt(15.0) * beta * E * L)
    x = beta * lr * E * L
    quad = 1.0 - x - 24.0 * x * x
    ok = lr < limit and quad >= 0.0
    return ok, min(limit - lr, quad)


def omega_k(edge_rounds: Iterable[Iterable[EdgeRecord]]) -> float:
    total = 0.0
    any_selected = False
    for bss in edge_rounds:
        for bs in bss:
            for c in bs.clients:
                any_selected = True
                total += bs.alpha_b * c.alpha_u * c.rounds
    if not any_selected:
        raise ValueError("no client selected in any edge round of this global round")
    return total


def summarize_round(edge_rounds: Sequence[Sequence[EdgeRecord]],
                    loss_delta: float = 0.0) -> RoundSummary:
    a2 = a1 = w_lin = w_sq = 0.0
    for bss in edge_rounds:
        for bs in bss:
            for c in bs.clients:
                if not 0.0 < c.p_sc <= 1.0:
                    raise ValueError(f"p_sc must lie in (0, 1], got {c.p_sc}")
                a2 += bs.alpha_b ** 2 * c.alpha_u ** 2
                a1 += bs.alpha_b * c.alpha_u ** 2
                loss_free = (1.0 / c.p_sc - 1.0) * float(sum(c.sq_grad_norms))
                w_lin += bs.alpha_b * c.alpha_u * loss_free
                w_sq += bs.alpha_b * c.alpha_u ** 2 * loss_free
    return RoundSummary(omega_k(edge_rounds), a2, a1, w_lin, w_sq, loss_delta)


def evaluate_bound(params: BoundParams) -> tuple[float, tuple[float, ...]]:
    """Right-hand side of the bound and its six additive terms."""
    b, eta, E, L, K = params.beta, params.lr, params.E, params.L, params.K
    if K == 0:
        raise ValueError("need at least one global round")
    drift = 3 * b * eta * E * L + 180 * E ** 2 * b ** 3 * eta ** 3 * L ** 3
    wl_coef = E + 3 * b * eta + 180 * E ** 2 * b ** 3 * eta ** 3 * L ** 3
    t = [0.0] * 6
    for r in params.rounds:
        if r.omega <= 0:
            raise ValueError("omega must be positive in every round")
        inv = 1.0 / r.omega
        t[0] += r.loss_delta * inv
        t[1] += inv * (r.alpha_sq + 4 * E * b * eta * L * r.alpha_b_alpha_u_sq)
        t[2] += inv * drift
        t[3] += inv
        t[4] += inv
        t[5] += inv * (wl_coef * r.wireless_lin + 4 * b * eta * E * r.wireless_sq)
    t[0] *= 2.0 / (eta * K)
    t[1] *= 2 * b * eta * L * params.sigma_sq / K
    t[2] *= 2 * b * eta * L * params.sigma_sq / K
    t[3] *= 18 * E * b ** 2 * params.eps0_sq * eta ** 2 * L ** 3 / K * (1 + 60 * L * b ** 2 * eta ** 2 * E ** 2)
    t[4] *= 60 * b ** 2 * params.eps1_sq * eta ** 2 * L ** 3 * E ** 3 / K
    t[5] *= 2 * b * eta * L / K
    return sum(t), tuple(t)


def evaluate_bound_full_rounds(params: BoundParams) -> tuple[float, tuple[float, ...]]:
    """Closed form for every selected client running exactly L local rounds.

    Relies on the per-tier weights summing to one, so that omega = E * L.
    """
    b, eta, E, L, K = params.beta, params.lr, params.E, params.L, params.K
    drift = 3 * b * eta * E * L + 180 * E ** 2 * b ** 3 * eta ** 3 * L ** 3
    wl_coef = E + 3 * b * eta + 180 * E ** 2 * b ** 3 * eta ** 3 * L ** 3
    total_delta = sum(r.loss_delta for r in params.rounds)
    t0 = 2.0 * total_delta / (eta * E * K * L)
    t1 = 2 * b * eta * params.sigma_sq / (E * K) * sum(
        r.alpha_sq + 4 * E * b * eta * L * r.alpha_b_alpha_u_sq for r in params.rounds)
    t2 = 2 * b * eta * params.sigma_sq / E * drift
    t3 = 18 * b ** 2 * params.eps0_sq * eta ** 2 * L ** 2 * (1 + 60 * L * b ** 2 * eta ** 2 * E ** 2)
    t4 = 60 * b ** 2 * params.eps1_sq * eta ** 2 * L ** 2 * E ** 2
    t5 = 2 * b * eta / (E * K) * sum(
        wl_coef * r.wireless_lin + 4 * b * eta * E * r.wireless_sq for r in params.rounds)
    terms = (t0, t1, t2, t3, t4, t5)
    return sum(terms), terms
