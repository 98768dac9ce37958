"""Hierarchical training loop: client sync, edge and global aggregation.

Every random draw comes from a stream keyed by (seed, purpose, entity...), so
two algorithms run on the same seed see identical users, channels and
request arrivals, and only the planning decision differs between them.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import bounds, learner, radio
from .config import ExperimentConfig
from .content import (ContentCatalog, UserState, build_catalog, build_processed_dataset,
                      draw_request, next_request, sample_genre_preferences,
                      samples_to_arrays, update_raw_dataset, warm_up)
from .planner import PlanningInstance, RoundPlan, plan_rows

# stream purposes
S_CATALOG, S_USERS, S_PLACEMENT, S_REQUESTS, S_CHANNEL, S_TRAIN, S_TEST, S_INIT, S_NOISE = range(9)

TOP_M = (1, 5, 10)


def stream(seed: int, purpose: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), purpose, *map(int, keys)])


@dataclass
class Client:
    uid: int
    bs: int
    user: UserState
    profile: radio.ComputeProfile
    distance_m: float
    p_tx: float
    request_rng: np.random.Generator
    test_x: np.ndarray
    test_y: np.ndarray
    num_items: int

    def train_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return samples_to_arrays(build_processed_dataset(self.user, self.num_items))


@dataclass
class Hierarchy:
    bs_clients: list[list[int]]
    alpha_b: np.ndarray

    def __post_init__(self):
        self.alpha_b = np.asarray(self.alpha_b, dtype=float)
        if self.alpha_b.size != len(self.bs_clients):
            raise ValueError("one alpha_b per BS required")
        if not math.isclose(float(self.alpha_b.sum()), 1.0, abs_tol=1e-12):
            raise ValueError("alpha_b must sum to 1")

    @property
    def num_bs(self) -> int:
        return len(self.bs_clients)

    @classmethod
    def uniform(cls, bs_clients: list[list[int]]) -> "Hierarchy":
        B = len(bs_clients)
        return cls(bs_clients, np.full(B, 1.0 / B))


@dataclass
class ClientUpdate:
    """What one selected client contributes to its edge aggregation."""

    uid: int
    alpha_u: float
    grad: np.ndarray
    success: int = 1
    p_sc: float = 1.0
    rounds: int = 1
    sq_grad_norms: Sequence[float] = ()


def sync_clients(w_b: np.ndarray, selected: Sequence[int]) -> dict[int, np.ndarray]:
    return {int(u): w_b.copy() for u in selected}


def _weighted_grad_sum(updates: Sequence[ClientUpdate]) -> Optional[np.ndarray]:
    total = None
    for up in updates:
        if not 0.0 < up.p_sc <= 1.0:
            raise ValueError(f"p_sc must lie in (0, 1] for client {up.uid}, got {up.p_sc}")
        if not up.success:
            continue
        term = (up.alpha_u * up.success / up.p_sc) * up.grad
        total = term if total is None else total + term
    return total


def edge_aggregate(w_b: np.ndarray, updates: Sequence[ClientUpdate], lr: float) -> np.ndarray:
    """w_b - lr * sum_u alpha_u (1_sc / p_sc) g_u."""
    total = _weighted_grad_sum(updates)
    if total is None:
        return w_b.copy()
    return w_b - lr * total


def global_aggregate(w_k: np.ndarray, edge_updates: Sequence[Sequence[Sequence[ClientUpdate]]],
                     alpha_b: Sequence[float], lr: float) -> np.ndarray:
    """Global step from the per-BS, per-edge-round client updates.

    ``edge_updates[b][e]`` lists the updates of BS ``b`` in edge round ``e``.
    """
    if len(edge_updates) != len(alpha_b):
        raise ValueError("one list of edge rounds per BS required")
    counts = {len(rounds) for rounds in edge_updates}
    if len(counts) > 1:
        raise ValueError(f"BSs completed different numbers of edge rounds: {sorted(counts)}")
    if counts == {0}:
        raise ValueError("at least one edge round required")
    step = np.zeros_like(w_k)
    for a_b, rounds in zip(alpha_b, edge_updates):
        for updates in rounds:
            s = _weighted_grad_sum(updates)
            if s is not None:
                step += a_b * s
    return w_k - lr * step


# -- population -------------------------------------------------------------------

@dataclass
class Population:
    catalog: ContentCatalog
    clients: list[Client]
    hierarchy: Hierarchy

    @property
    def num_items(self) -> int:
        return self.catalog.total


def _test_stream(user: UserState, catalog: ContentCatalog, n: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    # future requests of a private copy of the user; inactivity does not matter here
    ghost = copy.deepcopy(user)
    items = [ghost.last_request]
    for _ in range(n):
        items.append(draw_request(ghost, catalog, rng))
    items = np.asarray(items, dtype=np.int64)
    return items[:-1], items[1:]


def build_population(cfg: ExperimentConfig) -> Population:
    seed = cfg.seed
    cat = build_catalog(cfg.catalog.num_genres, cfg.catalog.per_genre,
                        cfg.catalog.feature_dim, seed=stream(seed, S_CATALOG))
    t, rq, co, ra, lr = cfg.topology, cfg.request, cfg.compute, cfg.radio, cfg.learning
    sample_bits = (cat.total + 1) * lr.fpp
    clients = []
    bs_clients: list[list[int]] = [[] for _ in range(t.num_bs)]
    for uid in range(cfg.num_users):
        b = uid // t.users_per_bs
        urng = stream(seed, S_USERS, uid)
        prefs = sample_genre_preferences(rq.dirichlet, cat.num_genres, urng)
        user = UserState(
            user_id=uid, bs_id=b,
            activity=float(urng.uniform(*rq.activity_range)),
            genre_prefs=prefs,
            similarity_prob=float(urng.uniform(*rq.similarity_range)),
        )
        profile = radio.ComputeProfile(
            cycles_per_bit=float(urng.uniform(*co.cycles_per_bit_range)),
            sample_bits=float(sample_bits),
            minibatches=lr.minibatches, batch_size=lr.batch_size,
            f_max=float(urng.uniform(*co.f_max_ghz_range)) * 1e9,
            zeta_cap=co.zeta_cap,
            energy_budget=float(urng.uniform(*co.energy_budget_range)),
            deadline=co.deadline_s,
        )
        p_tx = radio.dbm_to_watt(float(urng.uniform(*ra.p_tx_dbm_range)))
        # uniform in the annulus [min_distance, radius] by area
        prng = stream(seed, S_PLACEMENT, uid)
        r0, r1 = t.min_distance_m, t.cell_radius_m
        dist = math.sqrt(prng.uniform(r0 * r0, r1 * r1))
        req_rng = stream(seed, S_REQUESTS, uid)
        warm_up(user, cat, req_rng, rq.warm_up)
        tx, ty = _test_stream(user, cat, rq.test_requests, stream(seed, S_TEST, uid))
        clients.append(Client(uid, b, user, profile, dist, p_tx, req_rng, tx, ty, cat.total))
        bs_clients[b].append(uid)
    return Population(cat, clients, Hierarchy.uniform(bs_clients))


# -- planning inputs -------------------------------------------------------------

@dataclass
class LinkCosts:
    t_up: float
    e_up: float
    snr: float
    los: bool


def link_costs(cfg: ExperimentConfig, client: Client, k: int, e: int,
               payload: float) -> LinkCosts:
    link = radio.sample_link(client.distance_m, cfg.radio.carrier_ghz, client.p_tx,
                             cfg.radio.prb_hz, stream(cfg.seed, S_CHANNEL, k, e, client.uid))
    if cfg.radio.noise_dbm_hz != radio.NOISE_DENSITY_DBM_HZ:
        link = radio.LinkState(link.distance_m, link.pathloss_lin, link.shadowing_lin,
                               link.p_tx, link.prb_size,
                               radio.dbm_to_watt(cfg.radio.noise_dbm_hz), link.los)
    g = link.snr
    return LinkCosts(radio.upload_time(payload, cfg.radio.prb_hz, g),
                     radio.upload_energy(payload, cfg.radio.prb_hz, g, client.p_tx), g, link.los)


def planning_instance(cfg: ExperimentConfig, clients: Sequence[Client],
                      links: Sequence[LinkCosts], alpha_b: float) -> PlanningInstance:
    Z = min(cfg.planner.Z, len(clients))
    return PlanningInstance(
        e_up=np.array([l.e_up for l in links]),
        t_up=np.array([l.t_up for l in links]),
        cycles=np.array([c.profile.cycles_per_round for c in clients]),
        f_max=np.array([c.profile.f_max for c in clients]),
        e_bd=np.array([c.profile.energy_budget for c in clients]),
        t_th=np.array([c.profile.deadline for c in clients]),
        Z=Z, max_rounds=cfg.learning.local_rounds, alpha_b=alpha_b,
        zeta_cap=cfg.compute.zeta_cap, theta=cfg.planner.theta, rho=cfg.planner.rho,
        user_ids=[c.uid for c in clients])


# -- evaluation ------------------------------------------------------------------

def evaluate(model: learner.ModelParams, clients: Sequence[Client]) -> dict:
    losses = []
    acc = {m: [] for m in TOP_M}
    for c in clients:
        scores = learner.logits(model, c.test_x)
        logp = scores - scores.max(axis=1, keepdims=True)
        logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
        losses.append(-float(logp[np.arange(c.test_y.size), c.test_y].mean()))
        for m in TOP_M:
            acc[m].append(learner.top_m_from_logits(scores, c.test_y, m))
    out = {"test_loss": float(np.mean(losses))}
    for m in TOP_M:
        out[f"top{m}_mean"] = float(np.mean(acc[m]))
        out[f"top{m}_std"] = float(np.std(acc[m]))
    return out


def pooled_train_loss(model: learner.ModelParams, data: Sequence[tuple[np.ndarray, np.ndarray]]
                      ) -> float:
    """Client-averaged training loss."""
    vals = [learner.mean_loss(model, (x, y)) for x, y in data if x.size]
    return float(np.mean(vals)) if vals else 0.0


def estimate_noise_terms(model: learner.ModelParams, pop: Population, cfg: ExperimentConfig,
                         ) -> tuple[float, float, float]:
    """Empirical sigma^2, eps0^2 and eps1^2 at ``model``.

    sigma^2: spread of single mini-batch gradients around the client's full
    gradient; eps0^2: client-vs-BS full-gradient divergence; eps1^2: BS-vs-global.
    """
    rng = stream(cfg.seed, S_NOISE)
    client_grads = {}
    sig = []
    for c in pop.clients:
        x, y = c.train_arrays()
        _, g_full = learner.loss_and_grad_arrays(model, x, y)
        client_grads[c.uid] = g_full
        for _ in range(cfg.learning.minibatches):
            idx = rng.integers(0, x.size, size=cfg.learning.batch_size)
            _, g = learner.loss_and_grad_arrays(model, x[idx], y[idx])
            d = g - g_full
            sig.append(float(d @ d))
    h = pop.hierarchy
    bs_grads = []
    eps0 = []
    for members in h.bs_clients:
        gb = np.mean([client_grads[u] for u in members], axis=0)
        bs_grads.append(gb)
        for u in members:
            d = client_grads[u] - gb
            eps0.append(float(d @ d))
    g = np.sum([a * gb for a, gb in zip(h.alpha_b, bs_grads)], axis=0)
    eps1 = [float((gb - g) @ (gb - g)) for gb in bs_grads]
    return float(np.mean(sig)), float(np.max(eps0)), float(np.max(eps1))


# -- main loop -------------------------------------------------------------------

Planner = Callable[[PlanningInstance], RoundPlan]


@dataclass
class RunResult:
    metrics: list[dict] = field(default_factory=list)
    edge_energy: list[dict] = field(default_factory=list)   # one row per (k, e)
    client_energy: list[dict] = field(default_factory=list)  # one row per selected client
    plans: list[dict] = field(default_factory=list)
    summaries: list[Optional[bounds.RoundSummary]] = field(default_factory=list)
    noise: tuple[float, float, float] = (0.0, 0.0, 0.0)
    final_model: Optional[learner.ModelParams] = None
    violations: int = 0


def run_hfl(cfg: ExperimentConfig, planner: Planner, enforce_constraints: bool = True,
            population: Optional[Population] = None) -> RunResult:
    """K global rounds of E edge rounds with per-BS plans from ``planner``.

    With ``enforce_constraints`` every selected client's realized deadline and
    energy use is checked and a violation raises; otherwise (the unconstrained
    reference) costs are only metered and every upload counts as received.
    """
    pop = population if population is not None else build_population(cfg)
    clients, h, C = pop.clients, pop.hierarchy, pop.num_items
    lc, bc = cfg.learning, cfg.bound
    K, E, L = lc.global_rounds, lc.edge_rounds, lc.local_rounds
    w = learner.init_model(C, stream(cfg.seed, S_INIT)).vector
    payload = radio.payload_bits(w.size, lc.fpp)
    res = RunResult()

    if None in (bc.sigma_sq, bc.eps0_sq, bc.eps1_sq):
        est = estimate_noise_terms(learner.ModelParams(C, w), pop, cfg)
    else:
        est = (0.0, 0.0, 0.0)
    res.noise = tuple(v if v is not None else d
                      for v, d in zip((bc.sigma_sq, bc.eps0_sq, bc.eps1_sq), est))
    step_ok, _ = bounds.check_step_size(lc.lr, bc.smoothness, E, L)

    cum_energy = 0.0
    for k in range(K):
        snapshot = [c.train_arrays() for c in clients]
        loss_before = pooled_train_loss(learner.ModelParams(C, w), snapshot)
        edge_w = [w.copy() for _ in range(h.num_bs)]
        edge_updates: list[list[list[ClientUpdate]]] = [[] for _ in range(h.num_bs)]
        records: list[list[bounds.EdgeRecord]] = []
        bs_energy = np.zeros(h.num_bs)
        round_utility = 0.0
        selected_desc = []
        for e in range(E):
            edge_recs = []
            edge_energy = 0.0
            desc = []
            for b, members in enumerate(h.bs_clients):
                cl = [clients[u] for u in members]
                links = [link_costs(cfg, c, k, e, payload) for c in cl]
                inst = planning_instance(cfg, cl, links, float(h.alpha_b[b]))
                plan = planner(inst)
                res.plans.extend(_plan_rows(plan, inst, k, e, b))
                sel = [int(i) for i in np.flatnonzero(plan.selected)]
                desc.append("|".join(str(members[i]) for i in sel))
                starts = sync_clients(edge_w[b], [members[i] for i in sel])
                updates = []
                crecs = []
                for i in sel:
                    c = cl[i]
                    rounds, f = int(plan.rounds[i]), float(plan.freq[i])
                    t_cp = radio.compute_time(rounds, c.profile, f)
                    e_cp = radio.compute_energy(rounds, c.profile, f)
                    e_tot = e_cp + links[i].e_up
                    on_time = radio.success_indicator(t_cp, links[i].t_up, c.profile.deadline)
                    in_budget = e_tot <= c.profile.energy_budget
                    if not (on_time and in_budget):
                        res.violations += 1
                        if enforce_constraints:
                            raise AssertionError(
                                f"client {c.uid} breaks its deadline or energy budget "
                                f"in round k={k}, e={e}")
                    success = 1 if not enforce_constraints else on_time
                    alpha_u = 1.0 / len(sel)
                    x, y = c.train_arrays()
                    _, acc, sq = learner.local_sgd(
                        learner.ModelParams(C, starts[c.uid]), (x, y), rounds, lc.lr,
                        lc.minibatches, lc.batch_size, stream(cfg.seed, S_TRAIN, k, e, c.uid))
                    updates.append(ClientUpdate(c.uid, alpha_u, acc.vector, success, 1.0,
                                                rounds, sq))
                    crecs.append(bounds.ClientRecord(alpha_u, rounds, 1.0, sq))
                    res.client_energy.append({
                        "k": k, "e": e, "bs": b, "user": c.uid, "rounds": rounds,
                        "freq_hz": f, "e_cp": e_cp, "e_up": links[i].e_up, "e_tot": e_tot})
                    edge_energy += e_tot
                    bs_energy[b] += e_tot
                    round_utility += h.alpha_b[b] * alpha_u * (
                        -cfg.planner.theta * rounds + (1.0 - cfg.planner.theta) * e_tot)
                edge_w[b] = edge_aggregate(edge_w[b], updates, lc.lr)
                edge_updates[b].append(updates)
                edge_recs.append(bounds.EdgeRecord(float(h.alpha_b[b]), crecs))
            records.append(edge_recs)
            res.edge_energy.append({"k": k, "e": e, "energy": edge_energy})
            selected_desc.append("/".join(desc))
            # one request slot per edge round
            slot = k * E + e
            for c in clients:
                update_raw_dataset(c.user, next_request(c.user, pop.catalog, c.request_rng), slot)

        w = global_aggregate(w, edge_updates, h.alpha_b, lc.lr)
        model = learner.ModelParams(C, w)
        loss_delta = loss_before - pooled_train_loss(model, snapshot)
        any_selected = any(bs.clients for er in records for bs in er)
        summary = bounds.summarize_round(records, loss_delta) if any_selected else None
        res.summaries.append(summary)
        cum_energy += float(bs_energy.sum())

        row = {"k": k}
        row.update(evaluate(model, clients))
        row["train_loss"] = loss_before
        row["energy_round"] = float(bs_energy.sum())
        row["energy_cum"] = cum_energy
        for b in range(h.num_bs):
            row[f"energy_bs{b}"] = float(bs_energy[b])
        row["utility"] = round_utility
        row["selected"] = ";".join(selected_desc)
        row.update(_bound_columns(cfg, res, summary, step_ok))
        res.metrics.append(row)
    res.final_model = learner.ModelParams(C, w)
    return res


def _plan_rows(plan: RoundPlan, inst: PlanningInstance, k: int, e: int, b: int):
    return list(plan_rows(plan, inst, k, e, b))


def _bound_columns(cfg: ExperimentConfig, res: RunResult,
                   summary: Optional[bounds.RoundSummary], step_ok: bool) -> dict:
    out = {
        "loss_delta": summary.loss_delta if summary else 0.0,
        "omega": summary.omega if summary else 0.0,
        "alpha_sq": summary.alpha_sq if summary else 0.0,
        "alpha_b_alpha_u_sq": summary.alpha_b_alpha_u_sq if summary else 0.0,
        "wireless_lin": summary.wireless_lin if summary else 0.0,
        "wireless_sq": summary.wireless_sq if summary else 0.0,
        "sigma_sq": res.noise[0], "eps0_sq": res.noise[1], "eps1_sq": res.noise[2],
        "step_size_ok": int(step_ok),
    }
    done = [s for s in res.summaries if s is not None]
    if done:
        lc = cfg.learning
        params = bounds.BoundParams(cfg.bound.smoothness, lc.lr, lc.edge_rounds,
                                    lc.local_rounds, *res.noise, done)
        total, terms = bounds.evaluate_bound(params)
    else:
        total, terms = math.nan, (math.nan,) * 6
    out["bound_total"] = total
    for name, v in zip(bounds.TERM_NAMES, terms):
        out[f"bound_{name}"] = v
    return out
