import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rawhfl import planner as P
from rawhfl.lp import enumerate_vertices, solve_lp


def single(e_up=0.3, t_up=0.2, cycles=3e8, f_max=2e9, e_bd=1.2, t_th=1.0, Z=1, L=2, **kw):
    return P.PlanningInstance(e_up=[e_up], t_up=[t_up], cycles=[cycles], f_max=[f_max],
                              e_bd=[e_bd], t_th=[t_th], Z=Z, max_rounds=L, **kw)


def generous(n=3, L=4, theta=0.4):
    rng = np.random.default_rng(0)
    return P.PlanningInstance(
        e_up=rng.uniform(0.1, 0.3, n), t_up=rng.uniform(0.1, 0.3, n),
        cycles=rng.uniform(1e8, 3e8, n), f_max=np.full(n, 2e9), e_bd=np.full(n, 1e6),
        t_th=np.full(n, 1e6), Z=n, max_rounds=L, theta=theta)


# -- utility --------------------------------------------------------------------

def test_utility_hand_computed():
    inst = single(L=2)
    plan = P.make_plan(inst, [True], [2], [1e9])
    e_cp = 2 * 0.5 * 2e-28 * 3e8 * 1e18
    expect = -0.4 * 2 + 0.6 * (e_cp + 0.3)
    assert P.utility(plan, inst) == pytest.approx(expect, rel=1e-12)


def test_utility_theta_extremes():
    inst = single(L=2)
    plan = P.make_plan(inst, [True], [2], [1e9])
    assert P.utility(plan, inst, theta=1.0) == pytest.approx(-2.0)
    assert P.utility(plan, inst, theta=0.0) == pytest.approx(plan.e_cp[0] + 0.3)


# -- linearization ---------------------------------------------------------------

def test_linearization_exact_at_expansion_point():
    inst = P.random_instance(3)
    it = P.initial_iterate(inst)
    for u in range(inst.n):
        lb, f = it.rounds_bar[u], it.freq[u]
        assert P.linearized_energy(inst, it, u, lb, f) == pytest.approx(
            inst.compute_energy(u, lb, f), rel=1e-12, abs=1e-15)
        assert P.linearized_time(inst, it, u, lb, f) == pytest.approx(
            inst.compute_time(u, lb, f), rel=1e-12, abs=1e-15)


def relaxed_objective(inst, it, rho):
    w = inst.weight / (inst.Z * np.mean(inst.weight))
    th = inst.theta
    e_cp = np.array([inst.compute_energy(u, it.rounds_bar[u], it.freq[u]) for u in range(inst.n)])
    val = np.sum(w * (-th * it.rounds_bar + (1 - th) * (it.sel * inst.e_up + e_cp)))
    return val + rho * np.sum(it.sel - it.sel ** 2)


def as_vector(it):
    x = np.empty(4 * it.sel.size)
    x[0::4], x[1::4], x[2::4], x[3::4] = it.sel, it.rounds, it.rounds_bar, it.freq / P.GHZ
    return x


@pytest.mark.parametrize("seed", range(5))
def test_linear_objective_matches_relaxed_objective_at_point(seed):
    inst = P.random_instance(seed)
    it = P.initial_iterate(inst)
    lp = P.linearize(inst, it, rho=1.0)
    assert lp.objective(as_vector(it)) == pytest.approx(relaxed_objective(inst, it, 1.0), abs=1e-12)


def test_penalty_vanishes_at_binary_point():
    inst = P.random_instance(1)
    it = P.initial_iterate(inst)
    it.sel = np.array([1.0, 0.0, 1.0, 0.0])
    with_pen = P.linearize(inst, it, rho=5.0).objective(as_vector(it))
    without = P.linearize(inst, it, rho=0.0).objective(as_vector(it))
    assert with_pen == pytest.approx(without, abs=1e-12)


def test_linearize_rejects_zero_frequency():
    inst = P.random_instance(0)
    it = P.initial_iterate(inst)
    it.freq[0] = 0.0
    with pytest.raises(ValueError):
        P.linearize(inst, it)


def test_initial_iterate_is_relaxed_feasible():
    for seed in range(20):
        inst = P.random_instance(seed)
        it = P.initial_iterate(inst)
        assert P.linearize(inst, it).is_feasible(as_vector(it), tol=1e-7)


# -- the LP against an independent dual oracle ---------------------------------------

def lagrangian_oracle(lp, n):
    """Optimal value via per-client vertex enumeration and the exact dual of sum(s) = Z.

    Only the equality row couples clients, so the dual function is a sum of
    per-client minima over each client's own polytope vertices, and its maximum
    is attained at one of the finitely many breakpoints.
    """
    blocks = []
    for u in range(n):
        cols = slice(4 * u, 4 * u + 4)
        rows = slice(6 * u, 6 * u + 6)
        A = np.vstack([lp.A_ub[rows, cols], np.eye(4), -np.eye(4)])
        b = np.concatenate([lp.b_ub[rows], lp.hi[cols], -lp.lo[cols]])
        verts = enumerate_vertices(A, b, tol=1e-10)
        blocks.append((verts @ lp.c[cols], verts[:, 0]))
    Z = lp.b_eq[0]

    def dual(lam):
        return sum(np.min(c + lam * s) for c, s in blocks) - lam * Z + lp.constant

    cands = {0.0}
    for c, s in blocks:
        for i in range(c.size):
            for j in range(i + 1, c.size):
                if abs(s[i] - s[j]) > 1e-12:
                    cands.add((c[j] - c[i]) / (s[i] - s[j]))
    return max(dual(l) for l in cands)


@pytest.mark.parametrize("seed", range(6))
def test_lp_optimum_matches_dual_vertex_oracle(seed):
    inst = P.random_instance(seed)
    it = P.initial_iterate(inst)
    lp = P.linearize(inst, it)
    res = solve_lp(lp)
    assert res.ok
    assert res.objective == pytest.approx(lagrangian_oracle(lp, inst.n), abs=1e-7)


def test_forced_selection_in_lp():
    inst = P.random_instance(2, n_clients=3, Z=3)
    inst.e_bd[:] = 10.0
    res = solve_lp(P.linearize(inst, P.initial_iterate(inst)))
    np.testing.assert_allclose(res.x[0::4], 1.0, atol=1e-9)


# -- SCA -------------------------------------------------------------------------

def test_generous_budgets_select_everyone_with_max_rounds():
    inst = generous()
    plan = P.sca_solve(inst)
    assert plan.selected.all()
    assert np.all(plan.rounds == inst.max_rounds)
    for u in range(inst.n):
        # energy grows with f, so the best speed is the slowest that meets the deadline
        assert plan.freq[u] == pytest.approx(inst.min_feasible_freq(u, inst.max_rounds))


def test_pure_energy_objective_runs_one_round():
    inst = P.random_instance(4, theta=0.0)
    plan = P.sca_solve(inst)
    assert plan.feasible
    assert np.all(plan.rounds[plan.selected] == 1)


def test_sca_objective_history_non_increasing():
    for seed in range(30):
        inst = P.random_instance(seed)
        h = P.sca_solve(inst, init=P.initial_iterate(inst)).lin_objectives
        assert all(b <= a + 1e-9 * max(1.0, abs(a)) for a, b in zip(h, h[1:]))


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_returned_plans_meet_every_constraint(seed):
    inst = P.random_instance(seed)
    plan = P.sca_solve(inst)
    if plan.feasible:
        assert plan.num_selected == inst.Z
        assert P.plan_satisfies_constraints(plan, inst)
        assert np.all((plan.rounds[plan.selected] >= 1) & (plan.rounds[plan.selected] <= 3))
        assert np.all(plan.freq[plan.selected] <= inst.f_max[plan.selected])
    else:
        assert P.exactly_feasible_clients(inst).sum() < inst.Z


@given(st.integers(0, 10_000), st.sampled_from([0.25, 0.5, 2.0, 10.0]))
@settings(max_examples=30, deadline=None)
def test_alpha_scaling_keeps_selection(seed, scale):
    inst = P.random_instance(seed)
    scaled = P.PlanningInstance.from_dict(inst.to_dict())
    scaled.alpha_u = inst.alpha_u * scale
    assert np.array_equal(P.sca_solve(inst).selected, P.sca_solve(scaled).selected)


def test_binarity_after_convergence():
    gaps = [P.sca_solve(P.random_instance(s)).relaxed.binarity_gap() for s in range(20)]
    assert max(gaps) < 0.01


def test_oracle_gap_small_instances():
    within = 0
    for seed in range(50):
        inst = P.random_instance(seed)
        best, _ = P.brute_force_oracle(inst, 8)
        plan = P.sca_solve(inst)
        within += plan.objective <= best + 0.05 * abs(best)
    assert within >= 45


def test_zero_quota_gives_empty_plan():
    inst = P.random_instance(0, Z=0)
    plan = P.sca_solve(inst)
    assert plan.feasible and plan.num_selected == 0


def test_fallback_replans_over_feasible_clients():
    inst = P.random_instance(7, n_clients=4, Z=3)
    inst.t_up[:2] = 5.0  # two clients can never meet the deadline
    assert not P.sca_solve(inst).feasible
    plan = P.plan_with_fallback(inst)
    assert plan.fallback and plan.num_selected == 2
    assert not plan.selected[:2].any()


def test_fallback_idle_when_nobody_fits():
    inst = P.random_instance(7)
    inst.t_up[:] = 5.0
    plan = P.plan_with_fallback(inst)
    assert plan.fallback and plan.num_selected == 0


# -- exhaustive oracle -----------------------------------------------------------

def test_oracle_single_client():
    inst = single(L=3)
    best, plan = P.brute_force_oracle(inst, 8)
    cands = []
    for L in range(1, 4):
        for j in range(1, 9):
            f = 2e9 * j / 8
            if inst.feasible(0, L, f):
                cands.append(inst.client_utility(0, L, f))
    assert best == pytest.approx(min(cands))
    assert plan.selected[0]


def test_oracle_reports_infeasible():
    inst = P.random_instance(0)
    inst.t_up[:] = 2.0
    best, plan = P.brute_force_oracle(inst, 8)
    assert math.isinf(best) and not plan.feasible


def test_oracle_rejects_large_instances():
    with pytest.raises(ValueError):
        P.brute_force_oracle(P.random_instance(0, n_clients=9), 8)
    with pytest.raises(ValueError):
        P.brute_force_oracle(P.random_instance(0), 17)


# -- plumbing --------------------------------------------------------------------

def test_instance_roundtrip(tmp_path):
    inst = P.random_instance(5)
    path = tmp_path / "inst.json"
    path.write_text(json.dumps(inst.to_dict()))
    back = P.load_instance(path)
    assert np.array_equal(back.e_up, inst.e_up) and back.Z == inst.Z


def test_instance_validation():
    with pytest.raises(ValueError):
        P.random_instance(0, Z=5)
    with pytest.raises(ValueError):
        P.random_instance(0, theta=1.5)


def test_max_feasible_rounds_and_min_freq():
    inst = single(L=5, t_up=0.5, cycles=4e8, f_max=2e9, t_th=1.0)
    # each round needs 0.2 s at f_max; 0.5 s of slack fits 2 rounds
    assert inst.max_feasible_rounds(0) == 2
    f = inst.min_feasible_freq(0, 2)
    assert inst.feasible(0, 2, f)
    assert not inst.feasible(0, 2, f * (1 - 1e-9))


def test_linearized_energy_sign_on_grid():
    # the true compute energy is not jointly convex in (L, f): its tangent plane
    # under-estimates along f and over-estimates where L and f move in opposite directions
    inst = P.random_instance(2)
    it = P.initial_iterate(inst)
    u = 0
    L0, f0 = it.rounds_bar[u], it.freq[u]
    za = inst.zeta_cap * inst.cycles[u]
    above = below = 0
    for L in np.linspace(1.0, inst.max_rounds, 9):
        for f in np.linspace(0.1, 1.0, 9) * inst.f_max[u]:
            true = 0.5 * za * L * f * f
            lin = P.linearized_energy(inst, it, u, L, f)
            expect_gap = 0.5 * za * (L * (f - f0) ** 2 + 2 * (L - L0) * f0 * (f - f0))
            assert true - lin == pytest.approx(expect_gap, rel=1e-9, abs=1e-12 * true)
            above += lin > true * (1 + 1e-12)
            below += lin < true * (1 - 1e-12)
    assert above > 0 and below > 0
