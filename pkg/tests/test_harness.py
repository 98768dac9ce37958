import json

import numpy as np
import pytest

from rawhfl import baselines as BL
from rawhfl.cli import main
from rawhfl.config import ConfigError, desk_profile, from_dict, load_config, full_profile
from rawhfl.content import build_catalog
from rawhfl.experiment import (cdf_quantiles, energy_cdf, plateau_round, run, run_experiment)
from rawhfl.planner import PlanningInstance, random_instance, sca_solve


# -- configuration ---------------------------------------------------------------

def test_full_scale_defaults():
    cfg = full_profile()
    assert (cfg.topology.num_bs, cfg.topology.users_per_bs) == (4, 12)
    assert cfg.num_items == 256 and cfg.learning.global_rounds == 300
    assert (cfg.learning.edge_rounds, cfg.learning.local_rounds) == (4, 50)
    assert cfg.compute.zeta_cap == 2e-28 and cfg.compute.deadline_s == 150.0
    assert (cfg.planner.theta, cfg.planner.rho, cfg.planner.max_iter) == (0.4, 1.0, 50)


def test_desk_profile():
    cfg = desk_profile()
    assert cfg.num_users == 8 and cfg.num_items == 32
    assert cfg.learning.global_rounds == 50 and cfg.learning.local_rounds == 10


@pytest.mark.parametrize("data, field", [
    ({"planner": {"Z": 20}}, "planner.Z"),
    ({"learning": {"edge_rounds": 0}}, "learning.edge_rounds"),
    ({"request": {"activity_range": [0.9, 0.1]}}, "request.activity_range"),
    ({"planner": {"theta": 1.5}}, "planner.theta"),
    ({"algorithm": "fedprox"}, "algorithm"),
    ({"learning": {"momentum": 0.9}}, "learning.momentum"),
    ({"nonsense": {"a": 1}}, "nonsense"),
])
def test_invalid_config_names_field(data, field):
    with pytest.raises(ConfigError) as exc:
        from_dict(data)
    assert exc.value.field == field
    assert field in str(exc.value)


def test_yaml_roundtrip(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("learning:\n  global_rounds: 7\nplanner:\n  Z: 3\nseed: 5\n")
    cfg = load_config(path)
    assert cfg.learning.global_rounds == 7 and cfg.planner.Z == 3 and cfg.seed == 5


def test_shipped_config_files_match_profiles():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    assert load_config(root / "desk.yaml") == desk_profile()
    assert load_config(root / "full.yaml") == full_profile()


# -- baselines -------------------------------------------------------------------

def deadline_instance(max_rounds_per_client, L=5):
    # f_max = 1 GHz, deadline 1 s, no upload time: max L = floor(1 / (cycles / 1e9))
    cycles = [1e9 / (m + 0.5) if m > 0 else 2e9 for m in max_rounds_per_client]
    n = len(cycles)
    return PlanningInstance(e_up=np.full(n, 0.1), t_up=np.zeros(n), cycles=cycles,
                            f_max=np.full(n, 1e9), e_bd=np.full(n, 1e3), t_th=np.ones(n),
                            Z=n, max_rounds=L)


def test_m1_common_rounds():
    inst = deadline_instance([3, 2, 5])
    assert list(BL.per_client_max_rounds(inst)) == [3, 2, 5]
    plan = BL.hfedavg_m1_plan(inst)
    assert plan.selected.all() and np.all(plan.rounds == 2)


def test_m1_generous_uses_max_rounds():
    inst = deadline_instance([5, 5, 5])
    assert np.all(BL.hfedavg_m1_plan(inst).rounds == 5)


def test_m1_fails_on_straggler():
    inst = deadline_instance([3, 4, 5])
    inst.t_up[1] = 2.0
    plan = BL.hfedavg_m1_plan(inst)
    assert plan.num_selected == 0 and not plan.feasible


def test_m2_drops_stragglers():
    inst = deadline_instance([0, 2, 5])
    plan = BL.hfedavg_m2_plan(inst)
    assert list(plan.selected) == [False, True, True]
    assert np.all(plan.rounds[plan.selected] == 2)


def test_m2_equals_m1_without_stragglers():
    inst = deadline_instance([3, 4, 2])
    a, b = BL.hfedavg_m1_plan(inst), BL.hfedavg_m2_plan(inst)
    assert np.array_equal(a.selected, b.selected) and np.array_equal(a.rounds, b.rounds)
    assert np.array_equal(a.freq, b.freq)


def test_m2_all_stragglers_fail():
    inst = deadline_instance([0, 0])
    assert BL.hfedavg_m2_plan(inst).num_selected == 0


def test_baseline_frequencies_feasible_and_maximal():
    for seed in range(20):
        inst = random_instance(seed)
        plan = BL.hfedavg_m2_plan(inst)
        for u in np.flatnonzero(plan.selected):
            assert inst.feasible(u, int(plan.rounds[u]), plan.freq[u])
            f_up = plan.freq[u] * (1 + 1e-6)
            assert f_up > inst.f_max[u] or not inst.feasible(u, int(plan.rounds[u]), f_up)


def test_ub_plan_ignores_constraints():
    inst = random_instance(3)
    plan = BL.hfedavg_ub_plan(inst)
    assert plan.selected.all() and np.all(plan.rounds == inst.max_rounds)
    expect = sum(inst.compute_energy(u, inst.max_rounds, inst.f_max[u]) + inst.e_up[u]
                 for u in range(inst.n))
    assert plan.total_energy == pytest.approx(expect)


def test_ub_matches_planner_when_unconstrained():
    rng = np.random.default_rng(1)
    n = 3
    inst = PlanningInstance(e_up=rng.uniform(0.1, 0.3, n), t_up=rng.uniform(0.1, 0.3, n),
                            cycles=rng.uniform(1e8, 3e8, n), f_max=np.full(n, 2e9),
                            e_bd=np.full(n, 1e6), t_th=np.full(n, 1e6), Z=n, max_rounds=4,
                            theta=1.0)
    ours, ub = sca_solve(inst), BL.hfedavg_ub_plan(inst)
    assert np.array_equal(ours.selected, ub.selected)
    assert np.array_equal(ours.rounds, ub.rounds)


def test_top_popular():
    cat = build_catalog(4, 8, seed=0)
    labels = np.arange(32)
    assert BL.top_popular_accuracy(cat, labels, 32) == 1.0
    assert BL.top_popular_accuracy(cat, labels, 1) == pytest.approx(1 / 32)
    assert list(BL.top_popular_predict(cat, 3)) == list(cat.global_rank[:3])
    one = build_catalog(1, 1, seed=0)
    assert BL.top_popular_accuracy(one, np.zeros(5, dtype=int), 1) == 1.0


# -- energy CDF and curves ---------------------------------------------------------

def test_cdf_constant_values():
    assert energy_cdf([2.0, 2.0, 2.0]) == [(2.0, 1.0)]


def test_cdf_axioms():
    rng = np.random.default_rng(0)
    cdf = energy_cdf(rng.exponential(size=200))
    xs, fs = zip(*cdf)
    assert all(a < b for a, b in zip(xs, xs[1:]))
    assert all(a <= b for a, b in zip(fs, fs[1:]))
    assert fs[-1] == 1.0


def test_quantiles_and_plateau():
    assert list(cdf_quantiles([1.0, 2.0, 3.0, 4.0], [0.25, 0.5, 1.0])) == [1.0, 2.0, 4.0]
    assert plateau_round([0.1, 0.3, 0.45, 0.5, 0.49, 0.5]) == 3
    assert plateau_round([0.1, 0.49, 0.5], tol=0.02) == 1
    assert plateau_round([0.5, 0.5]) == 0


# -- runs ----------------------------------------------------------------------------

def test_top_popular_run_has_no_energy_and_flat_accuracy():
    res = run_experiment(desk_profile(**{"algorithm": "top_popular", "learning.global_rounds": 5}))
    assert all(row["energy_cum"] == 0.0 for row in res.metrics)
    assert len({row["top1_mean"] for row in res.metrics}) == 1


def test_cumulative_energy_non_decreasing(desk_runs):
    for algo in ("rawhfl", "hfedavg_m1", "hfedavg_m2", "hfedavg_ub"):
        cum = desk_runs(algo, 0).curve("energy_cum")
        assert np.all(np.diff(cum) >= 0)


def test_accuracies_are_probabilities(desk_runs):
    for row in desk_runs("rawhfl", 0).metrics:
        for m in (1, 5, 10):
            assert 0.0 <= row[f"top{m}_mean"] <= 1.0


def test_m2_not_below_m1(desk_runs):
    m1 = np.mean([desk_runs("hfedavg_m1", s).final["top1_mean"] for s in range(3)])
    m2 = np.mean([desk_runs("hfedavg_m2", s).final["top1_mean"] for s in range(3)])
    assert m2 >= m1


def test_outputs_written(tmp_path):
    cfg = desk_profile(**{"learning.global_rounds": 2})
    paths = run(cfg, tmp_path)
    header = paths["metrics.csv"].read_text().splitlines()[0].split(",")
    for col in ("k", "test_loss", "top1_mean", "top5_mean", "top10_mean", "energy_cum",
                "utility", "bound_total", "bound_wireless"):
        assert col in header
    assert paths["topm_summary.csv"].read_text().count("\n") == 4
    assert paths["energy_cdf.csv"].read_text().startswith("energy_j,cdf\n")


# -- CLI -------------------------------------------------------------------------------

def test_cli_run_and_bound(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("topology: {num_bs: 1, users_per_bs: 2}\ncatalog: {num_genres: 2, per_genre: 4}\n"
                   "learning: {global_rounds: 2, local_rounds: 2, edge_rounds: 2}\nplanner: {Z: 1}\n")
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--seed", "3", "--out", str(out)]) == 0
    assert (out / "metrics.csv").exists()
    assert main(["bound", "--config", str(cfg), str(out / "metrics.csv")]) == 0
    text = capsys.readouterr().out
    assert "total=" in text and "wireless=0.0" in text


def test_cli_solve(tmp_path, capsys):
    path = tmp_path / "inst.json"
    path.write_text(json.dumps(random_instance(0).to_dict()))
    assert main(["solve", str(path)]) == 0
    assert capsys.readouterr().out.startswith("k,e,bs,user,selected")


def test_cli_oracle(capsys):
    assert main(["oracle", "--instances", "3"]) == 0
    assert "3/3 within 5%" in capsys.readouterr().out


def test_cli_rejects_bad_config(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("planner: {Z: 99}\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "planner.Z" in capsys.readouterr().err
