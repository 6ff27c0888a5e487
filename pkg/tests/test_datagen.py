import numpy as np
import pytest

from comgnn.datagen import (
    CONSIDER,
    SynthDiffusionSpec,
    SynthRankingSpec,
    diffusion_step,
    gen_diffusion_task,
    gen_ranking_task,
    load_diffusion_task,
    load_ranking_task,
    persistence,
    planted_score,
    save_diffusion_task,
    save_ranking_task,
    seasonal_naive,
    targets,
)
from comgnn.hetgraph import load_graph
from comgnn.training import forecast_metrics, map_metric, rank_candidates


def small_ranking(**kw):
    return SynthRankingSpec(**{**dict(n_routes=20, mu=2, candidate_count=10), **kw})


def small_diffusion(**kw):
    return SynthDiffusionSpec(**{**dict(n_nodes=12, steps_per_day=8, n_weeks=3), **kw})


def _files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_ranking_bundles_are_deterministic(tmp_path):
    save_ranking_task(gen_ranking_task(small_ranking(seed=4)), tmp_path / "a")
    save_ranking_task(gen_ranking_task(small_ranking(seed=4)), tmp_path / "b")
    save_ranking_task(gen_ranking_task(small_ranking(seed=5)), tmp_path / "c")
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    assert _files(tmp_path / "a") != _files(tmp_path / "c")


def test_ranking_roundtrip(tmp_path):
    task = gen_ranking_task(small_ranking(seed=2))
    save_ranking_task(task, tmp_path)
    g, inst = load_ranking_task(tmp_path)
    g0, inst0 = task.union()
    assert g.structurally_equal(g0)
    assert len(inst) == len(inst0)
    for a, b in zip(inst, inst0):
        assert a.split == b.split and a.target == b.target
        assert np.array_equal(a.candidates, b.candidates) and np.array_equal(a.labels, b.labels)


def test_mu_zero_graph_has_only_driver_target_and_candidates():
    task = gen_ranking_task(small_ranking(mu=0))
    g = task.graphs[0]
    counts = np.bincount(g.node_type_of, minlength=3)
    assert counts.tolist() == [1, 1, 10]
    names = {g.edge_types[int(r)].name for r in g.edge_type_of}
    assert names == {"create", "be_created_by", CONSIDER}


def test_planted_rule_scores_perfectly():
    task = gen_ranking_task(small_ranking(seed=7))
    pairs = []
    for g, inst in zip(task.graphs, task.instances):
        cons = g.edge_attrs[CONSIDER][g.edge_local[inst.candidates]]
        orders = g.node_attrs["order"][g.node_local[g.dst[inst.candidates]]]
        route = g.node_attrs["route"][g.node_local[inst.target]]
        s = planted_score(route, orders, cons)
        pairs.append((rank_candidates(s, inst.candidates), inst.candidates[inst.labels == 1]))
    assert map_metric(pairs) == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_class_balance(seed):
    task = gen_ranking_task(SynthRankingSpec(seed=seed))
    frac = np.mean(np.concatenate([i.labels for i in task.instances]))
    assert abs(frac - 0.2) <= 0.05


def test_splits_are_ordered_70_10_20():
    task = gen_ranking_task(small_ranking())
    splits = [i.split for i in task.instances]
    assert splits == ["train"] * 14 + ["valid"] * 2 + ["test"] * 4


def test_generated_graphs_reload_through_validation(tmp_path):
    task = gen_diffusion_task(small_diffusion())
    save_diffusion_task(task, tmp_path)
    assert load_graph(tmp_path / "graph").structurally_equal(task.graph)


@pytest.mark.parametrize("kw", [dict(mu=-1), dict(candidate_count=1)])
def test_ranking_spec_validation(kw):
    with pytest.raises(ValueError):
        SynthRankingSpec(**kw)


@pytest.mark.parametrize("kw", [dict(relation_mix=(0.5, 0.5, 0.5)), dict(n_weeks=1),
                                dict(relation_mix=(1.2, -0.2, 0.0))])
def test_diffusion_spec_validation(kw):
    with pytest.raises(ValueError):
        SynthDiffusionSpec(**kw)


def test_diffusion_is_deterministic():
    a = gen_diffusion_task(small_diffusion(seed=3))
    b = gen_diffusion_task(small_diffusion(seed=3))
    assert np.array_equal(a.series.node_signal, b.series.node_signal)
    assert a.graph.structurally_equal(b.graph)


def test_noiseless_uncoupled_signal_is_the_periodic_baseline():
    task = gen_diffusion_task(small_diffusion(rho=0.0, noise=0.0))
    x = task.series.node_signal[:, :, 0]
    assert np.array_equal(x, task.baseline)
    W = task.spec.week_steps
    origins = np.arange(W, len(x) - 3)
    mape, _, _ = forecast_metrics(seasonal_naive(task.series, origins, 3, W), targets(task.series, origins, 3))
    assert mape < 1e-12


def test_noiseless_series_sits_exactly_on_the_baseline():
    task = gen_diffusion_task(small_diffusion(noise=0.0, seed=5))
    assert np.array_equal(task.series.node_signal[:, :, 0], task.baseline)


@pytest.mark.parametrize("rho", [0.0, 0.3, 1.0])
def test_diffusion_step_matches_loop_oracle(rho):
    spec = small_diffusion(rho=rho)
    task = gen_diffusion_task(spec)
    d = np.random.default_rng(0).normal(size=spec.n_nodes)
    M = task.mixing
    want = np.zeros_like(d)
    for i in range(len(d)):
        mixed = sum(M[i, j] * d[j] for j in range(len(d)))
        want[i] = spec.damping * ((1 - rho) * d[i] + rho * mixed)
    assert np.allclose(diffusion_step(spec, M, d), want, atol=1e-14)
    # k noiseless steps without coupling shrink the deviation geometrically
    if rho == 0.0:
        x = d
        for _ in range(5):
            x = diffusion_step(spec, M, x)
        assert np.allclose(x, spec.damping ** 5 * d, atol=1e-14)


def test_one_step_residual_has_the_planted_noise_scale():
    spec = small_diffusion(noise=0.05, seed=1)
    task = gen_diffusion_task(spec)
    x = task.series.node_signal[:, :, 0]
    dev = x - task.baseline
    resid = dev[1:] - np.array([diffusion_step(spec, task.mixing, d) for d in dev[:-1]])
    free_flow = task.graph.node_attrs["segment"][:, 0] * 60.0
    z = resid / (spec.noise * 0.25 * free_flow)
    assert abs(z.std() - 1.0) < 0.05 and abs(z.mean()) < 0.05


def test_deviation_is_stationary_after_burn_in():
    # the spread must not drift between halves; single-seed means are too autocorrelated to compare
    ratios, shifts = [], []
    for seed in range(6):
        task = gen_diffusion_task(small_diffusion(seed=seed, n_weeks=4))
        dev = task.series.node_signal[:, :, 0] - task.baseline
        half = len(dev) // 2
        ratios.append(dev[half:].std() / dev[:half].std())
        shifts.append((dev[half:].mean() - dev[:half].mean()) / dev.std())
    assert 0.67 < np.mean(ratios) < 1.5
    assert abs(np.mean(shifts)) < 3 * np.std(shifts) / np.sqrt(len(shifts)) + 0.05


def test_mixing_operator_is_row_stochastic():
    task = gen_diffusion_task(small_diffusion())
    M = task.mixing
    rows = M.sum(axis=1)
    assert np.all(M >= 0)
    assert np.allclose(rows[rows > 0], 1.0, atol=1e-12)


def test_diffusion_splits_are_whole_weeks():
    task = gen_diffusion_task(small_diffusion(n_weeks=4))
    W = task.spec.week_steps
    assert task.splits["train"][0] == W and len(task.splits["train"]) == W
    assert task.splits["valid"][0] == 2 * W and task.splits["test"][-1] == 4 * W - 1


def test_persistence_repeats_last_value():
    task = gen_diffusion_task(small_diffusion())
    p = persistence(task.series, [20, 21], 3)
    assert p.shape == (12, 2, 3)
    assert np.array_equal(p[:, 0, 2], task.series.node_signal[19, :, 0])


def test_diffusion_roundtrip(tmp_path):
    task = gen_diffusion_task(small_diffusion(seed=6))
    save_diffusion_task(task, tmp_path)
    back = load_diffusion_task(tmp_path)
    assert np.array_equal(back.series.node_signal, task.series.node_signal)
    assert np.array_equal(back.series.edge_signal, task.series.edge_signal)
    assert {k: v.tolist() for k, v in back.splits.items()} == {k: v.tolist() for k, v in task.splits.items()}
