import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from densepose_kit.assign import AssignerConfig, initial_positives
from densepose_kit.core import LEVELS, GridLocation, SkeletonSpec, decode_refined, grid_locations
from densepose_kit.errors import InvalidConfig, NoPositives
from densepose_kit.sim import (
    AblationConfig,
    NoiseModel,
    PipelineConfig,
    SceneConfig,
    StrategyConfig,
    TrainerConfig,
    evaluate_predictions,
    generate_scene,
    run_refine_sweep,
    run_scoring_experiment,
    run_strategy_ablation,
    simulate_dense,
    simulate_predictions,
    toy_train,
)
from densepose_kit.sim.experiments import CSV_HEADER
from densepose_kit.sim.predict import sample_scores, scene_layout
from densepose_kit.sim.toytrain import lad_fit, lad_loss, lad_subgradient
from densepose_kit.oks import paired_oks

SPEC = SkeletonSpec.coco()
TINY = AblationConfig(n_trials=2, n_train_scenes=4, n_test_scenes=3, seed=3)


# -- scenes -------------------------------------------------------------------

def test_scene_deterministic():
    a, b = generate_scene(42), generate_scene(42)
    assert len(a.instances) == len(b.instances) > 0
    for x, y in zip(a.instances, b.instances):
        assert np.array_equal(x.pose.keypoints, y.pose.keypoints)
        assert np.array_equal(x.pose.visibility, y.pose.visibility)
    c = generate_scene(43)
    assert [i.pose.keypoints.tolist() for i in c.instances] != [i.pose.keypoints.tolist() for i in a.instances]


def test_scene_tuple_seed_is_a_distinct_stream():
    assert generate_scene((5, 0)).instances[0].pose.keypoints.tolist() != \
        generate_scene((5, 1)).instances[0].pose.keypoints.tolist()


def test_empty_scene():
    s = generate_scene(0, SceneConfig(count_min=0, count_max=0))
    assert s.instances == []


def test_scene_config_validation():
    for kw in ({"count_min": 3, "count_max": 1}, {"scale_max": 900.0}, {"p_labeled": 0.0},
               {"scale_min": 0.0}, {"width_range": (2.0, 1.0)}):
        with pytest.raises(InvalidConfig):
            SceneConfig(**kw)


def test_scale_bounds_over_100_seeds():
    cfg = SceneConfig()
    heights = [h for seed in range(100) for h in generate_scene(seed, cfg).heights]
    assert len(heights) > 100
    assert min(heights) >= cfg.scale_min and max(heights) <= cfg.scale_max
    # Log-uniform sampling covers both ends of the range.
    logs = np.log(heights)
    lo, hi = math.log(cfg.scale_min), math.log(cfg.scale_max)
    assert logs.min() < lo + 0.2 * (hi - lo) and logs.max() > hi - 0.2 * (hi - lo)


@settings(max_examples=30)
@given(st.integers(0, 10 ** 6))
def test_scene_invariants(seed):
    s = generate_scene(seed)
    for inst in s.instances:
        assert inst.pose.labeled.any()
        kp = inst.pose.keypoints
        assert kp.min() >= 0 and kp[:, 0].max() <= s.image_w and kp[:, 1].max() <= s.image_h


# -- simulated predictions ----------------------------------------------------

def test_noiseless_decodes_exactly():
    scene = generate_scene(1)
    hyps = simulate_predictions(scene, NoiseModel.noiseless(), 0)
    lay = scene_layout(scene, AssignerConfig())
    n = 0
    for level in LEVELS:
        for h in hyps[level]:
            owner = lay.owner[(lay.level == level) & (lay.index == h.location.row_major_index(scene.image_w))][0]
            if owner >= 0:
                n += 1
                assert np.array_equal(decode_refined(h).keypoints, scene.instances[owner].pose.keypoints)
    assert n > 0


@pytest.mark.parametrize("mode", ["fused", "cls", "gt-oks"])
def test_noiseless_pipeline_is_perfect(mode):
    scenes = [generate_scene(s) for s in range(3)]
    denses = [simulate_dense(sc, NoiseModel.noiseless(), i) for i, sc in enumerate(scenes)]
    r = evaluate_predictions(scenes, denses, mode, PipelineConfig(), SPEC)
    assert r.ap == 1.0 and r.ar == 1.0


def test_center_locations_are_better_than_edges():
    noise = NoiseModel(center_slope=0.25)
    centre, edge = [], []
    for seed in range(60):
        scene = generate_scene(seed)
        d = simulate_dense(scene, noise, (seed, 9))
        lay = d.layout
        oks = paired_oks(d.initial, lay.gt, lay.labeled, lay.s2, SPEC.kappa_array)
        fg = lay.foreground
        rel = np.linalg.norm(lay.centers - lay.box_center, axis=1) / np.sqrt(lay.s2)
        centre.extend(oks[fg & lay.in_shrunk])
        edge.extend(oks[fg & ~lay.in_shrunk & (rel > 0.5)])
    assert len(centre) + len(edge) >= 1000
    assert np.mean(centre) >= np.mean(edge)
    # With no distance term the gap disappears up to sampling noise.
    flat = NoiseModel(center_slope=0.0, base_sigma=3.0)
    c0, e0 = [], []
    for seed in range(60):
        d = simulate_dense(generate_scene(seed), flat, (seed, 9))
        lay = d.layout
        oks = paired_oks(d.initial, lay.gt, lay.labeled, lay.s2, SPEC.kappa_array)
        rel = np.linalg.norm(lay.centers - lay.box_center, axis=1) / np.sqrt(lay.s2)
        c0.extend(oks[lay.foreground & lay.in_shrunk])
        e0.extend(oks[lay.foreground & ~lay.in_shrunk & (rel > 0.5)])
    assert np.mean(centre) - np.mean(edge) > np.mean(c0) - np.mean(e0)


def test_zero_score_corr_is_uncorrelated():
    rng = np.random.default_rng(7)
    q = rng.uniform(0.0, 1.0, 10_000)
    cls, pose = sample_scores(np.ones(10_000, bool), q, NoiseModel(score_corr=0.0), rng)
    assert abs(np.corrcoef(cls, q)[0, 1]) <= 0.1
    cls_hi, _ = sample_scores(np.ones(10_000, bool), q, NoiseModel(score_corr=0.9), np.random.default_rng(7))
    assert np.corrcoef(cls_hi, q)[0, 1] > 0.5
    assert np.corrcoef(pose, q)[0, 1] > 0.9


@settings(max_examples=20)
@given(st.integers(0, 10 ** 6), st.floats(0, 5), st.floats(0, 1), st.floats(0, 1))
def test_outputs_finite_and_scores_in_range(seed, sigma, slope, corr):
    noise = NoiseModel(base_sigma=sigma, center_slope=slope, score_corr=corr)
    d = simulate_dense(generate_scene(seed), noise, seed)
    assert np.all(np.isfinite(d.offsets1)) and np.all(np.isfinite(d.offsets2))
    for arr in (d.cls_score, d.pose_score, d.quality):
        assert np.all((arr >= 0) & (arr <= 1))


def test_simulation_deterministic():
    scene = generate_scene(5)
    a, b = simulate_dense(scene, NoiseModel(), (1, 2)), simulate_dense(scene, NoiseModel(), (1, 2))
    assert np.array_equal(a.offsets1, b.offsets1) and np.array_equal(a.cls_score, b.cls_score)


def test_noise_model_validation():
    with pytest.raises(InvalidConfig):
        NoiseModel(base_sigma=-1)
    with pytest.raises(InvalidConfig):
        NoiseModel(refine_gain=1.5)


@settings(max_examples=20)
@given(st.integers(0, 10 ** 6))
def test_layout_shrunk_matches_assign_and_subset_of_full(seed):
    scene = generate_scene(seed)
    cfg = AssignerConfig()
    lay = scene_layout(scene, cfg)
    locs = [GridLocation(int(l), int(x), int(y)) for l, x, y in zip(lay.level, lay.ix, lay.iy)]
    expect = initial_positives(locs, scene.instances, cfg)
    got = {(locs[n], scene.instances[lay.owner[n]].id) for n in np.flatnonzero(lay.foreground & lay.in_shrunk)}
    assert got == expect
    full = initial_positives(locs, scene.instances, AssignerConfig(positive_rule="full-box"))
    assert len(got) <= len(full) == int(lay.foreground.sum())


# -- toy trainer --------------------------------------------------------------

def test_lad_realizable():
    rng = np.random.default_rng(0)
    X = np.concatenate([rng.normal(0, 1, (4, 200, 2)), np.ones((4, 200, 1))], -1)
    theta = rng.normal(0, 1, (4, 3))
    y = np.einsum("pnf,pf->pn", X, theta)
    best, loss = lad_fit(X, y, np.ones((4, 200)))
    assert np.all(loss < 1e-3)
    assert np.abs(best - theta).max() < 1e-2


def test_lad_subgradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    X = rng.normal(0, 1, (3, 50, 4))
    y = rng.normal(0, 1, (3, 50))
    mask = (rng.random((3, 50)) < 0.8).astype(float)
    theta = rng.normal(0, 1, (3, 4))
    g = lad_subgradient(X, y, mask, theta)
    h = 1e-7
    for j in range(4):
        e = np.zeros_like(theta)
        e[:, j] = h
        fd = (lad_loss(X, y, mask, theta + e) - lad_loss(X, y, mask, theta - e)) / (2 * h)
        assert np.allclose(fd, g[:, j], atol=1e-6)
    # Descent direction: a small step against the subgradient lowers the loss.
    step = 1e-3 * g / np.linalg.norm(g, axis=1, keepdims=True)
    assert np.all(lad_loss(X, y, mask, theta - step) < lad_loss(X, y, mask, theta))


def test_toy_train_realizable_case():
    scenes = [generate_scene(i) for i in range(5)]
    trainer = TrainerConfig(iters=1000, step_decay=0.99, refine_obs_noise=0.0)
    model = toy_train(scenes, StrategyConfig(), trainer, NoiseModel.noiseless(), seed=1)
    assert model.train_loss1 < 1e-3 and model.train_loss2 < 1e-3


def test_toy_train_deterministic_and_counts():
    scenes = [generate_scene(i) for i in range(4)]
    a = toy_train(scenes, StrategyConfig(), seed=(1, 2))
    b = toy_train(scenes, StrategyConfig(), seed=(1, 2))
    for level in LEVELS:
        assert np.array_equal(a.stage1[level], b.stage1[level])
        assert np.array_equal(a.stage2[level], b.stage2[level])
    full = toy_train(scenes, StrategyConfig(positive_rule="full-box"), seed=(1, 2))
    assert 0 < a.n_positives1 <= full.n_positives1
    sa, sb = a.predict(scenes[0], 5), b.predict(scenes[0], 5)
    assert np.array_equal(sa.refined, sb.refined)


def test_toy_train_errors():
    with pytest.raises(InvalidConfig):
        toy_train([], StrategyConfig())
    empty = [generate_scene(0, SceneConfig(count_min=0, count_max=0))]
    with pytest.raises(NoPositives):
        toy_train(empty, StrategyConfig())
    # An unreachable refinement threshold still hands back the first stage.
    with pytest.raises(NoPositives) as info:
        toy_train([generate_scene(1)], StrategyConfig(refine_threshold=1.0), TrainerConfig(iters=20))
    assert info.value.model is not None and info.value.model.stage2 is None


def test_strategy_validation():
    for kw in ({"positive_rule": "x"}, {"refine_rule": "x"}, {"refine_threshold": 2.0}, {"score_mode": "x"}):
        with pytest.raises(InvalidConfig):
            StrategyConfig(**kw)
    assert StrategyConfig().label == "shrunk-box/oks>=0.5/fused"


# -- experiments --------------------------------------------------------------

def test_scoring_noiseless_modes_equal():
    scenes = [generate_scene(s) for s in range(3)]
    res = run_scoring_experiment(scenes, NoiseModel.noiseless(), seed=0)
    assert {m: r.ap for m, r in res.items()} == {"fused": 1.0, "cls": 1.0, "gt-oks": 1.0}


def test_empty_strategy_list_header_only():
    from dataclasses import replace
    report = run_strategy_ablation(replace(TINY, strategies=()))
    assert report.to_csv() == ",".join(CSV_HEADER) + "\n"


def test_ablation_reproducible_and_parallel_safe():
    a = run_strategy_ablation(TINY)
    b = run_strategy_ablation(TINY)
    c = run_strategy_ablation(TINY, jobs=2)
    assert a.to_csv() == b.to_csv() == c.to_csv()
    lines = a.to_csv().strip().split("\n")
    assert lines[0].split(",") == list(CSV_HEADER)
    assert [ln.split(",")[0] for ln in lines[1:]] == ["baseline", "baseline*", "+refine", "+refine*", "+PSM"]
    d = a.to_dict()
    assert len(d["rows"]) == 5 and len(d["rows"][0]["trial_ap"]) == 2


def test_refine_sweep_rows():
    report = run_refine_sweep(TINY, thresholds=(0.0, 0.5))
    assert [s.refine_threshold for s in report.config.strategies] == [0.0, 0.5]
    assert len(report.rows) == 2
