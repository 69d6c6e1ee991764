import dataclasses
import math

import numpy as np
import pytest

from diplab import data, train
from diplab.errors import ConfigError, RangeError, ShapeError
from diplab.linalg import svd_thin
from diplab.metrics import information_density
from diplab.model import Logits, build_model
from diplab.prompt import DipPrompt, FullRankPrompt, dropout_scale
from diplab.train import TrainConfig, TrainTask

from oracles import central_diff, rel_err


# objective arithmetic

def test_ce_perfect_prediction():
    assert train.loss_ce(Logits(np.array([800.0, 0.0, 0.0])), 0) == 0.0


def test_ce_uniform():
    assert train.loss_ce(np.zeros(4), 2) == pytest.approx(math.log(4), abs=1e-12)
    assert round(train.loss_ce(np.zeros(4), 2), 4) == 1.3863


def test_ce_two_class_cosines():
    # cosines (1, 0) at temperature 1
    expected = -math.log(math.e / (math.e + 1))
    assert train.loss_ce(np.array([1.0, 0.0]), 0) == pytest.approx(expected, abs=1e-15)
    assert round(expected, 4) == 0.3133


def test_ce_bad_label():
    with pytest.raises(RangeError):
        train.loss_ce(np.zeros(3), 3)


def test_batch_ce_gradient(rng):
    s = rng.normal(size=(5, 4))
    y = rng.integers(0, 4, size=5)
    _, g = train.batch_ce(s, y)
    fd = central_diff(lambda z: train.batch_ce(z, y)[0], s)
    assert rel_err(g, fd) < 1e-7


def test_alg1_forced_arithmetic():
    p = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])  # ID1 = 0.5
    assert train.loss_alg1(1.0, p, 1, 0.1) == pytest.approx(0.95, abs=1e-15)
    assert train.loss_alg1(1.0, p, 1, 0.0) == 1.0


def test_alg2_forced_arithmetic():
    p = np.zeros((3, 5))
    p[0, 0], p[1, 1], p[2, 2] = 4.0, 2.0, 1.0
    assert train.loss_alg2(1.0, p, 2, 0.1) == pytest.approx(1.7, abs=1e-14)
    assert train.loss_alg2(1.0, p, 2, 0.0) == 1.0


def test_negative_lambda_rejected():
    p = np.eye(2, 3)
    for fn in (train.loss_alg1, train.loss_alg2):
        with pytest.raises(RangeError):
            fn(1.0, p, 1, -0.1)


def test_alg2_k_out_of_range():
    with pytest.raises(RangeError):
        train.alg2_term(np.eye(2, 3), 3, 0.1)


@pytest.mark.parametrize("seed", range(10))
def test_regularizer_gradients(seed):
    r = np.random.default_rng(seed)
    p = r.normal(size=(3, 6))
    for term in (train.alg1_term, train.alg2_term):
        for k in (1, 2):
            _, g = term(p, k, 0.1)
            fd = central_diff(lambda q: term(q, k, 0.1)[0], p)
            assert rel_err(g, fd) < 1e-6


# optimizer and schedule

def test_sgd_examples():
    p = np.array([1.0])
    train.sgd_step([p], [np.array([1.0])], 0.1)
    assert p[0] == pytest.approx(0.9, abs=1e-15)
    q = np.array([1.0])
    train.sgd_step([q], [np.array([0.0])], 0.1, weight_decay=0.1)
    assert q[0] == pytest.approx(0.99, abs=1e-15)


def test_sgd_zero_lr_is_noop(rng):
    p = rng.normal(size=(3, 4))
    before = p.copy()
    train.sgd_step([p], [rng.normal(size=(3, 4))], 0.0, weight_decay=0.5)
    assert np.array_equal(p, before)


def test_sgd_shape_mismatch():
    with pytest.raises(ShapeError):
        train.sgd_step([np.zeros(3)], [np.zeros(4)], 0.1)
    with pytest.raises(ShapeError):
        train.sgd_step([np.zeros(3)], [], 0.1)


def test_lr_schedule():
    assert train.lr_schedule(0, 11, 0.5, 0.01) == 0.01
    assert train.lr_schedule(1, 11, 0.5, 0.01) == 0.5
    assert train.lr_schedule(6, 11, 0.5, 0.01) == pytest.approx(0.25, abs=1e-15)
    lrs = [train.lr_schedule(e, 11, 0.5, 0.01) for e in range(1, 11)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    with pytest.raises(RangeError):
        train.lr_schedule(11, 11, 0.5, 0.01)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(objective="ADAM")
    with pytest.raises(ConfigError):
        TrainConfig(lr=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(objective="ALG1", lam=0.0)


# end-to-end gradients on a micro-model (d=8, n=2, C=3)

def _micro(seed, objective, placement="text"):
    model = build_model(seed=seed, d_text=8, d_vis=8, m_layers=2, n_layers=2)
    ds = data.generate(3, 2, seed=seed, d_vis=8, n_patches=3)
    model = model.with_classes(ds.class_embeddings)
    cfg = TrainConfig(objective=objective, n_ctx=2, seed=seed, placement=placement,
                      init="template" if placement == "text" else "zero",
                      gaussian_sigma=0.3, dropout_p=0.2, k_order=1 + seed % 2)
    task = TrainTask(cfg, model, ds, np.arange(6), [0, 1, 2], [])
    prompts = train.initial_prompts(cfg, model, [0, 1, 2], np.random.default_rng(seed))
    r = np.random.default_rng(seed + 1000)
    if objective != "ALG3_DIP":
        # move off the template so every regularizer sees a generic spectrum
        prompts = [FullRankPrompt(p.p + r.normal(size=p.p.shape)) for p in prompts]
    scales = [dropout_scale(p.p_init.shape, p.dropout_p, r) if isinstance(p, DipPrompt) else None
              for p in prompts]
    x = task.train_feats if task.text_side else task.train_x
    return cfg, task, prompts, x, task.train_y, scales


@pytest.mark.parametrize("objective", train.OBJECTIVES)
@pytest.mark.parametrize("seed", range(20))
def test_total_gradient_matches_finite_differences(objective, seed):
    cfg, task, prompts, x, y, scales = _micro(seed, objective)
    _, grads, skipped = train.objective_and_grads(cfg, task, prompts, x, y, scales)
    assert skipped == 0
    for arr, g in zip(prompts[0].params(), grads[0]):
        def f(v, arr=arr):
            saved = arr.copy()
            arr[...] = v
            try:
                return train.objective_and_grads(cfg, task, prompts, x, y, scales)[0]
            finally:
                arr[...] = saved
        assert rel_err(g, central_diff(f, arr.copy())) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_image_side_gradient(seed):
    cfg, task, prompts, x, y, scales = _micro(seed, "ALG3_DIP", placement="image")
    _, grads, _ = train.objective_and_grads(cfg, task, prompts, x, y, scales)
    for arr, g in zip(prompts[0].params(), grads[0]):
        def f(v, arr=arr):
            saved = arr.copy()
            arr[...] = v
            try:
                return train.objective_and_grads(cfg, task, prompts, x, y, scales)[0]
            finally:
                arr[...] = saved
        assert rel_err(g, central_diff(f, arr.copy())) < 1e-4


# protocol invariants on a small task

SMALL = dict(epochs=4, shots=4)


@pytest.fixture(scope="module")
def small():
    ds = data.generate(4, 4, seed=3, d_vis=16, test_per_class=5)
    model = build_model(seed=3, d_text=16, d_vis=16)
    return ds, model


def test_freeze_discipline(small):
    ds, model = small
    h = model.weights_hash()
    dip = train.run_base_to_new(TrainConfig(**SMALL), ds, model)
    full = train.run_base_to_new(TrainConfig(objective="CE_FULLRANK", **SMALL), ds, model)
    assert model.weights_hash() == h
    p = dip.prompts[0]
    assert p.num_trainable == p.r * (p.n + p.d)
    assert np.array_equal(p.p_init, train.template_prompt(4, 16, 0))
    assert not p.p_init.flags.writeable
    init = train.template_prompt(4, 16, 0)
    assert np.all(full.prompts[0].p != init)


def test_records_well_formed(small):
    ds, model = small
    for obj in train.OBJECTIVES:
        res = train.run_base_to_new(TrainConfig(objective=obj, **SMALL), ds, model)
        assert [r.iter for r in res.records][0] == 0
        assert len(res.records) == SMALL["epochs"] + 1
        for r in res.records:
            assert r.id1 <= r.id2 <= 1.0
            assert np.all(np.diff(r.sigma) <= 0)
            assert 0 <= r.base_acc <= 100 and 0 <= r.new_acc <= 100


def test_determinism(small):
    ds, model = small
    a = train.run_base_to_new(TrainConfig(**SMALL), ds, model)
    b = train.run_base_to_new(TrainConfig(**SMALL), ds, model)
    assert len(a.records) == len(b.records)
    for ra, rb in zip(a.records, b.records):
        for f in dataclasses.fields(ra):
            assert np.array_equal(getattr(ra, f.name), getattr(rb, f.name), equal_nan=True)
    assert a.final == b.final
    for pa, pb in zip(a.prompts, b.prompts):
        assert all(np.array_equal(x, y) for x, y in zip(pa.params(), pb.params()))


def test_zero_init_dip_keeps_full_density(small):
    ds, model = small
    for rank in (1, 2):
        cfg = TrainConfig(init="zero", rank=rank, log_every_iter=True, **SMALL)
        res = train.run_base_to_new(cfg, ds, model)
        for r in res.records:
            assert abs(information_density(r.sigma, rank) - 1.0) <= 1e-10


def test_zero_epochs_is_zero_shot(small):
    ds, model = small
    res = train.run_base_to_new(TrainConfig(epochs=0, shots=4), ds, model)
    m = model.with_classes(ds.class_embeddings)
    split = data.split_base_new(ds, 0)
    p = train.template_prompt(4, 16, 0)
    feats, _ = m.image_features(ds.test_patches)
    accs = []
    for classes in (split.base_classes, split.new_classes):
        text, _ = m.text_features([p], list(classes))
        mask = np.isin(ds.test_labels, classes)
        f = feats[mask] / np.linalg.norm(feats[mask], axis=1, keepdims=True)
        t = text / np.linalg.norm(text, axis=1, keepdims=True)
        pred = np.asarray(classes)[np.argmax(f @ t.T, axis=1)]
        accs.append(100.0 * np.mean(pred == ds.test_labels[mask]))
    assert len(res.records) == 1
    assert res.final["base_acc"] == pytest.approx(accs[0], abs=1e-12)
    assert res.final["new_acc"] == pytest.approx(accs[1], abs=1e-12)


def test_separable_task_reaches_full_base_accuracy():
    ds = data.generate(8, 16, noise_sigma=0.0, seed=11, test_per_class=10)
    model = build_model(seed=11)
    for obj in ("CE_FULLRANK", "ALG3_DIP"):
        res = train.run_base_to_new(TrainConfig(objective=obj, epochs=10), ds, model)
        assert res.final["base_acc"] == 100.0


def test_param_counts_for_clip_width():
    model = build_model(seed=0, d_text=512, d_vis=16, m_layers=1, n_layers=1)
    ds = data.generate(2, 1, seed=0, d_vis=16, d_text=512)
    m = model.with_classes(ds.class_embeddings)
    counts = {}
    for obj in ("CE_FULLRANK", "ALG3_DIP"):
        prompts = train.initial_prompts(TrainConfig(objective=obj), m, [0, 1], np.random.default_rng(0))
        counts[obj] = train.param_count(prompts)
    assert counts == {"CE_FULLRANK": 2048, "ALG3_DIP": 516}


def test_final_summary_fields(small):
    ds, model = small
    res = train.run_base_to_new(TrainConfig(**SMALL), ds, model)
    f = res.final
    assert f["param_count"] == 20
    assert f["harmonic_mean"] == pytest.approx(
        2 * f["base_acc"] * f["new_acc"] / (f["base_acc"] + f["new_acc"]), abs=1e-12)
    assert f["spearman_from_iter"] == 2  # 8 base images, batch 8: one iteration per epoch


# few-shot and ablations

def test_fewshot_table_shape_and_determinism(small):
    ds, model = small
    cfg = TrainConfig(epochs=2)
    rows = train.run_fewshot(cfg, ds, [1, 2, 4], model)
    assert [r["shots"] for r in rows] == [1, 2, 4]
    assert all(0 <= r["accuracy"] <= 100 and r["params"] == 20 for r in rows)
    assert train.run_fewshot(cfg, ds, [1, 2, 4], model) == rows


def test_fewshot_exhaustive_equals_full_run(small):
    ds, model = small
    cfg = TrainConfig(epochs=2)
    [row] = train.run_fewshot(cfg, ds, [4], model)
    full = train.run_all_classes(cfg.replace(shots=4), ds, model)
    assert row["accuracy"] == full.final["base_acc"]


def test_fewshot_infeasible(small):
    ds, model = small
    with pytest.raises(RangeError):
        train.run_fewshot(TrainConfig(epochs=1), ds, [5], model)


def test_ablation_rank_params():
    model = build_model(seed=0, d_text=512, d_vis=16, m_layers=1, n_layers=1)
    ds = data.generate(4, 2, seed=0, d_vis=16, d_text=512, test_per_class=1)
    rows = train.run_ablation("rank", [1, 2, 3], TrainConfig(epochs=1, shots=2), ds, model)
    assert [r["params"] for r in rows] == [516, 1032, 1548]
    assert all(set(r) == {"axis", "value", "params", "base", "new", "H"} for r in rows)


def test_ablation_depth_six():
    model = build_model(seed=0, d_text=512, d_vis=16, m_layers=6, n_layers=1)
    ds = data.generate(4, 2, seed=0, d_vis=16, d_text=512, test_per_class=1)
    [row] = train.run_ablation("depth", [6], TrainConfig(epochs=1, shots=2), ds, model)
    assert row["params"] == 3096


def test_ablation_placement_two_rows(small):
    ds, model = small
    rows = train.run_ablation("placement", ["text", "image"], TrainConfig(epochs=1, shots=2), ds, model)
    assert [r["value"] for r in rows] == ["text", "image"]
    assert [r["params"] for r in rows] == [20, 20]


def test_ablation_invalid_values(small):
    ds, model = small
    base = TrainConfig(epochs=1)
    with pytest.raises(RangeError):
        train.run_ablation("width", [1], base, ds, model)
    with pytest.raises(RangeError):
        train.run_ablation("rank", [0], base, ds, model)
    with pytest.raises(RangeError):
        train.run_ablation("placement", ["text"], base, ds, model)
    with pytest.raises(RangeError):
        train.run_ablation("dropout", [1.0], base, ds, model)


def test_depth_beyond_model_rejected(small):
    ds, model = small
    with pytest.raises(ConfigError):
        train.run_base_to_new(TrainConfig(prompt_depth=3, epochs=1, shots=4), ds, model)


def test_merged_spectrum_logged(small):
    ds, model = small
    res = train.run_base_to_new(TrainConfig(**SMALL), ds, model)
    from diplab.prompt import merge
    sigma = svd_thin(merge(res.prompts[0])).sigma
    assert np.array_equal(res.records[-1].sigma, sigma)
