import dataclasses
import math

import numpy as np
import pytest

from diplab import data
from diplab.errors import DomainError, RangeError, ShapeError
from diplab.model import (build_model, cosine_logits, cosine_logits_back, forward_image, forward_text,
                          predict, set_deep_prompts)
from diplab.train import batch_ce

from oracles import central_diff, rel_err


@pytest.fixture(scope="module")
def model():
    return build_model(0).with_classes(data.generate(4, 1, seed=0).class_embeddings)


@pytest.fixture
def micro(rng):
    m = build_model(seed=3, d_text=8, d_vis=8, m_layers=2, n_layers=2, tau=0.5)
    return m.with_classes(rng.normal(size=(3, 8)))


def test_text_feature_shape_and_determinism(model, rng):
    p = rng.normal(size=(4, 64))
    a, b = forward_text(model, p, 2), forward_text(model, p, 2)
    assert a.shape == (64,) and np.array_equal(a, b)


def test_text_golden_snapshot(model):
    # captured from the first build: seed-0 model, zero prompt, class 0
    f = forward_text(model, np.zeros((4, 64)), 0)
    assert f[:4] == pytest.approx([1.4147519514347076, -1.0583561143898155, -1.0405265525780345, -1.4000513327178445], rel=1e-12)
    assert np.linalg.norm(f) == pytest.approx(11.258851297641895, rel=1e-12)


def test_image_golden_snapshot(model):
    ds = data.generate(4, 1, seed=0)
    f = forward_image(model, ds.patches[0])
    assert f[:4] == pytest.approx([-0.7305552468993278, -0.041644398190499865, 3.2165997626700253, 0.43466827303237526], rel=1e-12)
    assert np.linalg.norm(f) == pytest.approx(12.789543555590084, rel=1e-12)
    assert np.array_equal(f, forward_image(model, ds.patches[0]))


def test_image_prompt_changes_output(model, rng):
    patches = rng.normal(size=(9, 64))
    plain = forward_image(model, patches)
    prompted = forward_image(model, patches, rng.normal(size=(4, 64)))
    assert not np.allclose(plain, prompted)


def test_shape_errors(model):
    with pytest.raises(ShapeError):
        forward_text(model, np.zeros((4, 63)), 0)
    with pytest.raises(ShapeError):
        forward_image(model, np.zeros((9, 10)))


def test_predict_single_class(rng):
    logits, label = predict(rng.normal(size=5), rng.normal(size=(1, 5)), 0.07)
    assert logits.probs.tolist() == [1.0] and label == 0


def test_predict_equidistant_is_uniform():
    fv = np.array([1.0, 0.0, 0.0])
    texts = np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 1.0], [1.0, -1.0, 0.0]])
    logits, label = predict(fv, texts, 0.07)
    assert np.allclose(logits.probs, 1 / 3, atol=1e-15)
    assert label == 0


def test_predict_softmax_arithmetic():
    logits, label = predict([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], 1.0)
    assert logits.probs[0] == pytest.approx(math.e / (math.e + 1), rel=1e-15)
    assert label == 0


def test_predict_errors():
    with pytest.raises(DomainError):
        predict([0.0, 0.0], [[1.0, 0.0]], 1.0)
    with pytest.raises(RangeError):
        predict([1.0, 0.0], [[1.0, 0.0]], 0.0)


def test_softmax_normalised_and_scale_invariant(rng):
    for _ in range(50):
        fv, texts = rng.normal(size=8), rng.normal(size=(6, 8))
        logits, _ = predict(fv, texts, 0.07)
        assert abs(logits.probs.sum() - 1) < 1e-12
        scaled, _ = predict(3.7 * fv, texts, 0.07)
        assert np.allclose(scaled.probs, logits.probs, rtol=1e-12, atol=0)


def test_deep_prompts_depth_one_is_shallow(model, rng):
    m = dataclasses.replace(model, prompt_depth=1)
    p = rng.normal(size=(4, 64))
    shallow = forward_text(m, p, 1)
    set_deep_prompts(m, [p])
    assert np.array_equal(forward_text(m, p, 1), shallow)


def test_deep_prompts_change_output(model, rng):
    m = dataclasses.replace(model, prompt_depth=2)
    p = rng.normal(size=(4, 64))
    set_deep_prompts(m, [p, np.zeros((4, 64))])
    zero_second = forward_text(m, p, 0)
    set_deep_prompts(m, [p, rng.normal(size=(4, 64))])
    assert not np.allclose(forward_text(m, p, 0), zero_second)
    with pytest.raises(ShapeError):
        set_deep_prompts(m, [p])


def test_prompt_depth_bound():
    with pytest.raises(RangeError):
        build_model(d_text=8, d_vis=8, m_layers=2, n_layers=2, prompt_depth=3)


def _loss_and_grads(m, text_prompts, image_prompts, patches, labels):
    ft, tc = m.text_features(text_prompts)
    fv, vc = m.image_features(patches, image_prompts)
    s, sc = cosine_logits(fv, ft, m.tau)
    loss, gs = batch_ce(s, labels)
    g_img, g_txt = cosine_logits_back(gs, sc)
    return loss, m.text_backward(g_txt, tc), m.image_backward(g_img, vc)


def test_prompt_gradients_match_finite_differences(micro, rng):
    m = dataclasses.replace(micro, prompt_depth=2)
    text = [rng.normal(size=(2, 8)), rng.normal(size=(2, 8))]
    image = [rng.normal(size=(2, 8))]
    patches = rng.normal(size=(5, 4, 8))
    labels = np.array([0, 1, 2, 1, 0])
    _, g_text, g_image = _loss_and_grads(m, text, image, patches, labels)
    for j in range(2):
        def f(x, j=j):
            prompts = list(text)
            prompts[j] = x
            return _loss_and_grads(m, prompts, image, patches, labels)[0]
        assert rel_err(g_text[j], central_diff(f, text[j], 1e-5)) < 1e-4
    fd = central_diff(lambda x: _loss_and_grads(m, text, [x], patches, labels)[0], image[0], 1e-5)
    assert rel_err(g_image[0], fd) < 1e-4


def test_weights_are_read_only(model):
    with pytest.raises(ValueError):
        model.text_blocks[0].wq[0, 0] = 1.0
