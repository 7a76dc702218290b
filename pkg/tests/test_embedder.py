"""Hand-written embedder: forward shapes, gradients, margin loss, Adam."""

import numpy as np
import pytest

from specwav.embedder import (AdamHyper, EmbedderConfig, ModelError, aam_loss,
                              adam_init, adam_step, attentive_stats_pool,
                              backward, check_param_shapes, forward,
                              init_params, loss_and_grads, loss_only)

from oracles import numeric_gradient

TINY = EmbedderConfig(input_dim=4, n_classes=3, channels=5,
                      tdnn_layers=((3, 1), (3, 2)), attn_hidden=4,
                      embedding_dim=6)


def _tiny_setup(seed, frames=12):
    rng = np.random.default_rng(seed)
    params = init_params(TINY, rng)
    features = rng.normal(size=(frames, TINY.input_dim))
    return params, features


def test_receptive_field():
    assert TINY.receptive_field == 7
    default = EmbedderConfig(input_dim=40, n_classes=8)
    assert default.tdnn_layers == ((5, 1), (3, 2), (3, 3))
    assert default.receptive_field == 15


@pytest.mark.parametrize("kwargs", [
    {"input_dim": 0},
    {"n_classes": 0},
    {"channels": 0},
    {"tdnn_layers": ()},
    {"tdnn_layers": ((4, 1),)},
    {"tdnn_layers": ((3, 0),)},
    {"aam_margin": 2.0},
    {"aam_margin": -0.1},
    {"aam_scale": 0.0},
])
def test_config_validation(kwargs):
    with pytest.raises(ModelError):
        EmbedderConfig(**{"input_dim": 4, "n_classes": 3, **kwargs})


def test_init_params_shapes_pass_checks():
    params, _ = _tiny_setup(0)
    check_param_shapes(params, TINY)
    assert params["tdnn0.weight"].shape == (5, 4, 3)
    assert params["proj.weight"].shape == (6, 10)
    assert params["classifier.weight"].shape == (3, 6)


def test_check_param_shapes_rejects_drift():
    params, _ = _tiny_setup(0)
    extra = dict(params, rogue=np.zeros(3))
    with pytest.raises(ModelError, match="names mismatch"):
        check_param_shapes(extra, TINY)
    missing = {k: v for k, v in params.items() if k != "attn.v"}
    with pytest.raises(ModelError, match="names mismatch"):
        check_param_shapes(missing, TINY)
    bent = dict(params)
    bent["attn.v"] = np.zeros(99)
    with pytest.raises(ModelError, match="shape"):
        check_param_shapes(bent, TINY)


def test_forward_returns_unit_embedding():
    params, features = _tiny_setup(1)
    embedding, trace = forward(features, params, TINY)
    assert trace is None
    assert embedding.shape == (6,)
    assert np.linalg.norm(embedding) == pytest.approx(1.0, abs=1e-12)


def test_forward_rejects_short_input():
    params, _ = _tiny_setup(2)
    with pytest.raises(ModelError, match="receptive field"):
        forward(np.zeros((6, 4)), params, TINY)


def test_forward_rejects_wrong_dim():
    params, _ = _tiny_setup(2)
    with pytest.raises(ModelError):
        forward(np.zeros((12, 5)), params, TINY)


def test_pooling_uniform_attention_gives_plain_moments():
    rng = np.random.default_rng(3)
    h = rng.normal(size=(10, 5))
    # zero attention parameters score every frame equally
    stats, _ = attentive_stats_pool(h, np.zeros((4, 5)), np.zeros(4),
                                    np.zeros(4))
    mu = h.mean(axis=0)
    sigma = np.sqrt(np.maximum((h * h).mean(axis=0) - mu * mu, 1e-8))
    assert np.allclose(stats, np.concatenate([mu, sigma]), atol=1e-12)


@pytest.mark.parametrize("seed", [0, 1])
def test_full_gradient_matches_finite_differences(seed):
    params, features = _tiny_setup(seed)
    label = seed % TINY.n_classes
    loss, grads = loss_and_grads(features, label, params, TINY)

    numeric = numeric_gradient(lambda: loss_only(features, label, params, TINY),
                               params)
    floor = 1e-6 * max(1.0, abs(loss))  # finite-difference noise scale
    for name in params:
        err = np.abs(grads[name] - numeric[name])
        denom = np.maximum(np.abs(numeric[name]), floor)
        rel = (err / denom).max()
        assert rel < 1e-4, f"{name}: rel={rel:.2e}"


def test_loss_only_agrees_with_loss_and_grads():
    params, features = _tiny_setup(4)
    loss, _ = loss_and_grads(features, 2, params, TINY)
    assert loss_only(features, 2, params, TINY) == pytest.approx(loss, abs=0.0)


def test_aam_loss_zero_margin_closed_form():
    # aligned target row, orthogonal distractor: logits are (s, 0)
    weights = np.array([[1.0, 0.0], [0.0, 1.0]])
    embedding = np.array([1.0, 0.0])
    loss, grad_emb, grad_w = aam_loss(embedding, 0, weights, scale=20.0,
                                      margin=0.0)
    assert loss == pytest.approx(np.log1p(np.exp(-20.0)), rel=1e-12)
    assert grad_emb.shape == (2,) and grad_w.shape == (2, 2)


def test_aam_loss_margin_shifts_target_angle():
    # unit embedding at angle theta from the target row, kept orthogonal
    # to the distractor by leaning into a third dimension
    theta = 0.4
    weights = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    embedding = np.array([np.cos(theta), 0.0, np.sin(theta)])
    loss, _, _ = aam_loss(embedding, 0, weights, scale=20.0, margin=0.2)
    expected = np.log1p(np.exp(-20.0 * np.cos(theta + 0.2)))
    assert loss == pytest.approx(expected, rel=1e-12)


def test_aam_loss_fallback_branch_near_pi():
    # cos(theta) <= -cos(margin) switches to the linear penalty
    margin = 0.2
    weights = np.array([[1.0, 0.0], [0.0, 1.0]])
    embedding = np.array([-1.0, 0.0])
    loss, _, _ = aam_loss(embedding, 0, weights, scale=20.0, margin=margin)
    fallback_logit = 20.0 * (-1.0 - margin * np.sin(margin))
    expected = np.log1p(np.exp(-fallback_logit))
    assert loss == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("seed,label", [(0, 0), (1, 1), (2, 2)])
def test_aam_loss_gradients_match_finite_differences(seed, label):
    rng = np.random.default_rng(seed)
    embedding = rng.normal(size=5)
    embedding /= np.linalg.norm(embedding)
    weights = rng.normal(size=(3, 5))
    loss, grad_emb, grad_w = aam_loss(embedding, label, weights)

    tensors = {"e": embedding, "w": weights}
    numeric = numeric_gradient(
        lambda: aam_loss(embedding, label, weights)[0], tensors)
    assert np.allclose(grad_emb, numeric["e"], atol=1e-6)
    assert np.allclose(grad_w, numeric["w"], atol=1e-6)


def test_aam_loss_fallback_gradients_match_finite_differences():
    margin = 0.3
    rng = np.random.default_rng(5)
    weights = rng.normal(size=(2, 4))
    target = weights[0] / np.linalg.norm(weights[0])
    embedding = -target + 0.01 * rng.normal(size=4)  # deep in fallback region
    loss, grad_emb, grad_w = aam_loss(embedding, 0, weights, margin=margin)

    tensors = {"e": embedding, "w": weights}
    numeric = numeric_gradient(
        lambda: aam_loss(embedding, 0, weights, margin=margin)[0], tensors)
    assert np.allclose(grad_emb, numeric["e"], atol=1e-6)
    assert np.allclose(grad_w, numeric["w"], atol=1e-6)


def test_aam_loss_rejects_bad_label():
    with pytest.raises(ModelError, match="label"):
        aam_loss(np.ones(4), 7, np.ones((3, 4)))


def test_backward_requires_trace():
    params, features = _tiny_setup(6)
    embedding, trace = forward(features, params, TINY, keep_trace=True)
    grads = backward(np.ones(6), trace, params, TINY)
    assert set(grads) == set(params) - {"classifier.weight"}


def test_adam_first_step_is_bias_corrected():
    params = {"p": np.array([1.0, -2.0])}
    grads = {"p": np.array([0.5, -0.25])}
    state = adam_init(params)
    hyper = AdamHyper()
    updated = adam_step(params, grads, state, hyper)
    # after bias correction the first step is lr * g / (|g| + eps)
    expected = params["p"] - hyper.lr * grads["p"] / (
        np.abs(grads["p"]) + hyper.eps)
    assert np.allclose(updated["p"], expected, atol=1e-15)
    assert state.step == 1


def test_adam_constant_gradient_keeps_unit_rate():
    params = {"p": np.array([0.0])}
    grads = {"p": np.array([2.0])}
    state = adam_init(params)
    hyper = AdamHyper(lr=0.01)
    for _ in range(5):
        params = adam_step(params, grads, state, hyper)
    # with a constant gradient every corrected step is almost exactly lr
    assert params["p"][0] == pytest.approx(-0.05, rel=1e-6)


def test_adam_step_rejects_mismatched_names():
    params = {"p": np.zeros(2)}
    state = adam_init(params)
    with pytest.raises(ModelError):
        adam_step(params, {"q": np.zeros(2)}, state)
    with pytest.raises(ModelError):
        adam_step(params, {"p": np.zeros(3)}, state)
