import math

import numpy as np
import pytest

from app.errors import CheckpointError, ShapeError
from app.models import NetworkSpec
from app.services.environment import ObservationNormalizer
from app.services.neuralnet import (
    Adam, PolicyParameters, adam_step, backward, clip_grad_norm, expected_shapes, forward, forward_with_cache,
    gaussian_logprob_and_sample, init_params, load_checkpoint, measure_latency, save_checkpoint, validate_params,
)


def _scalar_loss(params, obs, spec, w_mean, w_log_std, w_value):
    mean, log_std, value, _ = forward_with_cache(params, obs, spec)
    return float(np.sum(w_mean * mean) + np.sum(w_log_std * log_std) + np.sum(w_value * value))


def test_init_matches_expected_shapes(small_spec, rng):
    params = init_params(small_spec, rng)
    validate_params(params, small_spec)
    assert set(params) == set(expected_shapes(small_spec))


def test_zero_weights_give_zero_outputs(small_spec, rng):
    params = {name: np.zeros_like(p) for name, p in init_params(small_spec, rng).items()}
    mean, log_std, value = forward(params, rng.normal(size=small_spec.input_dim), small_spec)
    np.testing.assert_array_equal(mean, 0.0)
    assert value == 0.0


def test_value_head_is_linear(small_spec, rng):
    params = init_params(small_spec, rng)
    obs = rng.normal(size=small_spec.input_dim)
    _, _, value = forward(params, obs, small_spec)
    params["vf/value_w"] = params["vf/value_w"] * 2.0
    _, _, doubled = forward(params, obs, small_spec)
    assert doubled == pytest.approx(2.0 * value, rel=1e-12)


def test_forward_is_pure_and_deterministic(small_spec, rng):
    params = init_params(small_spec, rng)
    before = {k: v.copy() for k, v in params.items()}
    obs = rng.normal(size=(8, small_spec.input_dim))
    first = forward(params, obs, small_spec)
    second = forward(params, obs, small_spec)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a, b)
    for name in params:
        np.testing.assert_array_equal(params[name], before[name])


def test_batched_forward_matches_single(small_spec, rng):
    params = init_params(small_spec, rng)
    obs = rng.normal(size=(4, small_spec.input_dim))
    means, _, values = forward(params, obs, small_spec)
    for k in range(4):
        mean, _, value = forward(params, obs[k], small_spec)
        np.testing.assert_allclose(mean, means[k], rtol=1e-12, atol=1e-15)
        assert value == pytest.approx(values[k], rel=1e-12)


def test_wrong_observation_length(small_spec, rng):
    params = init_params(small_spec, rng)
    with pytest.raises(ShapeError):
        forward(params, np.zeros(small_spec.input_dim + 1), small_spec)


def test_gaussian_closed_forms():
    mean, log_std = np.zeros(3), np.zeros(3)
    action, log_prob, entropy = gaussian_logprob_and_sample(mean, log_std, action=mean)
    assert log_prob == pytest.approx(-1.5 * math.log(2.0 * math.pi))
    assert entropy == pytest.approx(3 * 0.5 * math.log(2.0 * math.pi * math.e))
    det, _, _ = gaussian_logprob_and_sample(np.array([0.1, -0.2, 0.3]), log_std, deterministic=True)
    np.testing.assert_array_equal(det, [0.1, -0.2, 0.3])


def test_sampling_requires_generator():
    with pytest.raises(ValueError):
        gaussian_logprob_and_sample(np.zeros(3), np.zeros(3))


def test_value_gradient_with_zero_input_touches_only_critic_bias_path(small_spec, rng):
    params = init_params(small_spec, rng)
    obs = np.zeros((1, small_spec.input_dim))
    _, _, _, cache = forward_with_cache(params, obs, small_spec)
    grads = backward(params, cache, small_spec, d_value=np.ones(1))
    assert grads["vf/value_b"][0] == 1.0
    np.testing.assert_array_equal(grads["vf/conv_w"], 0.0)
    for name, g in grads.items():
        if name.startswith("pi/") or name == "log_std":
            np.testing.assert_array_equal(g, 0.0)


# draws past the first ten carry the slow marker
@pytest.mark.parametrize("draw", [d if d < 10 else pytest.param(d, marks=pytest.mark.slow) for d in range(100)])
def test_gradients_match_finite_differences(small_spec, draw):
    rng = np.random.default_rng(draw)
    params = init_params(small_spec, rng)
    # push weights away from the tiny head init so every path carries signal
    params = {k: v + 0.3 * rng.normal(size=v.shape) for k, v in params.items()}
    obs = rng.normal(size=(3, small_spec.input_dim))
    w_mean = rng.normal(size=(3, small_spec.action_dim))
    w_log_std = rng.normal(size=(3, small_spec.action_dim))
    w_value = rng.normal(size=3)

    _, _, _, cache = forward_with_cache(params, obs, small_spec)
    grads = backward(params, cache, small_spec, w_mean, w_log_std, w_value)

    eps = 1e-5
    for name, p in params.items():
        numeric = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            original = p[idx]
            p[idx] = original + eps
            up = _scalar_loss(params, obs, small_spec, w_mean, w_log_std, w_value)
            p[idx] = original - eps
            down = _scalar_loss(params, obs, small_spec, w_mean, w_log_std, w_value)
            p[idx] = original
            numeric[idx] = (up - down) / (2.0 * eps)
        scale = max(np.linalg.norm(numeric), np.linalg.norm(grads[name]), 1e-8)
        assert np.linalg.norm(numeric - grads[name]) / scale < 1e-4, name


def test_gradient_of_sum_is_sum_of_gradients(small_spec, rng):
    params = init_params(small_spec, rng)
    obs = rng.normal(size=(2, small_spec.input_dim))
    _, _, _, cache = forward_with_cache(params, obs, small_spec)
    d_mean = rng.normal(size=(2, small_spec.action_dim))
    d_value = rng.normal(size=2)
    a = backward(params, cache, small_spec, d_mean=d_mean)
    b = backward(params, cache, small_spec, d_value=d_value)
    both = backward(params, cache, small_spec, d_mean=d_mean, d_value=d_value)
    for name in both:
        np.testing.assert_allclose(both[name], a[name] + b[name], atol=1e-12)


def test_adam_zero_gradient_leaves_params(small_spec, rng):
    params = init_params(small_spec, rng)
    optimizer = Adam(params, lr=1e-3)
    updated = adam_step(params, {k: np.zeros_like(v) for k, v in params.items()}, optimizer)
    for name in params:
        np.testing.assert_array_equal(updated[name], params[name])


def test_adam_first_step_moves_by_learning_rate():
    params = {"w": np.array([1.0, -2.0, 3.0])}
    optimizer = Adam(params, lr=0.01, max_grad_norm=None)
    optimizer.step(params, {"w": np.array([0.5, -3.0, 0.0])})
    np.testing.assert_allclose(params["w"], [1.0 - 0.01, -2.0 + 0.01, 3.0], atol=1e-8)


def test_gradient_clipping_scales_to_max_norm():
    grads = {"a": np.array([6.0, 8.0])}
    clipped, norm = clip_grad_norm(grads, 0.5)
    assert norm == pytest.approx(10.0)
    np.testing.assert_allclose(clipped["a"], [0.3, 0.4])


def test_checkpoint_round_trip(tmp_path, small_spec, rng):
    params = init_params(small_spec, rng)
    normalizer = ObservationNormalizer(small_spec.input_dim)
    normalizer.update(rng.normal(size=(20, small_spec.input_dim)))
    policy = PolicyParameters(small_spec, params, normalizer, steps=123, config_hash="abc")
    path = save_checkpoint(policy, tmp_path / "policy.npz")
    loaded = load_checkpoint(path, expected_spec=small_spec)
    assert loaded.steps == 123 and loaded.config_hash == "abc"
    obs = rng.normal(size=small_spec.input_dim)
    np.testing.assert_array_equal(policy.act(obs), loaded.act(obs))


def test_checkpoint_spec_mismatch(tmp_path, small_spec, rng):
    path = save_checkpoint(PolicyParameters(small_spec, init_params(small_spec, rng)), tmp_path / "p.npz")
    other = small_spec.model_copy(update={"hidden_sizes": (7,)})
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expected_spec=other)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.npz")


def test_latency_report(small_spec, rng):
    policy = PolicyParameters(small_spec, init_params(small_spec, rng))
    report = measure_latency(policy, repeats=20)
    assert report["repeats"] == 20
    assert report["mean_s"] > 0.0 and report["p95_s"] > 0.0


@pytest.mark.slow
def test_default_network_inference_latency(rng):
    spec = NetworkSpec()
    policy = PolicyParameters(spec, init_params(spec, rng), ObservationNormalizer(spec.input_dim))
    assert measure_latency(policy, repeats=500)["mean_s"] < 1e-3
