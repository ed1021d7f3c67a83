"""
Actor-critic network in plain numpy.

Each trunk starts with a per-component temporal convolution (filters span the whole
history window) followed by tanh fully connected layers. The actor emits Gaussian means
plus a state-independent log-std; the critic emits one value. Gradients are propagated
by hand through this fixed architecture.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple, Union
import json
import logging
import math
import time

import numpy as np

from app.errors import CheckpointError, ShapeError
from app.models import NetworkSpec
from app.services.environment import ObservationNormalizer

logger = logging.getLogger(__name__)

Params = Dict[str, np.ndarray]
CHECKPOINT_FORMAT_VERSION = 1
_LOG_2PI = math.log(2.0 * math.pi)
TRUNKS = ("pi", "vf")


# ---------------------------------------------------------------- initialization

def orthogonal(shape: Tuple[int, ...], gain: float, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal matrix of `shape` scaled by `gain` (rows or columns orthonormal)."""
    flat = (shape[0], int(np.prod(shape[1:])))
    a = rng.standard_normal(flat)
    u, _, vt = np.linalg.svd(a, full_matrices=False)
    q = u if u.shape == flat else vt
    return (gain * q).reshape(shape)


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> Params:
    params: Params = {}
    hidden_gain = math.sqrt(2.0)
    for trunk in TRUNKS:
        conv = np.stack([orthogonal((spec.conv_filters, spec.history_length), hidden_gain, rng)
                         for _ in range(spec.n_components)])
        params[f"{trunk}/conv_w"] = conv
        params[f"{trunk}/conv_b"] = np.zeros((spec.n_components, spec.conv_filters))
        width = spec.feature_dim
        for k, size in enumerate(spec.hidden_sizes):
            params[f"{trunk}/fc{k}_w"] = orthogonal((width, size), hidden_gain, rng)
            params[f"{trunk}/fc{k}_b"] = np.zeros(size)
            width = size
    width = spec.hidden_sizes[-1] if spec.hidden_sizes else spec.feature_dim
    params["pi/mean_w"] = orthogonal((width, spec.action_dim), 0.01, rng)
    params["pi/mean_b"] = np.zeros(spec.action_dim)
    params["log_std"] = np.full(spec.action_dim, spec.initial_log_std, dtype=float)
    params["vf/value_w"] = orthogonal((width, 1), 1.0, rng)
    params["vf/value_b"] = np.zeros(1)
    return params


def expected_shapes(spec: NetworkSpec) -> Dict[str, Tuple[int, ...]]:
    shapes = {}
    for trunk in TRUNKS:
        shapes[f"{trunk}/conv_w"] = (spec.n_components, spec.conv_filters, spec.history_length)
        shapes[f"{trunk}/conv_b"] = (spec.n_components, spec.conv_filters)
        width = spec.feature_dim
        for k, size in enumerate(spec.hidden_sizes):
            shapes[f"{trunk}/fc{k}_w"] = (width, size)
            shapes[f"{trunk}/fc{k}_b"] = (size,)
            width = size
    width = spec.hidden_sizes[-1] if spec.hidden_sizes else spec.feature_dim
    shapes["pi/mean_w"] = (width, spec.action_dim)
    shapes["pi/mean_b"] = (spec.action_dim,)
    shapes["log_std"] = (spec.action_dim,)
    shapes["vf/value_w"] = (width, 1)
    shapes["vf/value_b"] = (1,)
    return shapes


def validate_params(params: Params, spec: NetworkSpec) -> None:
    shapes = expected_shapes(spec)
    if set(params) != set(shapes):
        raise ShapeError(f"parameter names do not match the network spec: {sorted(set(params) ^ set(shapes))}")
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise ShapeError(f"{name}: expected shape {shape}, got {params[name].shape}")


def parameter_count(params: Params) -> int:
    return int(sum(p.size for p in params.values()))


# ---------------------------------------------------------------- forward / backward

@dataclass
class ForwardCache:
    inputs: np.ndarray
    activations: Dict[str, list] = field(default_factory=dict)
    log_std_raw: Optional[np.ndarray] = None


def _as_batch(obs: np.ndarray, spec: NetworkSpec) -> Tuple[np.ndarray, bool]:
    obs = np.asarray(obs, dtype=float)
    single = obs.ndim == 1
    batch = obs[None, :] if single else obs
    if batch.ndim != 2 or batch.shape[1] != spec.input_dim:
        raise ShapeError(f"observation must have length {spec.input_dim}, got shape {obs.shape}")
    return batch, single


def _trunk_forward(params: Params, trunk: str, x: np.ndarray, spec: NetworkSpec) -> list:
    """Returns the activations [conv features, hidden_0, ..., hidden_k]."""
    series = x.reshape(x.shape[0], spec.history_length, spec.n_components)
    z = np.einsum("btj,jft->bjf", series, params[f"{trunk}/conv_w"]) + params[f"{trunk}/conv_b"]
    h = np.tanh(z).reshape(x.shape[0], spec.feature_dim)
    activations = [h]
    for k in range(len(spec.hidden_sizes)):
        h = np.tanh(h @ params[f"{trunk}/fc{k}_w"] + params[f"{trunk}/fc{k}_b"])
        activations.append(h)
    return activations


def forward_with_cache(params: Params, obs: np.ndarray, spec: NetworkSpec):
    x, _ = _as_batch(obs, spec)
    cache = ForwardCache(x)
    pi = _trunk_forward(params, "pi", x, spec)
    vf = _trunk_forward(params, "vf", x, spec)
    cache.activations = {"pi": pi, "vf": vf}
    mean = pi[-1] @ params["pi/mean_w"] + params["pi/mean_b"]
    log_std = np.clip(params["log_std"], spec.log_std_min, spec.log_std_max)
    cache.log_std_raw = params["log_std"]
    value = (vf[-1] @ params["vf/value_w"] + params["vf/value_b"])[:, 0]
    return mean, np.broadcast_to(log_std, mean.shape).copy(), value, cache


def forward(params: Params, obs: np.ndarray, spec: NetworkSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(mean, log_std, value) for one observation or a batch; pure."""
    _, single = _as_batch(obs, spec)
    mean, log_std, value, _ = forward_with_cache(params, obs, spec)
    if single:
        return mean[0], log_std[0], value[0]
    return mean, log_std, value


def _trunk_backward(params: Params, trunk: str, activations: list, upstream: np.ndarray,
                    x: np.ndarray, spec: NetworkSpec, grads: Params) -> None:
    dh = upstream
    for k in reversed(range(len(spec.hidden_sizes))):
        h = activations[k + 1]
        dz = dh * (1.0 - h * h)
        grads[f"{trunk}/fc{k}_w"] = activations[k].T @ dz
        grads[f"{trunk}/fc{k}_b"] = dz.sum(axis=0)
        dh = dz @ params[f"{trunk}/fc{k}_w"].T
    features = activations[0]
    dz = (dh * (1.0 - features * features)).reshape(x.shape[0], spec.n_components, spec.conv_filters)
    series = x.reshape(x.shape[0], spec.history_length, spec.n_components)
    grads[f"{trunk}/conv_w"] = np.einsum("bjf,btj->jft", dz, series)
    grads[f"{trunk}/conv_b"] = dz.sum(axis=0)


def backward(params: Params, cache: ForwardCache, spec: NetworkSpec, d_mean: Optional[np.ndarray] = None,
             d_log_std: Optional[np.ndarray] = None, d_value: Optional[np.ndarray] = None) -> Params:
    """
    Gradients of a scalar loss given its derivatives w.r.t. the network outputs.

    d_mean and d_log_std have shape (batch, action_dim), d_value has shape (batch,).
    """
    x = cache.inputs
    batch = x.shape[0]
    d_mean = np.zeros((batch, spec.action_dim)) if d_mean is None else np.asarray(d_mean, dtype=float)
    d_log_std = np.zeros((batch, spec.action_dim)) if d_log_std is None else np.asarray(d_log_std, dtype=float)
    d_value = np.zeros(batch) if d_value is None else np.asarray(d_value, dtype=float)

    grads: Params = {}
    pi = cache.activations["pi"]
    grads["pi/mean_w"] = pi[-1].T @ d_mean
    grads["pi/mean_b"] = d_mean.sum(axis=0)
    _trunk_backward(params, "pi", pi, d_mean @ params["pi/mean_w"].T, x, spec, grads)

    raw = cache.log_std_raw
    inside = (raw >= spec.log_std_min) & (raw <= spec.log_std_max)
    grads["log_std"] = d_log_std.sum(axis=0) * inside

    vf = cache.activations["vf"]
    dv = d_value[:, None]
    grads["vf/value_w"] = vf[-1].T @ dv
    grads["vf/value_b"] = dv.sum(axis=0)
    _trunk_backward(params, "vf", vf, dv @ params["vf/value_w"].T, x, spec, grads)
    return grads


# ---------------------------------------------------------------- Gaussian policy

def gaussian_log_prob(mean: np.ndarray, log_std: np.ndarray, action: np.ndarray) -> np.ndarray:
    z = (action - mean) / np.exp(log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * _LOG_2PI, axis=-1)


def gaussian_entropy(log_std: np.ndarray) -> np.ndarray:
    return np.sum(log_std + 0.5 * (_LOG_2PI + 1.0), axis=-1)


def gaussian_logprob_and_sample(mean: np.ndarray, log_std: np.ndarray,
                                rng: Optional[np.random.Generator] = None,
                                action: Optional[np.ndarray] = None,
                                deterministic: bool = False):
    """
    (action, log-probability, entropy) of a diagonal Gaussian.

    Scores `action` if given, returns the mean in deterministic mode, otherwise samples with rng.
    """
    if action is None:
        if deterministic:
            action = np.array(mean, dtype=float, copy=True)
        else:
            if rng is None:
                raise ValueError("sampling requires a random generator")
            action = mean + np.exp(log_std) * rng.standard_normal(np.shape(mean))
    return action, gaussian_log_prob(mean, log_std, action), gaussian_entropy(log_std)


# ---------------------------------------------------------------- optimizer

def global_norm(grads: Params) -> float:
    return float(math.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_grad_norm(grads: Params, max_norm: float) -> Tuple[Params, float]:
    norm = global_norm(grads)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        return {name: g * scale for name, g in grads.items()}, norm
    return grads, norm


class Adam:
    def __init__(self, params: Params, lr: float = 2.5e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, max_grad_norm: Optional[float] = 0.5):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.max_grad_norm = max_grad_norm
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}

    def step(self, params: Params, grads: Params, lr: Optional[float] = None) -> float:
        """Update params in place; returns the pre-clipping gradient norm."""
        lr = self.lr if lr is None else lr
        norm = global_norm(grads)
        if self.max_grad_norm is not None:
            grads, norm = clip_grad_norm(grads, self.max_grad_norm)
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            params[name] -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return norm


def adam_step(params: Params, grads: Params, optimizer: Adam, lr: Optional[float] = None) -> Params:
    """Functional form: returns updated copies, leaving `params` untouched."""
    updated = {name: p.copy() for name, p in params.items()}
    optimizer.step(updated, grads, lr)
    return updated


# ---------------------------------------------------------------- policy bundle and checkpoints

@dataclass
class PolicyParameters:
    spec: NetworkSpec
    params: Params
    normalizer: Optional[ObservationNormalizer] = None
    steps: int = 0
    config_hash: str = ""

    def copy(self) -> "PolicyParameters":
        return PolicyParameters(
            self.spec, {k: v.copy() for k, v in self.params.items()},
            self.normalizer.copy() if self.normalizer is not None else None,
            self.steps, self.config_hash)

    def act(self, raw_obs: np.ndarray) -> np.ndarray:
        """Mean action for a raw observation; the normalizer is read, never updated."""
        obs = raw_obs if self.normalizer is None else self.normalizer.normalize(raw_obs, training=False)
        mean, _, _ = forward(self.params, obs, self.spec)
        return mean


def save_checkpoint(policy: PolicyParameters, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metadata = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "network_spec": policy.spec.model_dump(mode="json"),
        "steps": policy.steps,
        "config_hash": policy.config_hash,
        "has_normalizer": policy.normalizer is not None,
        "normalizer_clip": policy.normalizer.clip if policy.normalizer is not None else None,
    }
    arrays = {f"param/{name}": value for name, value in policy.params.items()}
    if policy.normalizer is not None:
        arrays.update({f"normalizer/{k}": v for k, v in policy.normalizer.state_dict().items()})
    arrays["metadata"] = np.array(json.dumps(metadata, sort_keys=True))
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    logger.info(f"Checkpoint written to {path} ({parameter_count(policy.params)} parameters)")
    return path


def load_checkpoint(path: Union[str, Path], expected_spec: Optional[NetworkSpec] = None) -> PolicyParameters:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            metadata = json.loads(str(data["metadata"]))
            params = {key[len("param/"):]: data[key].copy() for key in data.files if key.startswith("param/")}
            normalizer_state = {key[len("normalizer/"):]: data[key].copy()
                                for key in data.files if key.startswith("normalizer/")}
    except (OSError, ValueError, KeyError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {str(e)}") from e

    if metadata.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {metadata.get('format_version')} in {path}")
    spec = NetworkSpec.model_validate(metadata["network_spec"])
    if expected_spec is not None and expected_spec != spec:
        raise CheckpointError(f"checkpoint network spec does not match the configured spec: {path}")
    try:
        validate_params(params, spec)
    except ShapeError as e:
        raise CheckpointError(f"{path}: {str(e)}") from e

    normalizer = None
    if metadata.get("has_normalizer"):
        normalizer = ObservationNormalizer(spec.input_dim, clip=metadata.get("normalizer_clip") or 10.0)
        normalizer.load_state_dict(normalizer_state)
    return PolicyParameters(spec, params, normalizer, int(metadata.get("steps", 0)), metadata.get("config_hash", ""))


def measure_latency(policy: PolicyParameters, repeats: int = 1000,
                    rng: Optional[np.random.Generator] = None) -> Dict[str, float]:
    """Mean and 95th-percentile wall time of a single-observation forward pass, in seconds."""
    rng = rng or np.random.default_rng(0)
    obs = rng.standard_normal(policy.spec.input_dim)
    policy.act(obs)
    timings = np.empty(repeats)
    for i in range(repeats):
        start = time.perf_counter()
        policy.act(obs)
        timings[i] = time.perf_counter() - start
    return {"mean_s": float(timings.mean()), "p95_s": float(np.percentile(timings, 95)), "repeats": repeats}
