"""
Proximal policy optimization with generalized advantage estimation.

N actors collect T steps each under the frozen behavior policy; the learner then runs K
epochs of minibatch Adam on the clipped surrogate and synchronizes the behavior policy.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union
import logging
import math

import gymnasium as gym
import numpy as np
import pandas as pd

from app.config import config_hash as hash_configs, settings
from app.errors import ShapeError, TrainingDivergedError
from app.models import NetworkSpec, PpoHyperparams, TrainingConfig
from app.monitoring.monitor import TrainingMonitor
from app.services.environment import Curriculum
from app.services.neuralnet import (
    Adam, Params, PolicyParameters, backward, forward, forward_with_cache,
    gaussian_entropy, gaussian_log_prob, gaussian_logprob_and_sample, init_params, save_checkpoint,
)
from app.services.vec_env import NormalizedVecEnv, make_vector_env
from app.utils.io import write_csv
from app.utils.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

LOG_COLUMNS = [
    "update", "steps", "difficulty", "episodes", "mean_reward", "mean_episode_length",
    "policy_loss", "value_loss", "entropy", "approx_kl", "clip_fraction", "excluded_samples",
    "learning_rate",
]


@dataclass
class RolloutBatch:
    """Arrays indexed (step, actor); last_values bootstraps the step after the rollout."""
    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    last_values: np.ndarray

    @classmethod
    def allocate(cls, n_steps: int, n_actors: int, obs_dim: int, action_dim: int) -> "RolloutBatch":
        return cls(
            observations=np.zeros((n_steps, n_actors, obs_dim)),
            actions=np.zeros((n_steps, n_actors, action_dim)),
            log_probs=np.zeros((n_steps, n_actors)),
            rewards=np.zeros((n_steps, n_actors)),
            values=np.zeros((n_steps, n_actors)),
            dones=np.zeros((n_steps, n_actors)),
            last_values=np.zeros(n_actors),
        )

    def flatten(self, advantages: np.ndarray, returns: np.ndarray) -> Dict[str, np.ndarray]:
        size = self.rewards.size
        return {
            "observations": self.observations.reshape(size, -1),
            "actions": self.actions.reshape(size, -1),
            "log_probs": self.log_probs.reshape(size),
            "advantages": advantages.reshape(size),
            "returns": returns.reshape(size),
        }


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, last_values,
                gamma: float, lam: float, normalize: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """
    Advantages and return targets; a done flag at step t cuts the bootstrap after t.

    Arrays are indexed by step first (extra trailing actor axis allowed).
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    advantages = np.zeros_like(rewards)
    last_gae = np.zeros_like(rewards[0])
    n_steps = rewards.shape[0]
    for t in reversed(range(n_steps)):
        next_values = np.asarray(last_values, dtype=float) if t == n_steps - 1 else values[t + 1]
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values * nonterminal - values[t]
        last_gae = delta + gamma * lam * nonterminal * last_gae
        advantages[t] = last_gae
    returns = advantages + values
    if normalize:
        advantages = normalize_advantages(advantages)
    return advantages, returns


def normalize_advantages(advantages: np.ndarray) -> np.ndarray:
    return (advantages - advantages.mean()) / (advantages.std() + 1e-8)


def clipped_surrogate(ratio: np.ndarray, advantages: np.ndarray, clip_range: float) -> np.ndarray:
    """Per-sample min(r A, clip(r, 1 - eps, 1 + eps) A)."""
    return np.minimum(ratio * advantages, np.clip(ratio, 1.0 - clip_range, 1.0 + clip_range) * advantages)


def surrogate_loss(params: Params, spec: NetworkSpec, batch: Dict[str, np.ndarray],
                   hp: PpoHyperparams) -> Tuple[float, Params, Dict[str, float]]:
    """
    Total loss = policy term + c_v * value MSE - c_e * entropy, its gradients and diagnostics.

    Samples whose probability ratio is not finite are dropped and counted.
    """
    obs, actions = batch["observations"], batch["actions"]
    old_log_probs, advantages, returns = batch["log_probs"], batch["advantages"], batch["returns"]
    mean, log_std, value, cache = forward_with_cache(params, obs, spec)
    log_probs = gaussian_log_prob(mean, log_std, actions)
    log_ratio = log_probs - old_log_probs
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = np.exp(log_ratio)
        valid = np.isfinite(ratio) & np.isfinite(advantages)
    n = int(valid.sum())
    excluded = int(valid.size - n)
    if n == 0:
        zeros = {name: np.zeros_like(p) for name, p in params.items()}
        return 0.0, zeros, {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "approx_kl": 0.0,
                            "clip_fraction": 0.0, "excluded_samples": excluded}

    r = np.where(valid, ratio, 1.0)
    adv = np.where(valid, advantages, 0.0)
    unclipped = r * adv
    clipped = np.clip(r, 1.0 - hp.clip_range, 1.0 + hp.clip_range) * adv
    objective = np.minimum(unclipped, clipped)

    policy_loss = -float(objective[valid].sum()) / n
    value_error = np.where(valid, value - returns, 0.0)
    value_loss = float((value_error ** 2).sum()) / n
    entropy = float(gaussian_entropy(log_std[valid]).mean())
    loss = policy_loss + hp.value_coef * value_loss - hp.entropy_coef * entropy

    # d loss / d log_prob: -r A / n where the unclipped branch is the minimum, else 0
    d_log_prob = np.where(valid & (unclipped <= clipped), -r * adv, 0.0) / n
    sigma = np.exp(log_std)
    z = (actions - mean) / sigma
    d_mean = d_log_prob[:, None] * z / sigma
    d_log_std = d_log_prob[:, None] * (z * z - 1.0) - hp.entropy_coef * valid[:, None] / n
    d_value = hp.value_coef * 2.0 * value_error / n
    grads = backward(params, cache, spec, d_mean, d_log_std, d_value)

    diagnostics = {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy,
        "approx_kl": float(0.5 * np.mean(log_ratio[valid] ** 2)),
        "clip_fraction": float(np.mean(np.abs(r[valid] - 1.0) > hp.clip_range)),
        "excluded_samples": excluded,
    }
    return loss, grads, diagnostics


def network_spec_for(env: gym.Env, base: NetworkSpec) -> NetworkSpec:
    """Adapt the configured spec to the environment's observation layout."""
    builder = getattr(env, "builder", None)
    if builder is not None:
        spec = base.model_copy(update={"n_components": builder.n_components,
                                       "history_length": builder.cfg.history_length})
    else:
        spec = base
    obs_dim = int(np.prod(env.observation_space.shape))
    if spec.input_dim != obs_dim:
        raise ShapeError(f"network input {spec.input_dim} does not match observation size {obs_dim}")
    if int(np.prod(env.action_space.shape)) != spec.action_dim:
        raise ShapeError(f"network action dim {spec.action_dim} does not match the action space")
    return spec


@dataclass
class TrainingResult:
    policy: PolicyParameters
    log: List[Dict[str, Any]] = field(default_factory=list)
    checkpoints: List[Path] = field(default_factory=list)
    log_path: Optional[Path] = None


def _params_finite(params: Params) -> bool:
    return all(np.all(np.isfinite(p)) for p in params.values())


def train(env_factory: Callable[[], gym.Env], cfg: TrainingConfig, seed: int = 0,
          out_dir: Optional[Union[str, Path]] = None, budget: Optional[int] = None,
          backend: Optional[str] = None, run_hash: Optional[str] = None) -> TrainingResult:
    """
    Train an actor-critic policy with PPO.

    Writes `checkpoints/update_XXXXX.npz`, `policy.npz` and `training_log.csv` under
    out_dir when given. Raises TrainingDivergedError on a non-finite loss.
    """
    hp = cfg.ppo
    total_steps = hp.total_steps if budget is None else int(budget)
    run_hash = run_hash or hash_configs(cfg)
    out_dir = Path(out_dir) if out_dir is not None else None

    probe = env_factory()
    spec = network_spec_for(probe, cfg.network)
    probe.close()

    policy_rng = make_rng(seed, "policy")
    params = init_params(spec, policy_rng)
    policy = PolicyParameters(spec, params, None, 0, run_hash)
    if total_steps <= 0:
        logger.info("Training budget is 0; returning the initial parameters")
        return TrainingResult(policy)

    n_actors, n_steps = hp.n_actors, hp.n_steps
    batch_size = hp.batch_size
    n_updates = math.ceil(total_steps / batch_size)
    minibatch_size = max(1, batch_size // hp.n_minibatches)

    venv = NormalizedVecEnv(
        make_vector_env([env_factory] * n_actors, backend or settings.VECTOR_BACKEND),
        enabled=cfg.environment.observation.normalize, clip=cfg.environment.observation.clip)
    policy.normalizer = venv.normalizer if venv.enabled else None

    curriculum = Curriculum(cfg.curriculum)
    venv.set_difficulty(curriculum.difficulty)
    monitor = TrainingMonitor(window=cfg.curriculum.window, log_interval=hp.log_interval)
    optimizer = Adam(params, hp.learning_rate, hp.adam_beta1, hp.adam_beta2, hp.adam_eps, hp.max_grad_norm)

    log: List[Dict[str, Any]] = []
    checkpoints: List[Path] = []
    log_path = out_dir / "training_log.csv" if out_dir is not None else None
    steps = 0
    logger.info(f"Training for {n_updates} updates of {batch_size} samples ({n_actors} actors, {spec.input_dim} inputs)")

    def write_log() -> None:
        if log_path is not None:
            write_csv(pd.DataFrame(log, columns=LOG_COLUMNS), log_path, run_hash, seed)

    try:
        obs = venv.reset([derive_seed(seed, "env", i) for i in range(n_actors)])
        for update in range(1, n_updates + 1):
            if hp.linear_lr_decay:
                lr = hp.learning_rate * (1.0 - (update - 1) / n_updates)
            else:
                lr = hp.learning_rate
            last_good = policy.copy()

            rollout = RolloutBatch.allocate(n_steps, n_actors, spec.input_dim, spec.action_dim)
            for t in range(n_steps):
                mean, log_std, value = forward(params, obs, spec)
                actions, log_probs, _ = gaussian_logprob_and_sample(mean, log_std, policy_rng)
                next_obs, rewards, terminated, truncated, infos = venv.step(actions)
                rollout.observations[t] = obs
                rollout.actions[t] = actions
                rollout.log_probs[t] = log_probs
                rollout.rewards[t] = rewards
                rollout.values[t] = value
                rollout.dones[t] = terminated | truncated
                for info in infos:
                    episode = info.get("episode")
                    if episode is not None:
                        monitor.record_episode(episode["r"], episode["l"])
                        curriculum.record_episode(episode["r"], episode["l"])
                obs = next_obs
                steps += n_actors
            _, _, rollout.last_values = forward(params, obs, spec)

            advantages, returns = compute_gae(rollout.rewards, rollout.values, rollout.dones,
                                              rollout.last_values, hp.gamma, hp.gae_lambda)
            flat = rollout.flatten(normalize_advantages(advantages), returns)

            diagnostics: List[Dict[str, float]] = []
            for _ in range(hp.n_epochs):
                order = policy_rng.permutation(batch_size)
                for start in range(0, batch_size, minibatch_size):
                    idx = order[start:start + minibatch_size]
                    minibatch = {key: value[idx] for key, value in flat.items()}
                    loss, grads, diag = surrogate_loss(params, spec, minibatch, hp)
                    if not math.isfinite(loss) or not _params_finite(grads):
                        raise TrainingDivergedError(
                            f"non-finite loss at update {update}", last_good_params=last_good,
                            checkpoint_path=checkpoints[-1] if checkpoints else None, log=list(log))
                    optimizer.step(params, grads, lr)
                    diagnostics.append(diag)
            if not _params_finite(params):
                raise TrainingDivergedError(
                    f"non-finite parameters after update {update}", last_good_params=last_good,
                    checkpoint_path=checkpoints[-1] if checkpoints else None, log=list(log))
            if diagnostics and any(d["excluded_samples"] for d in diagnostics):
                logger.warning(f"Update {update}: excluded {sum(d['excluded_samples'] for d in diagnostics)} "
                               f"samples with non-finite ratios")

            difficulty = curriculum.update()
            venv.set_difficulty(difficulty)
            policy.steps = steps

            row = {
                "update": update,
                "steps": steps,
                "difficulty": difficulty,
                "episodes": monitor.episodes,
                "mean_reward": monitor.mean_reward,
                "mean_episode_length": monitor.mean_episode_length,
                "policy_loss": float(np.mean([d["policy_loss"] for d in diagnostics])),
                "value_loss": float(np.mean([d["value_loss"] for d in diagnostics])),
                "entropy": float(np.mean([d["entropy"] for d in diagnostics])),
                "approx_kl": float(np.mean([d["approx_kl"] for d in diagnostics])),
                "clip_fraction": float(np.mean([d["clip_fraction"] for d in diagnostics])),
                "excluded_samples": int(sum(d["excluded_samples"] for d in diagnostics)),
                "learning_rate": lr,
            }
            log.append(row)
            monitor.record_update(row)

            if out_dir is not None and (update % hp.checkpoint_interval == 0 or update == n_updates):
                checkpoints.append(save_checkpoint(policy.copy(), out_dir / "checkpoints" / f"update_{update:05d}.npz"))
                write_log()
    except TrainingDivergedError as e:
        logger.error(f"Training diverged: {str(e)}")
        write_log()
        raise
    finally:
        venv.close()

    if out_dir is not None:
        save_checkpoint(policy, out_dir / "policy.npz")
    write_log()
    logger.info(f"Training finished after {steps} steps, final difficulty {curriculum.difficulty:.2f}")
    return TrainingResult(policy.copy(), log, checkpoints, log_path)
