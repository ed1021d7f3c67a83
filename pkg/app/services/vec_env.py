"""
Vectorized environment runners for the parallel PPO actors.

Both runners step N independent environments in lockstep and reset an environment as soon
as its episode ends; the final observation and episode statistics are returned in the info
dict of that step.
"""
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple
import logging
import multiprocessing as mp

import cloudpickle
import gymnasium as gym
import numpy as np

from app.services.environment import ObservationNormalizer

logger = logging.getLogger(__name__)

EnvFactory = Callable[[], gym.Env]
StepResult = Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, List[Dict[str, Any]]]


class _EpisodeTracker:
    def __init__(self):
        self.total = 0.0
        self.length = 0

    def add(self, reward: float) -> None:
        self.total += float(reward)
        self.length += 1

    def finish(self) -> Dict[str, float]:
        stats = {"r": self.total, "l": self.length}
        self.total, self.length = 0.0, 0
        return stats


def _step_with_reset(env: gym.Env, tracker: _EpisodeTracker, action: np.ndarray):
    obs, reward, terminated, truncated, info = env.step(action)
    tracker.add(reward)
    if terminated or truncated:
        info = dict(info)
        info["final_observation"] = obs
        info["episode"] = tracker.finish()
        obs, _ = env.reset()
    return obs, reward, terminated, truncated, info


class SyncVectorEnv:
    """Runs every environment in the calling process."""

    def __init__(self, env_fns: Sequence[EnvFactory]):
        self.envs = [fn() for fn in env_fns]
        self.num_envs = len(self.envs)
        self.observation_space = self.envs[0].observation_space
        self.action_space = self.envs[0].action_space
        self._trackers = [_EpisodeTracker() for _ in self.envs]

    def reset(self, seeds: Optional[Sequence[int]] = None) -> np.ndarray:
        seeds = list(seeds) if seeds is not None else [None] * self.num_envs
        self._trackers = [_EpisodeTracker() for _ in self.envs]
        return np.stack([env.reset(seed=seed)[0] for env, seed in zip(self.envs, seeds)])

    def step(self, actions: np.ndarray) -> StepResult:
        results = [_step_with_reset(env, tracker, action)
                   for env, tracker, action in zip(self.envs, self._trackers, actions)]
        return _stack(results)

    def set_difficulty(self, difficulty: float) -> None:
        for env in self.envs:
            env.set_difficulty(difficulty)

    def close(self) -> None:
        for env in self.envs:
            env.close()


def _worker(remote, parent_remote, payload: bytes) -> None:
    parent_remote.close()
    env = cloudpickle.loads(payload)()
    tracker = _EpisodeTracker()
    try:
        while True:
            cmd, data = remote.recv()
            if cmd == "step":
                remote.send(_step_with_reset(env, tracker, data))
            elif cmd == "reset":
                tracker = _EpisodeTracker()
                remote.send(env.reset(seed=data)[0])
            elif cmd == "set_difficulty":
                env.set_difficulty(data)
                remote.send(None)
            elif cmd == "spaces":
                remote.send((env.observation_space, env.action_space))
            elif cmd == "close":
                env.close()
                remote.close()
                break
            else:
                raise NotImplementedError(f"`{cmd}` is not implemented in the worker")
    except (EOFError, KeyboardInterrupt):
        pass


class SubprocVectorEnv:
    """One pipe-connected worker process per environment."""

    def __init__(self, env_fns: Sequence[EnvFactory], start_method: Optional[str] = None):
        if start_method is None:
            start_method = "forkserver" if "forkserver" in mp.get_all_start_methods() else "spawn"
        ctx = mp.get_context(start_method)
        self.num_envs = len(env_fns)
        self.remotes, work_remotes = zip(*[ctx.Pipe() for _ in range(self.num_envs)])
        self.processes = []
        for work_remote, remote, env_fn in zip(work_remotes, self.remotes, env_fns):
            # daemon: workers must not outlive a crashed learner
            process = ctx.Process(target=_worker, args=(work_remote, remote, cloudpickle.dumps(env_fn)), daemon=True)
            process.start()
            self.processes.append(process)
            work_remote.close()
        self.remotes[0].send(("spaces", None))
        self.observation_space, self.action_space = self.remotes[0].recv()
        self.closed = False
        logger.info(f"Started {self.num_envs} environment workers ({start_method})")

    def reset(self, seeds: Optional[Sequence[int]] = None) -> np.ndarray:
        seeds = list(seeds) if seeds is not None else [None] * self.num_envs
        for remote, seed in zip(self.remotes, seeds):
            remote.send(("reset", seed))
        return np.stack([remote.recv() for remote in self.remotes])

    def step(self, actions: np.ndarray) -> StepResult:
        for remote, action in zip(self.remotes, actions):
            remote.send(("step", action))
        return _stack([remote.recv() for remote in self.remotes])

    def set_difficulty(self, difficulty: float) -> None:
        for remote in self.remotes:
            remote.send(("set_difficulty", difficulty))
        for remote in self.remotes:
            remote.recv()

    def close(self) -> None:
        if self.closed:
            return
        for remote in self.remotes:
            remote.send(("close", None))
        for process in self.processes:
            process.join()
        self.closed = True


def _stack(results) -> StepResult:
    obs, rewards, terminated, truncated, infos = zip(*results)
    return (np.stack(obs), np.asarray(rewards, dtype=float), np.asarray(terminated, dtype=bool),
            np.asarray(truncated, dtype=bool), list(infos))


def make_vector_env(env_fns: Sequence[EnvFactory], backend: str = "sync"):
    if backend == "subprocess":
        return SubprocVectorEnv(env_fns)
    if backend != "sync":
        raise ValueError(f"unknown vector backend: {backend}")
    return SyncVectorEnv(env_fns)


class NormalizedVecEnv:
    """
    Observation normalization around a vector env.

    The wrapper is the only writer of the normalizer: each step's batch of raw
    observations updates it (training mode) before the batch is normalized.
    """

    def __init__(self, venv, normalizer: Optional[ObservationNormalizer] = None,
                 training: bool = True, enabled: bool = True, clip: float = 10.0):
        self.venv = venv
        self.num_envs = venv.num_envs
        self.observation_space = venv.observation_space
        self.action_space = venv.action_space
        dim = int(np.prod(venv.observation_space.shape))
        self.normalizer = normalizer or ObservationNormalizer(dim, clip=clip)
        self.training = training
        self.enabled = enabled

    def _normalize(self, obs: np.ndarray) -> np.ndarray:
        if not self.enabled:
            return obs
        return self.normalizer.normalize(obs, training=self.training)

    def reset(self, seeds: Optional[Sequence[int]] = None) -> np.ndarray:
        return self._normalize(self.venv.reset(seeds))

    def step(self, actions: np.ndarray) -> StepResult:
        obs, rewards, terminated, truncated, infos = self.venv.step(actions)
        obs = self._normalize(obs)
        if self.enabled:
            for info in infos:
                if "final_observation" in info:
                    info["final_observation"] = self.normalizer.normalize(info["final_observation"], training=False)
        return obs, rewards, terminated, truncated, infos

    def set_difficulty(self, difficulty: float) -> None:
        self.venv.set_difficulty(difficulty)

    def close(self) -> None:
        self.venv.close()
