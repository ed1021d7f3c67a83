from functools import partial

import numpy as np
import pytest

from app.models import AirframeConfig, EnvironmentConfig
from app.monitoring.monitor import TrainingMonitor, collect_process_metrics
from app.services.environment import AttitudeControlEnv
from app.services.vec_env import NormalizedVecEnv, SubprocVectorEnv, SyncVectorEnv, make_vector_env

SEEDS = [11, 12]


def short_env_factories(n=2, max_steps=5):
    return [partial(AttitudeControlEnv, AirframeConfig(), EnvironmentConfig(max_steps=max_steps))] * n


def roll_out(venv, steps=12):
    obs = [venv.reset(SEEDS)]
    rewards, infos = [], []
    for _ in range(steps):
        o, r, _, _, info = venv.step(np.zeros((venv.num_envs, 3)))
        obs.append(o)
        rewards.append(r)
        infos.append(info)
    venv.close()
    return np.array(obs), np.array(rewards), infos


def test_sync_runner_auto_resets_with_episode_stats():
    _, rewards, infos = roll_out(SyncVectorEnv(short_env_factories()))
    finished = [info for info in infos[4] if "episode" in info]
    assert len(finished) == 2
    for actor, info in enumerate(infos[4]):
        assert info["episode"]["l"] == 5
        assert info["episode"]["r"] == pytest.approx(rewards[:5, actor].sum())
        assert "final_observation" in info
    assert all("episode" not in info for info in infos[5])


def test_subprocess_runner_matches_sync():
    sync_obs, sync_rewards, _ = roll_out(SyncVectorEnv(short_env_factories()))
    proc_obs, proc_rewards, _ = roll_out(SubprocVectorEnv(short_env_factories(), start_method="spawn"))
    np.testing.assert_array_equal(sync_obs, proc_obs)
    np.testing.assert_array_equal(sync_rewards, proc_rewards)


def test_unknown_backend():
    with pytest.raises(ValueError):
        make_vector_env(short_env_factories(), backend="threads")


def test_normalizer_updates_only_in_training():
    venv = NormalizedVecEnv(SyncVectorEnv(short_env_factories()))
    venv.reset(SEEDS)
    venv.step(np.zeros((2, 3)))
    assert venv.normalizer.count == 4
    venv.training = False
    venv.step(np.zeros((2, 3)))
    assert venv.normalizer.count == 4
    venv.close()


def test_final_observation_is_normalized_without_updating_statistics():
    venv = NormalizedVecEnv(SyncVectorEnv(short_env_factories(max_steps=2)))
    venv.reset(SEEDS)
    venv.step(np.zeros((2, 3)))
    _, _, _, truncated, infos = venv.step(np.zeros((2, 3)))
    assert truncated.all()
    # only the reset batch and the two step batches are counted
    assert venv.normalizer.count == 6
    for info in infos:
        assert np.all(np.abs(info["final_observation"]) <= venv.normalizer.clip)
    venv.close()


def test_disabled_normalization_passes_raw_observations():
    raw = SyncVectorEnv(short_env_factories()).reset(SEEDS)
    wrapped = NormalizedVecEnv(SyncVectorEnv(short_env_factories()), enabled=False)
    np.testing.assert_array_equal(wrapped.reset(SEEDS), raw)


def test_difficulty_reaches_every_actor():
    venv = SyncVectorEnv(short_env_factories())
    venv.set_difficulty(0.4)
    assert all(env.difficulty == 0.4 for env in venv.envs)


def test_monitor_rolling_window():
    monitor = TrainingMonitor(window=3, log_interval=1)
    assert monitor.mean_reward is None and monitor.mean_episode_length is None
    for reward, length in [(-1.0, 10), (-2.0, 20), (-3.0, 30), (-4.0, 40)]:
        monitor.record_episode(reward, length)
    assert monitor.episodes == 4
    assert monitor.mean_reward == pytest.approx(-3.0)
    assert monitor.mean_episode_length == pytest.approx(30.0)
    snap = monitor.log_progress(update=1, steps=100)
    assert snap.episodes == 4 and snap.steps_per_second > 0


def test_process_metrics():
    metrics = collect_process_metrics()
    assert metrics is not None
    assert metrics.memory_rss_mb > 0 and metrics.num_threads >= 1
