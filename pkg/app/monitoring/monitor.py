"""
Monitoring service for training runs - rolling episode statistics and process health
"""
from collections import deque
from typing import Any, Deque, Dict, List, Optional
import logging
import os
import time

import psutil
from pydantic import BaseModel

logger = logging.getLogger(__name__)


class ProcessMetrics(BaseModel):
    """Process-level resource readings"""
    cpu_percent: float
    memory_rss_mb: float
    num_threads: int


class TrainingSnapshot(BaseModel):
    """Progress summary logged every few updates"""
    update: int
    steps: int
    episodes: int
    mean_reward: Optional[float] = None
    mean_episode_length: Optional[float] = None
    steps_per_second: float
    process: Optional[ProcessMetrics] = None


def collect_process_metrics(process: Optional[psutil.Process] = None) -> Optional[ProcessMetrics]:
    """Resource readings of the current process; None if they cannot be read."""
    try:
        process = process or psutil.Process(os.getpid())
        with process.oneshot():
            return ProcessMetrics(
                cpu_percent=process.cpu_percent(interval=None),
                memory_rss_mb=process.memory_info().rss / (1024 * 1024),
                num_threads=process.num_threads(),
            )
    except (psutil.Error, OSError) as e:
        logger.error(f"Error collecting process metrics: {str(e)}")
        return None


class TrainingMonitor:
    """
    Keeps the rolling window of finished episodes and logs progress.

    Resource readings only go to the log; they never enter the training log rows.
    """

    def __init__(self, window: int = 100, log_interval: int = 10):
        self.window = window
        self.log_interval = log_interval
        self.episode_rewards: Deque[float] = deque(maxlen=window)
        self.episode_lengths: Deque[int] = deque(maxlen=window)
        self.episodes = 0
        self.updates: List[Dict[str, Any]] = []
        self._process = psutil.Process(os.getpid())
        self._started = time.perf_counter()

    def record_episode(self, total_reward: float, length: int) -> None:
        self.episode_rewards.append(float(total_reward))
        self.episode_lengths.append(int(length))
        self.episodes += 1

    @property
    def mean_reward(self) -> Optional[float]:
        if not self.episode_rewards:
            return None
        return sum(self.episode_rewards) / len(self.episode_rewards)

    @property
    def mean_episode_length(self) -> Optional[float]:
        if not self.episode_lengths:
            return None
        return sum(self.episode_lengths) / len(self.episode_lengths)

    def record_update(self, row: Dict[str, Any]) -> None:
        self.updates.append(row)
        update = int(row["update"])
        if update % self.log_interval == 0:
            self.log_progress(update, int(row["steps"]))

    def snapshot(self, update: int, steps: int) -> TrainingSnapshot:
        elapsed = max(time.perf_counter() - self._started, 1e-9)
        return TrainingSnapshot(
            update=update,
            steps=steps,
            episodes=self.episodes,
            mean_reward=self.mean_reward,
            mean_episode_length=self.mean_episode_length,
            steps_per_second=steps / elapsed,
            process=collect_process_metrics(self._process),
        )

    def log_progress(self, update: int, steps: int) -> TrainingSnapshot:
        snap = self.snapshot(update, steps)
        reward = f"{snap.mean_reward:.3f}" if snap.mean_reward is not None else "n/a"
        message = (f"Update {update}: {steps} steps, {snap.episodes} episodes, "
                   f"mean reward {reward}, {snap.steps_per_second:.0f} steps/s")
        if snap.process is not None:
            message += f", cpu {snap.process.cpu_percent:.0f}%, rss {snap.process.memory_rss_mb:.0f} MB"
        logger.info(message)
        return snap
