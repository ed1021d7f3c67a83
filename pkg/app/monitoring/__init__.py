"""
Initialization module for monitoring system
"""
from app.monitoring.monitor import TrainingMonitor, collect_process_metrics

__all__ = ["TrainingMonitor", "collect_process_metrics"]
