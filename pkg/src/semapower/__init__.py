"""Semantic-aware power allocation for UAV swarms: simulator, learners, baselines and harness."""

__version__ = "0.1.0"
