"""Anti-exploration offline RL toolkit: exact tabular schemes and a TD3 agent
whose losses subtract a learned novelty bonus."""

__version__ = "0.1.0"
