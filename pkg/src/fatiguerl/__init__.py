"""Latent-state filtering and reinforcement learning for fatigue-robust
muscle stimulation control."""

__version__ = "0.1.0"
