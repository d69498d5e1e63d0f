"""Learner: losses, advantage estimation, training loop and evaluation."""
