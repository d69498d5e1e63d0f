"""Simulation backends and the vectorised training environment."""
