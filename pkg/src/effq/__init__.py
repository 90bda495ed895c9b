"""Efficient-Q learning dynamics for identical-interest stochastic games."""
