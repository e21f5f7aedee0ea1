"""Regularization-based model predictive control for linear DAEs."""
