"""Sampled-data SDE simulation and convergence checks."""
