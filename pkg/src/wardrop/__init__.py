"""Congestion networks: Wardrop equilibria, replicator learning, stochastic stability."""
__version__ = "0.1.0"
