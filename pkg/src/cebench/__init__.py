"""Cost-benchmarking estimators for cluster-randomized cash and in-kind trials."""

__version__ = "0.1.0"
