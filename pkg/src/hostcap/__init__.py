"""Hosting capacity analysis with a DistFlow feasibility oracle and pool-based active learning."""

__version__ = "0.1.0"
