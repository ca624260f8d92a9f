"""Deterministic federated-learning simulator for streaming keyword spotting."""

__version__ = "0.1.0"
