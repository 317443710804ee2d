"""Federated random-decision-tree forest with encrypted bank features."""

__version__ = "0.1.0"
