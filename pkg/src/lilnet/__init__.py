"""Locally isometric layers: training, diagnostics and adversarial evaluation."""

__version__ = "0.1.0"
