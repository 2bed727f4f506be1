"""Desk-scale lab for studying how small ReLU networks extrapolate toward their
optimal constant solution on out-of-distribution inputs."""

__version__ = "0.1.0"
