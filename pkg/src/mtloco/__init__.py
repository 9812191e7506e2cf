"""Multitask locomotion with mixture-of-experts policies at desk scale."""

__version__ = "0.1.0"
