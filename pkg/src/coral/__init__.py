"""Coral: a desk-scale multi-turn empathetic chat model and serving stack."""

__version__ = "0.1.0"
