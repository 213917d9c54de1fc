"""Simulated dynamic tactile sensing: probe forward model, maximum-entropy
actor-critic force regulation, coarse/fine inclusion localization and
mechanical-property estimation."""

__version__ = "0.1.0"
