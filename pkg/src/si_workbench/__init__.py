"""Workbench for two-step shape-invariant potentials from type A 2-fold SUSY."""

__version__ = "0.1.0"
