"""Minimax hinge-loss SVM for conditional treatment-effect estimation."""

__version__ = "0.1.0"
