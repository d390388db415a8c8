"""Event-based geopolitical alignment scores, panel estimation of their
trade effects, and general-equilibrium counterfactuals."""

__version__ = "0.1.0"
