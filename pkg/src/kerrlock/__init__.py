"""Steady states and Wigner negativity of injection-locked Kerr lasers and polariton condensates."""

__version__ = "0.1.0"
