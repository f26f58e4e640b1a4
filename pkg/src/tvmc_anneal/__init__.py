"""Variational Monte Carlo simulation of quantum annealing in Ising spin glasses."""

__version__ = "0.1.0"
