"""Simulation and diagnostics for billiard flows, Gibbs-Markov semiflows and suspensions."""

__version__ = "0.1.0"
