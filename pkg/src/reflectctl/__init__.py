"""Singular stochastic control of a two-dimensional diffusion, solved as a reflection problem."""

__version__ = "0.1.0"
