"""Effective viscosity of suspensions of rigid active particles.

Periodic cell problems on a torus, solved spectrally with rigid-inclusion
constraints, feed Monte Carlo estimates of the passive and active effective
viscosity tensors; closed-form dilute expansions serve as oracles.
"""
__version__ = "0.1.0"
