"""Landau damping toolkit.

Penrose stability certification, linearized density evolution by two
independent routes, nonlinear pseudo-spectral Vlasov-Poisson in the
free-transport frame, and the weighted-norm diagnostics that monitor
the damping mechanism on computed trajectories.
"""

__version__ = "0.1.0"
