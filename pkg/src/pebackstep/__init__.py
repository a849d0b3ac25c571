"""Backstepping boundary stabilization and observers for a coupled
parabolic-elliptic PDE on the unit interval.

Submodules
----------
specfun
    Series evaluation of Bessel functions, ``erf`` and ``erfi``.
model
    Parameters, grid, finite-difference operators, eigenvalues.
kernels
    Closed-form and numerical backstepping kernels, Volterra transforms.
sim
    Time stepping of plant, controllers, observers and closed loops.
analysis
    Sufficient gain conditions, decay-rate fits, trajectory checks, sweeps.
cli
    JSON-config command-line runner.
"""

__version__ = "0.1.0"
