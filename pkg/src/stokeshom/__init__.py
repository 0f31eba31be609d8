"""Numerical homogenization of Stokes flows with many small translating holes.

Modules
-------
kernels   closed-form sphere and annulus Stokes solutions, surface forces
config    particle clouds under the dilution assumptions, empirical moments
brinkman  MAC-grid Stokes-Brinkman solver with a discrete energy identity
nstokes   monopole mobility surrogate of the N-hole problem, wall correction
metrics   L^p field distances, dual Hölder / bounded-Lipschitz and W1 distances
harness   convergence study, rate fits, reports and the CLI
"""
__version__ = "0.1.0"
