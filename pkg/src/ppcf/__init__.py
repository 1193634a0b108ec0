"""Semiparametric spatial point process estimation with V-fold spatial cross-fitting.

Submodules:

- ``fields``     observation windows, lattice covariate fields, Gaussian random fields
- ``process``    point patterns, Poisson / log-Gaussian Cox simulation, random thinning
- ``model``      intensity models, quadrature and logistic pseudo-likelihoods, profile Newton
- ``nuisance``   spatial kernel regression of the nuisance curve and its theta-derivatives
- ``crossfit``   the V-fold cross-fitting estimator
- ``inference``  sandwich variance estimation, PCF fitting, Wald intervals
- ``harness``    simulation scenarios, table reproduction, file-based fitting
"""

__version__ = "0.1.0"
