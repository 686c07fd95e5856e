"""Numerical white-noise path integrals.

Modules
-------
specfun
    Hermite polynomials, Jacobi theta and simplex volumes.
fock
    Truncated symmetric Fock space: Wick and Wiener products, scaling,
    Donsker deltas, transforms and norms.
appell1d
    Appell systems for one-dimensional non-Gaussian densities.
closedform
    Closed-form propagators and T-transforms.
dyson
    Perturbation-series engines and transition amplitudes.
dossmc
    Complex-scaled Brownian-bridge Monte Carlo.
cli
    Command-line front end.
"""

from .errors import DomainError, ToleranceError

__version__ = "0.1.0"

__all__ = ["DomainError", "ToleranceError", "__version__"]
