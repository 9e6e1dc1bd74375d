"""Numerical laboratory for degenerate Ito SDEs ``dX = sqrt(1/psi) sigma(X) dW + H_hat(X) dt``."""

from .coeff import (
    CoefficientSet,
    DriftMode,
    Factorization,
    MatrixField,
    ScalarField,
    SdeSpec,
    VectorField,
    assemble_drift_G,
    divergence_matrix,
    factorize,
    sigma_hat,
)

__version__ = "0.1.0"
