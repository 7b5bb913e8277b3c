from .exact import ExactDensity, exact_density
from .expansion import (DensityApprox, ExpansionOperator, ExpansionSpec, GaussianKernelParams,
                        density_approx, expansion_operator, expectation_approx, kernel_params,
                        taylor_coefficients)

__all__ = [
    "DensityApprox", "ExactDensity", "ExpansionOperator", "ExpansionSpec", "GaussianKernelParams",
    "density_approx", "exact_density", "expansion_operator", "expectation_approx",
    "kernel_params", "taylor_coefficients",
]
