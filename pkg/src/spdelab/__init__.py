"""Smoothness of laws of SPDE solutions: spectral quadrature, lattice Monte Carlo and Besov diagnostics."""
__version__ = "0.1.0"

from .coefficients import Coefficient, resolve_coefficient
from .density import (BesovReport, DensityEstimate, GridFunction, besov_norm, criterion_decay,
                      finite_difference, gaussian_derivative_l1, hermite, kde, master_bound_check)
from .hypotheses import (ExponentReport, analytic_exponents, check_A1, check_A3, compute_g, compute_g1,
                         compute_g2, compute_increments, fit_exponent, optimal_parameters)
from .kernels import (ModelSpec, SpectralKernel, SpectralMeasure, eval_kernel, make_model,
                      measure_radial_weight, sup_kernel_sq)
from .quadrature import QuadratureConfig
from .simulator import (FieldState, LatticeGrid, NoiseSynth, ReplicaResult, increment_moment,
                        isometry_check, simulate_at_origin, simulate_linear_exact, smoothing_pair,
                        step, synthesize_increment)
