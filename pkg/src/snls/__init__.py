"""Spectral Galerkin and modified implicit Euler simulation of the damped
stochastic nonlinear Schrödinger equation, with ergodicity and weak
convergence studies."""

from .experiments import (RateFit, StudyReport, StudySpec, ergodicity_study, fit_rate,
                          invariant_error_study, operator_check, run_study,
                          spatial_order_study, stationary_moment_study, temporal_order_study)
from .integrator import (SchemeStepper, StepConfig, StepFailure, StepReport, linear_gaussian_law,
                         run_trajectory, scheme_stationary_variance, solve_uniqueness_probe,
                         step_exact_linear, step_exponential_euler, step_scheme)
from .noise import (LevelMismatch, NoiseSpectrum, NoiseStream, make_power_spectrum,
                    refine_stream, sample_increment)
from .observables import (DEFAULT_C0, EnsembleStats, ObservableRecord, TimeAverage, accumulate,
                          ensemble_reduce, gaussian_expectation, record, test_function)
from .spectral import (ConfigurationError, GridWorkspace, LinearSpectrum, ModelParams,
                       apply_s_tau, apply_semigroup, basis_vector, embed, galerkin_cubic,
                       l4_norm, make_spectrum, project, sobolev_norm)

__version__ = "0.1.0"
