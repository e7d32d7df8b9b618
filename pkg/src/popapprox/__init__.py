"""Translated-Poisson approximation for equilibria of density dependent jump processes."""
from .errors import *  # noqa: F401,F403
from .model import (AssumptionReport, Jump, MODELS, ModelSpec, Skeleton, build_skeleton,
                    check_assumptions, declining, drift, drift_derivative, immigration_death,
                    load_model_config, make_model, random_walk, sis, superpose, three_jump,
                    total_rate, variance_rate)
from .generator import (LatticeDistribution, TruncatedGenerator, apply_generator,
                        apply_generator_decomposed, build_generator, dynkin_residual, error_term,
                        solve_equilibrium, stationary_distribution, transient_distribution)
from .stein import (CentredPoisson, norm_bounds_check, residual_sweep, shifted_stein,
                    stein_residual_terms, stein_solution)
from .metrics import (DistanceReport, local_limit_error, max_adjacent_diff, sup_point_distance,
                      tail_moments, total_variation, translate_tv)
from .montecarlo import (Estimate, LikelihoodStats, PathSample, coupled_point_difference,
                         empirical_transient_pmf, exit_probability, likelihood_ratio_experiment,
                         simulate_path)
from .harness import ConvergenceReport, SweepConfig, emit_report, fit_rate, run_sweep

__version__ = "0.1.0"
