"""Simulation and verification toolkit for the two-parameter Poisson-Dirichlet diffusion."""
from .chain import (ChainClock, Partition, calibrate_clock, down_step, exact_generator_apply,
                    exact_stationary_small_n, exact_transition_matrix, pair_match_probability,
                    partition_from_simplex_point, up_step, updown_step)
from .engine import ChainTrajectory, Ensemble, run_ensemble, run_trajectory
from .rng import RngStream, sample_beta
from .sampling import GemSample, pd_power_sums, rank_gem, sample_gem, sample_pd_ranked
from .simplex import (PARAMS_GRID, MomentVector, Params, RankedMassVector, SmoothFunctional,
                      apply_A_phi, apply_A_psi, awkward_terms, deficiency, h_eps,
                      moment_ode_solve, moments_of, phi_m, stationary_moments)
from .verify import (MartingaleDiagnostic, TestReport, entrance_profile, martingale_test,
                     moment_curve_test, stationarity_test, stationary_moment_test)

__all__ = [
    "apply_A_phi",
    "apply_A_psi",
    "awkward_terms",
    "calibrate_clock",
    "ChainClock",
    "ChainTrajectory",
    "deficiency",
    "down_step",
    "Ensemble",
    "entrance_profile",
    "exact_generator_apply",
    "exact_stationary_small_n",
    "exact_transition_matrix",
    "GemSample",
    "h_eps",
    "martingale_test",
    "MartingaleDiagnostic",
    "moment_curve_test",
    "moment_ode_solve",
    "moments_of",
    "MomentVector",
    "pair_match_probability",
    "Params",
    "PARAMS_GRID",
    "Partition",
    "partition_from_simplex_point",
    "pd_power_sums",
    "phi_m",
    "rank_gem",
    "RankedMassVector",
    "RngStream",
    "run_ensemble",
    "run_trajectory",
    "sample_beta",
    "sample_gem",
    "sample_pd_ranked",
    "SmoothFunctional",
    "stationarity_test",
    "stationary_moment_test",
    "stationary_moments",
    "TestReport",
    "up_step",
    "updown_step",
]

__version__ = "0.1.0"
