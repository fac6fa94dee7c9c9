"""Rare-event tail probabilities by sequential importance sampling with resampling."""

from .engine import ParticleSystem, SisrResult, direct_mc, gamma, run_sisr
from .errors import (BracketError, ConfigError, DegenerateWeights, DomainError,
                     InfeasibleEvent, NonConvergence, NumericalError, PopulationCollapse,
                     SisrError)
from .exp_family import (CumulantModel, LevelSet, argmax_over_M, compute_I, rate,
                         theta_of_mu, theta_star)
from .harness import ExperimentConfig, RunReport, parse_config, run_experiment, run_subgroups
from .models import EventSpec, ModelSpec, event_holds, lambda_pw, sample_increment, u_drift
from .schedules import WeightSchedule
from .spectral import DiscreteChain, discretize_example5, log_perron, psi_markov, solve_tilt

__version__ = "0.1.0"
