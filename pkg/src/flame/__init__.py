"""Semiparametric logistic regression with a per-episode risk accumulation function."""

from .diagnostics import Diagnostics, diagnose
from .estimator import EpisodeBasisTransformer, FlameClassifier
from .exceptions import (ConfigurationError, DataError, ExtrapolationError, SamplerError,
                         StaleDrawsError)
from .inference import (ContrastResult, FlamePosterior, RafEstimate, Scenario,
                        contrast_scenarios, fit_posterior, loo_elpd, raf_curve,
                        scenario_contrast, scenario_probability)
from .io_cli import RunConfig, load_dataset, load_draws, save_draws, write_dataset
from .model import (AggregatedDesign, Dataset, ModelSpec, ParameterVector, SubjectRecord,
                    aggregate_design, log_likelihood, log_prior)
from .sampler import PosteriorDraws, SamplerConfig, sample
from .sim import SimConfig, TrueRaf, generate_dataset, ise, run_benchmark, true_raf_eval
from .splines import KnotVector, basis_matrix, build_knots, difference_penalty, eval_basis

__version__ = "0.1.0"
