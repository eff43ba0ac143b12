"""Causal Bayesian optimization with an unknown causal graph.

Minimize a target variable in a structural causal model by intervening on
manipulative variables, while maintaining a Bayesian posterior over which
variables are the target's direct parents.
"""

from .acquisition import (AcquisitionError, ExplorationSet,
                          build_exploration_set, causal_ei,
                          select_intervention, singleton_exploration_set)
from .cbo_loop import (RUNNERS, ExperimentConfig, IterationRecord, LoopError,
                       Trace, run_bo, run_cbo_known, run_cbo_u,
                       run_cbo_wrong, run_random)
from .dr_prior import (DrConfig, DrError, bootstrap_prior, chi_statistic,
                       point_estimate_parents)
from .metrics import (MetricReport, MetricsError, mean_accuracy, mean_f1,
                      parent_intervention_proportion, y_bar, y_star)
from .parent_posterior import (LINEAR, NONLINEAR, FourierFeatureMap,
                               GaussianBelief, ParentPosterior, ParentSet,
                               PosteriorConfig, PosteriorError, SetEntry,
                               Standardizer, featurize, init_beliefs,
                               log_increment, normalize, parent_marginals,
                               rbf_kernel, update)
from .scm import (BUILTIN_SCMS, Dag, Dataset, Intervention,
                  InterventionError, Mechanism, Noise, Scm, ScmError,
                  default_domains, evaluate_noiseless, generate_erdos_renyi,
                  load_scm_spec, make_epidemiology, make_healthcare,
                  make_toy, sample_interventional, sample_observational,
                  save_scm_spec)
from .surrogate import (CausalPrior, GpSurrogate, SurrogateError,
                        causal_prior_from_posterior, constant_prior, fit,
                        predict)

__version__ = "0.1.0"
