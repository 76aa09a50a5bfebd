"""Mixed-membership Plackett-Luce models for multivariate partial
rankings, fit by variational EM.

Public surface: ranking primitives (``Ranking``, ``pl_log_mass``,
``pl_sample``), the model containers (``RankDataset``, ``ModelParams``,
``VariationalParams``), the fitting driver (``fit``, ``FitConfig``), the
experiment machinery (``select_k``, ``bootstrap_ci``, ``goodness_of_fit``,
``report_summaries``), and IO (``load_dataset``, ``save_results``).
"""
from .dataio import (
    DataError,
    RunManifest,
    dataset_digest,
    load_dataset,
    load_results,
    load_schema,
    save_results,
)
from .driver import (
    BootstrapResult,
    FitConfig,
    FitResult,
    GofResult,
    bootstrap_ci,
    conditional_membership,
    fit,
    goodness_of_fit,
    held_out_elbo,
    report_summaries,
    seed_params,
    select_k,
    two_step_init,
)
from .estep import run_estep
from .kernels import BACKEND
from .model import (
    FixedSubgroupSpec,
    ModelParams,
    RankDataset,
    VariationalParams,
    compute_elbo,
    exact_log_marginal,
    generate_dataset,
    make_fixed_theta,
)
from .mstep import BarrierSchedule, LineSearchConfig, update_alpha, update_theta
from .plackett_luce import (
    Ranking,
    StructuralError,
    enumerate_rankings,
    pl_log_mass,
    pl_sample,
    validate_support,
)
from .special import digamma, log_gamma, trigamma

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BarrierSchedule",
    "BootstrapResult",
    "DataError",
    "FitConfig",
    "FitResult",
    "FixedSubgroupSpec",
    "GofResult",
    "LineSearchConfig",
    "ModelParams",
    "RankDataset",
    "Ranking",
    "RunManifest",
    "StructuralError",
    "VariationalParams",
    "bootstrap_ci",
    "compute_elbo",
    "conditional_membership",
    "dataset_digest",
    "digamma",
    "enumerate_rankings",
    "exact_log_marginal",
    "fit",
    "generate_dataset",
    "goodness_of_fit",
    "held_out_elbo",
    "load_dataset",
    "load_results",
    "load_schema",
    "log_gamma",
    "make_fixed_theta",
    "pl_log_mass",
    "pl_sample",
    "report_summaries",
    "run_estep",
    "save_results",
    "seed_params",
    "select_k",
    "trigamma",
    "two_step_init",
    "update_alpha",
    "update_theta",
    "validate_support",
    "__version__",
]
