"""Safe multi-task Bayesian optimization with robust uniform error bounds."""

__version__ = "0.1.0"

from .kernels import (
    CorrelationMatrix,
    KernelParams,
    gram,
    kernel_lipschitz,
    multitask_kernel,
    multitask_lipschitz,
    se_kernel,
)
from .gp import MultiTaskDataset, Posterior, fit, log_marginal_likelihood
from .hyperposterior import (
    ConfidenceSet,
    EmpiricalHyperPosterior,
    HyperPrior,
    McmcConfig,
    confidence_set,
    lkj_log_density,
    sample_hyperposterior,
)
from .bounds import (
    DiscretizationSpec,
    LatentNormSpec,
    ScalingBundle,
    beta_bayes,
    beta_freq,
    beta_freq_robust,
    covering_number,
    estimate_feature_lipschitz,
    gamma_factor,
    kernel_dominance,
    modulus_mu,
    modulus_sigma,
    nu_factor,
    operator_norm_lambda,
    rkhs_norm_exact,
    sample_lipschitz_bound,
    scaling_bundle,
)
from .safeopt import (
    CandidateGrid,
    LoopConfig,
    SafeSet,
    TraceRecord,
    Transforms,
    acquire_main,
    acquire_supplementary,
    fit_transforms,
    make_grid,
    run,
    run_repetition,
    safe_set,
    select_sigma_prime,
    step,
)
from .benchmarks import (
    LaserChainProblem,
    SyntheticProblem,
    branin,
    branin_problem,
    h2_cost,
    laser_problem,
    lyapunov_solve,
    powell,
    powell_problem,
    shifted_supplementary,
)
from .verify import CoverageReport, bayesian_coverage, frequentist_coverage
from .config import ExperimentConfig, parse_config, serialize_config
