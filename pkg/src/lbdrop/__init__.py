"""Learnable Bernoulli dropout for small dense networks."""

from .bayes import (
    BayesConfig,
    PavpuReport,
    PredictiveSummary,
    kl_regularizer,
    pavpu,
    pavpu_sweep,
    predictive_posterior,
)
from .errors import (
    ConfigError,
    ConsistencyError,
    DimensionError,
    LbdError,
    NumericError,
    UnsupportedEstimatorError,
)
from .estimators import (
    EstimatorDiagnostics,
    GradEstimate,
    arm_gradient,
    concrete_gradient,
    estimator_diagnostics,
    exact_gate_gradient,
    gaussian_gradient,
    reinforce_gradient,
)
from .gates import (
    GateSpec,
    arm_mask_pair,
    keep_probability,
    sample_bernoulli_masks,
    sample_concrete_mask,
    sample_gaussian_mask,
)
from .net import (
    ActivationCache,
    AdamState,
    Gradients,
    MlpModel,
    adam_step,
    backward_pass,
    empirical_loss,
    forward_pass,
)
from .sivae import (
    SivaeModel,
    beta_schedule,
    encode,
    gaussian_log_density,
    multinomial_log_likelihood,
    sivae_alpha_gradient,
    sivae_objective,
)

__all__ = [
    "ActivationCache",
    "AdamState",
    "BayesConfig",
    "ConfigError",
    "ConsistencyError",
    "DimensionError",
    "EstimatorDiagnostics",
    "GateSpec",
    "GradEstimate",
    "Gradients",
    "LbdError",
    "MlpModel",
    "NumericError",
    "PavpuReport",
    "PredictiveSummary",
    "SivaeModel",
    "UnsupportedEstimatorError",
    "adam_step",
    "arm_gradient",
    "arm_mask_pair",
    "backward_pass",
    "beta_schedule",
    "concrete_gradient",
    "empirical_loss",
    "encode",
    "estimator_diagnostics",
    "exact_gate_gradient",
    "forward_pass",
    "gaussian_gradient",
    "gaussian_log_density",
    "keep_probability",
    "kl_regularizer",
    "multinomial_log_likelihood",
    "pavpu",
    "pavpu_sweep",
    "predictive_posterior",
    "reinforce_gradient",
    "sample_bernoulli_masks",
    "sample_concrete_mask",
    "sample_gaussian_mask",
    "sivae_alpha_gradient",
    "sivae_objective",
]

__version__ = "0.1.0"
