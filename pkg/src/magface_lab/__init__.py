"""Numerical laboratory for magnitude-aware margin losses on hypersphere embeddings."""

from .errors import (
    ConfigurationError,
    DegenerateAggregationError,
    DomainError,
    PropertyViolation,
    StatisticsError,
    TrainingDivergence,
)
from .losses import (
    ClassHead,
    FeatureBatch,
    LossBreakdown,
    arcface_backward,
    arcface_forward,
    cosface_backward,
    cosface_forward,
    loss_and_grad,
    magcosface_backward,
    magcosface_forward,
    magface_backward,
    magface_forward,
    softmax_backward,
    softmax_forward,
)
from .magparams import (
    MagParams,
    lambda_lower_bound,
    margin,
    margin_deriv,
    regularizer,
    regularizer_deriv,
)
from .theory import ScalarLossConfig, lemma1_probability, optimal_magnitude, scalar_loss
from .toy import SyntheticSpec, TrainConfig, generate_dataset, train

__version__ = "0.1.0"
