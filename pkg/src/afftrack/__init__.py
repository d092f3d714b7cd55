"""Appearance-affinity multi-object tracking at desk scale.

The package pairs a small reverse-mode autodiff engine with an affinity
network that jointly embeds detections and predicts cross-frame
association probabilities, an accumulator-based on-line tracker, a
synthetic scene generator and a CLEAR-MOT style evaluator.
"""

__version__ = "0.1.0"

from .autograd import Tensor, backward, no_grad
from .labels import AssociationLabel, build_label, filter_occluded
from .model import (
    AffinityBundle,
    AffinityModel,
    FeatureMatrix,
    ModelConfig,
    association_accuracy,
    association_losses,
    full_config,
    micro_config,
    toy_config,
    train_model,
)
from .tracker import ModelAffinityProvider, OracleAffinityProvider, Tracker, TrackerParams

__all__ = [
    "Tensor",
    "backward",
    "no_grad",
    "AssociationLabel",
    "build_label",
    "filter_occluded",
    "AffinityBundle",
    "AffinityModel",
    "FeatureMatrix",
    "ModelConfig",
    "association_accuracy",
    "association_losses",
    "full_config",
    "micro_config",
    "toy_config",
    "train_model",
    "ModelAffinityProvider",
    "OracleAffinityProvider",
    "Tracker",
    "TrackerParams",
    "__version__",
]
