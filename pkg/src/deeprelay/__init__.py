"""Amplify-and-forward relay networks with tanh relays, trained end to end by backpropagation."""

from .experiments import STUDIES, GainStudy, evaluate, trained_curve
from .linear import LinearOptConfig, analyze_linear, optimize_linear
from .modem import ModulationScheme, estimate_ber, modulate
from .network import LayeredNetwork, NoiseModel, RelayParams, forward, forward_batch, forward_noiseless
from .topology import SpatialConfig, build_fig3, build_fig4, generate_spatial
from .trainer import TrainConfig, initialize, train

__all__ = [
    "LayeredNetwork", "RelayParams", "NoiseModel", "forward", "forward_batch", "forward_noiseless",
    "ModulationScheme", "modulate", "estimate_ber",
    "TrainConfig", "train", "initialize",
    "LinearOptConfig", "optimize_linear", "analyze_linear",
    "SpatialConfig", "build_fig3", "build_fig4", "generate_spatial",
    "GainStudy", "STUDIES", "evaluate", "trained_curve",
]
