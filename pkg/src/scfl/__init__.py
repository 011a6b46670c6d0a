"""Stochastic coded federated learning simulator.

Linear regression trained by federated gradient descent where clients upload
a privacy-preserving coded copy of their data once, and a server fills in for
stragglers with a gradient computed on the composite coded data.
"""

from .coding import CodingConfig, encode_dataset, privacy_budget, calibrate_sigma
from .data import FederatedDataset, generate_synthetic, skewed_partition
from .engine import StrategyConfig, train
from .errors import ConfigError, DivergenceError, InfiniteLeakageError, ScflError, ShapeError
from .network import DelayProfile, sample_profile
from .numerics import RngStream

__version__ = "0.1.0"
