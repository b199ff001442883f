"""Convolutional sparse coding autoencoder trained by closed-loop rate reduction."""

from .csc import ConvDictionary, FistaConfig, fista_encode, kkt_residual
from .networks import ARCHITECTURES, Network, get_architecture
from .rate import RateConfig, coding_rate, rate_reduction
from .tensor import NumericError, ShapeError
from .trainer import TrainConfig, TrainState, TrainingError, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
