"""volmixer: multiscale-mixing volatility forecasting for daily market data."""

__version__ = "0.1.0"

from volmixer.autodiff import Tape, Tensor, backward
from volmixer.model import ModelConfig, TimeMixerModel, instance_normalize
from volmixer.training import Adam, TrainConfig, TrainReport, mse_loss, train

__all__ = [
    "Tape", "Tensor", "backward",
    "ModelConfig", "TimeMixerModel", "instance_normalize",
    "Adam", "TrainConfig", "TrainReport", "mse_loss", "train",
]
