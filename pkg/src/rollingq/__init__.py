"""Class-token attention fusion with attention-imbalance diagnostics and query rotation."""

from .controller import RollingQConfig
from .model import ModelSpec
from .synthdata import SyntheticSpec
from .trainer import TrainConfig, run

__all__ = ["ModelSpec", "RollingQConfig", "SyntheticSpec", "TrainConfig", "run"]
__version__ = "0.1.0"
