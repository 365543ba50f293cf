"""kdcontrast."""

__all__ = (
    "__version__",
    "ObjectiveConfig",
    "TrainConfig",
    "StudentEncoder",
    "grad_check",
    "kdmcse_loss",
    "train",
)

__version__ = "0.1.0"

from .config import ObjectiveConfig, TrainConfig
from .encoder import StudentEncoder
from .gradcheck import grad_check
from .objectives import kdmcse_loss
from .trainer import train
