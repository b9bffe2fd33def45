"""GIIN: graph-based intercategory and intermodality network on a small numpy autodiff core."""

from .config import ExperimentConfig, TrainConfig
from .model import GiinModel
from .schema import DEFAULT_SCHEMA, CategorySchema

__all__ = ["CategorySchema", "DEFAULT_SCHEMA", "ExperimentConfig", "GiinModel", "TrainConfig"]
__version__ = "0.1.0"
