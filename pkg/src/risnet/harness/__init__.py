"""Training, evaluation, persistence and the command line."""

from .config import TrainConfig
from .evaluation import EvalReport, evaluate
from .io import FormatError, load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .training import Metrics, train

__all__ = ["TrainConfig", "EvalReport", "evaluate", "FormatError", "load_checkpoint",
           "load_dataset", "save_checkpoint", "save_dataset", "Metrics", "train"]
