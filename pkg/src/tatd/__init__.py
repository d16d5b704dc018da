"""CP decomposition of sparse temporal tensors with kernel smoothing of the time factor."""

from .model import FactorModel, evaluate, load_checkpoint, predict, save_checkpoint
from .optimizer import STRATEGIES, FitReport, TrainConfig, fit
from .smoothing import SmoothingSpec, build_smoothing
from .tensor_store import SparseTensor, ingest, slice_census, split, z_normalize

__version__ = "0.1.0"

__all__ = [
    "FactorModel", "FitReport", "STRATEGIES", "SmoothingSpec", "SparseTensor", "TrainConfig",
    "build_smoothing", "evaluate", "fit", "ingest", "load_checkpoint", "predict",
    "save_checkpoint", "slice_census", "split", "z_normalize",
]
