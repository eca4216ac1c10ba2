"""Weakly supervised temporal anomaly segmentation with constrained soft-DTW alignment."""

from .dtw import build_cost_matrix, decode_path, sdtw_backward, sdtw_forward
from .inference import segment_dataset, segment_instance
from .model import ScorerModel, load_model, save_model
from .series import Dataset, SynthConfig, TemporalInstance, generate_synthetic, load_dataset, save_dataset
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "ScorerModel",
    "SynthConfig",
    "TemporalInstance",
    "TrainConfig",
    "build_cost_matrix",
    "decode_path",
    "generate_synthetic",
    "load_dataset",
    "load_model",
    "save_dataset",
    "save_model",
    "sdtw_backward",
    "sdtw_forward",
    "segment_dataset",
    "segment_instance",
    "train",
]
