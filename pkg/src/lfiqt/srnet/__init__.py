from .checkpoint import load_checkpoint, save_checkpoint
from .model import SrModel, SrModelConfig, forward, gradient, loss_mse
from .patches import crop_to_lf, extract_patches, stitch, tile_grid, weight_partition
from .train import TrainConfig, enhance, evaluate_mse, history_csv, train

__all__ = [
    "SrModel",
    "SrModelConfig",
    "TrainConfig",
    "crop_to_lf",
    "enhance",
    "evaluate_mse",
    "extract_patches",
    "forward",
    "gradient",
    "history_csv",
    "load_checkpoint",
    "loss_mse",
    "save_checkpoint",
    "stitch",
    "tile_grid",
    "train",
    "weight_partition",
]
