"""Datasets, training, evaluation, ablation and video processing."""

from .config import PROFILES, TrainConfig, load_config, profile
from .data import (
    Dataset,
    list_images,
    load_dataset,
    load_images,
    read_image,
    split,
    write_image,
)
from .evaluation import (
    R_GRID,
    AblationTable,
    Enhanced,
    EvalTable,
    Variant,
    ablate,
    dim_only,
    enhance,
    evaluate,
    parse_variants,
)
from .training import Checkpoint, LogRow, train, train_step
from .video import FrameRecord, list_frames, process_video, process_video_dir

__all__ = [
    "PROFILES",
    "R_GRID",
    "AblationTable",
    "Checkpoint",
    "Dataset",
    "Enhanced",
    "EvalTable",
    "FrameRecord",
    "LogRow",
    "TrainConfig",
    "Variant",
    "ablate",
    "dim_only",
    "enhance",
    "evaluate",
    "list_frames",
    "list_images",
    "load_config",
    "load_dataset",
    "load_images",
    "parse_variants",
    "process_video",
    "process_video_dir",
    "profile",
    "read_image",
    "split",
    "train",
    "train_step",
    "write_image",
]
