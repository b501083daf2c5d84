"""Desk-scale iris presentation-attack detection lab.

A from-scratch miniature densely connected CNN (manual forward and
backward passes over numpy), a procedural generator for bonafide and
attack iris imagery, biometric PAD metrics, Grad-CAM saliency, exact
t-SNE embeddings and spatial-frequency robustness analysis, behind one
`irispad` command-line tool.
"""

from .explain import (
    Embedding,
    Heatmap,
    average_heatmap,
    extract_block_features,
    grad_cam,
    tsne,
)
from .freq import (
    SweepResult,
    add_noise,
    cutoff_sweep,
    fft2_centered,
    ifft2_centered,
    radial_filter,
    robustness_table,
)
from .metrics import (
    EvalReport,
    build_report,
    d_prime,
    histogram,
    relative_decrease,
    select_threshold,
    tdr_at_fdr,
)
from .model import (
    CheckpointError,
    ConfigError,
    ForwardTrace,
    MiniDenseNet,
    ModelConfig,
    build_model,
    forward,
    load_checkpoint,
    pa_scores,
    save_checkpoint,
)
from .synthdata import (
    CLASSES,
    DatasetManifest,
    LabeledImage,
    crop_and_resize,
    generate,
    load_dir,
    make_split,
    train_test_splits,
)
from .train import TrainConfig, TrainLog, evaluate_scores
from .train import train as train_model

__version__ = "0.1.0"

__all__ = [
    "CLASSES",
    "CheckpointError",
    "ConfigError",
    "DatasetManifest",
    "Embedding",
    "EvalReport",
    "ForwardTrace",
    "Heatmap",
    "LabeledImage",
    "MiniDenseNet",
    "ModelConfig",
    "SweepResult",
    "TrainConfig",
    "TrainLog",
    "add_noise",
    "average_heatmap",
    "build_model",
    "build_report",
    "crop_and_resize",
    "cutoff_sweep",
    "d_prime",
    "evaluate_scores",
    "extract_block_features",
    "fft2_centered",
    "forward",
    "generate",
    "grad_cam",
    "histogram",
    "ifft2_centered",
    "load_checkpoint",
    "load_dir",
    "make_split",
    "pa_scores",
    "radial_filter",
    "relative_decrease",
    "robustness_table",
    "save_checkpoint",
    "select_threshold",
    "tdr_at_fdr",
    "train_model",
    "train_test_splits",
    "tsne",
]
