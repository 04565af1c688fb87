"""Gait-video screening pipeline.

Framework-free: a small float64 autograd core drives a convolutional
backbone, DTW-based gait-phase clustering, cross-attention over phase bags,
text-guided fusion and a dual-head classifier, trained with cross-entropy,
borderline binary cross-entropy and triplet losses.
"""

from .autograd import Tape, Tensor, grad_check, tape
from .datasynth import (DatasetConfig, FrameSequence, SwayProfile,
                        generate_dataset, generate_sequence, load_dataset,
                        load_text_embeddings, save_dataset)
from .dtwcluster import (cluster_bags, distance_matrix, dtw_distance,
                         frame_features, partition_sequence)
from .kernels import BACKEND
from .losses import (BatchLabels, TripletConfig, binary_cross_entropy,
                     cross_entropy, total_loss, triplet_loss)
from .model import (AttentionBlockParams, GaitScreenNet, HeadOutputs,
                    ModelConfig, cross_attention, load_checkpoint,
                    save_checkpoint)
from .trainer import (EvalReport, PipelineOptions, SamplerConfig,
                      TrainerConfig, ablate, evaluate, imbalance_sweep,
                      sample_batch, train)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "AttentionBlockParams", "BatchLabels", "DatasetConfig",
    "EvalReport", "FrameSequence", "GaitScreenNet", "HeadOutputs",
    "ModelConfig", "PipelineOptions", "SamplerConfig", "SwayProfile",
    "Tape", "Tensor", "TrainerConfig", "TripletConfig", "ablate",
    "binary_cross_entropy", "cluster_bags", "cross_attention",
    "cross_entropy", "distance_matrix", "dtw_distance", "evaluate",
    "frame_features", "generate_dataset", "generate_sequence", "grad_check",
    "imbalance_sweep", "load_checkpoint", "load_dataset",
    "load_text_embeddings", "partition_sequence", "sample_batch",
    "save_checkpoint", "save_dataset", "tape", "total_loss", "train",
    "triplet_loss",
]
