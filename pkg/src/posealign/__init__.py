"""Pose-aligned identity representations.

A desk-scale learning system: face-token features are projected into a
learnable dictionary space conditioned on Euler-angle embeddings, trained
with a symmetric contrastive objective so that representations of the same
identity under different poses coincide. Includes the dataset-curation
pipeline over pose tracks and analysis tooling.
"""

from .aligner import (
    AlignerConfig,
    AlignerParams,
    dictionary_weights,
    forward,
    global_rep,
    init_params,
    inject_pose,
    tokenize,
)
from .contrastive import contrastive_loss, cosine_sim_matrix, mi_lower_bound
from .encoding import encode_angle, encode_euler
from .geometry import BBox, EulerAngles, FrameDims, enlarge_bbox, normalize_angle
from .synth import SynthWorld, SynthWorldParams
from .train import TrainConfig, grad_check, retrieval_eval, train

__all__ = [
    "AlignerConfig",
    "AlignerParams",
    "BBox",
    "EulerAngles",
    "FrameDims",
    "SynthWorld",
    "SynthWorldParams",
    "TrainConfig",
    "contrastive_loss",
    "cosine_sim_matrix",
    "dictionary_weights",
    "encode_angle",
    "encode_euler",
    "enlarge_bbox",
    "forward",
    "global_rep",
    "grad_check",
    "init_params",
    "inject_pose",
    "mi_lower_bound",
    "normalize_angle",
    "retrieval_eval",
    "tokenize",
    "train",
]

__version__ = "0.1.0"
