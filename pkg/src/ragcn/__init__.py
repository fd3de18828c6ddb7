"""Occlusion-robust skeleton action recognition with a multi-stream
spatio-temporal GCN, self-contained on numpy.

Submodules: skeleton (domain types, synthetic data), ntu (recording parser),
preprocess (feature construction), degrade (test-time corruptions), autodiff
(tape engine), backbone (graph convolution stack), model (activation-guided
multi-stream network), harness (training/evaluation), dataio/checkpoint
(file formats), cli (command line).
"""

from .skeleton import (
    Dataset, LabeledSample, SequenceTensor, SkeletonGraph, SynthSpec,
    build_graph, generate_synthetic_dataset, ntu25_graph, validate_sequence,
)
from .degrade import DegradationSpec
from .backbone import HyperParams
from .model import RagcnParams, forward, init_ragcn, total_loss
from .harness import (
    TrainConfig, evaluate, finetune_multistream, pretrain_baseline,
    robustness_sweep,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset", "LabeledSample", "SequenceTensor", "SkeletonGraph",
    "SynthSpec", "build_graph", "generate_synthetic_dataset", "ntu25_graph",
    "validate_sequence", "DegradationSpec", "HyperParams", "RagcnParams",
    "forward", "init_ragcn", "total_loss", "TrainConfig", "evaluate",
    "finetune_multistream", "pretrain_baseline", "robustness_sweep",
    "__version__",
]
