"""Two-stream video activity recognition, self-contained on numpy.

The pipeline: dense optical flow between consecutive frames, one
convolutional feature extractor per stream capped with global average and
maximum pooling, a 4-step LSTM fusing the pooled vectors into a per-frame
probability representation, a temporal LSTM predicting the clip label, a
multi-task cross-entropy objective trained with an rmsprop-then-SGD
schedule, and an evaluation suite (AP/mAP, confusion matrix, input
saliency). Everything runs on a small reverse-mode autodiff engine with
finite-difference gradient checking.
"""

from .backbone import Backbone, BackboneConfig, build_backbone, extract_features
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig, RunConfig, load_config, parse_config, serialize_config
from .data import (
    SynthConfig,
    VideoClip,
    generate_synthetic_dataset,
    load_clip_ppm_sequence,
    read_manifest,
    save_clip,
    write_manifest,
)
from .errors import ConfigError, DataError, NumericError, ShapeError
from .evaluation import (
    ConfusionMatrix,
    SaliencyResult,
    UndefinedAPError,
    average_precision,
    confusion_matrix,
    input_saliency,
    mean_average_precision,
)
from .flow import (
    FlowField,
    FlowParams,
    estimate_flow,
    flow_to_color,
    preprocess_clip,
    read_flo,
    write_flo,
)
from .model import (
    LossBreakdown,
    TwoStreamModel,
    build_model,
    categorical_cross_entropy,
    forward_clip,
    frame_representation,
    frame_representation_sum_variant,
    one_hot,
    recognize_activity,
    total_loss,
)
from .tensor import Tensor, check_gradients
from .training import (
    OptimizerState,
    TrainingConfig,
    TrainingHistory,
    prepare_samples,
    rmsprop_step,
    sgd_step,
    train,
)

__version__ = "0.1.0"
