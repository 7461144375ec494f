"""3D (and depth-1 2D) convolutional feature extractor."""

from .cost import CostParams, conv_cost, ensemble_cost, network_cost
from .layers import (
    BatchNorm,
    Conv,
    Flatten,
    FullyConnected,
    MaxPool,
    ReLU,
    SoftmaxOutput,
    batchnorm_forward,
    conv_forward,
    cross_entropy,
    maxpool_forward,
    softmax,
)
from .network import (
    FEATURE_WIDTH,
    PRESET_BLOCKS,
    NetworkSpec,
    backward,
    extract_features,
    forward,
    init_params,
    learnable_keys,
    network_preset,
    predict_proba,
)
from .train import TrainConfig, evaluate, train

__all__ = [
    "BatchNorm", "Conv", "CostParams", "FEATURE_WIDTH", "Flatten", "FullyConnected",
    "MaxPool", "NetworkSpec", "PRESET_BLOCKS", "ReLU", "SoftmaxOutput", "TrainConfig",
    "backward", "batchnorm_forward", "conv_cost", "conv_forward", "cross_entropy",
    "ensemble_cost", "evaluate", "extract_features", "forward", "init_params",
    "learnable_keys", "maxpool_forward", "network_cost", "network_preset",
    "predict_proba", "softmax", "train",
]
