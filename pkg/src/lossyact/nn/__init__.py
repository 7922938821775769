from .layers import (
    conv2d_backward,
    conv2d_forward,
    fc_backward,
    fc_forward,
    maxpool_backward,
    maxpool_forward,
    recompute_relu,
    relu_backward,
    relu_forward,
    softmax_xent,
)
from .net import DEFAULT_ARCHITECTURE, LayerKind, LayerSpec, Network, parse_architecture
from .optim import TrainState, sgd_momentum_step

__all__ = [
    "DEFAULT_ARCHITECTURE",
    "LayerKind",
    "LayerSpec",
    "Network",
    "TrainState",
    "conv2d_backward",
    "conv2d_forward",
    "fc_backward",
    "fc_forward",
    "maxpool_backward",
    "maxpool_forward",
    "parse_architecture",
    "recompute_relu",
    "relu_backward",
    "relu_forward",
    "sgd_momentum_step",
    "softmax_xent",
]
