"""Layers and the two-pathway network, with analytic gradients."""

from ..params import ModelParams, count_parameters
from ._kernels import backend
from .layers import (
    batchnorm_backward,
    batchnorm_forward,
    channel_attention_backward,
    channel_attention_forward,
    depthwise_conv_backward,
    depthwise_conv_forward,
    global_avg_pool,
    maxpool2d,
    maxpool2d_backward,
    merge_frequency,
    pointwise_conv_backward,
    pointwise_conv_forward,
    softmax,
    split_frequency,
)
from .network import (
    BlockSpec,
    NetworkConfig,
    PRESETS,
    check_params,
    forward,
    init_params,
    inverted_residual_backward,
    inverted_residual_forward,
    network_backward,
    network_forward,
    paper_config,
    param_shapes,
    predict_proba,
    tiny_config,
    trainable,
)
