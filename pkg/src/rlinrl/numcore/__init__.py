"""Minimal dense tensors, reverse-mode autodiff, layers and Adam."""
from .tensor import (
    Tensor, TapeError, no_grad, grad_enabled, as_tensor, concat, conv2d, upsample2d, relu,
    sigmoid, thresholded_relu, tanh, exp, log, square, tabs, clip, minimum, log_softmax, softmax,
    matmul, mean, tsum, reshape, transpose,
)
from .layers import (
    LayerSpec, Layer, Stack, Dense, Conv2d, ReLU, Sigmoid, ThresholdedReLU, Flatten, Upsample2d,
    LAYER_KINDS, ShapeError, ConfigError, build_layer, forward,
)
from .optim import Adam, OptimizerState, opt_step, clip_grad_norm
from .gradcheck import grad_check, GradCheckReport, KindResult, check_layer_kinds
from . import serialize

backward = Tensor.backward
