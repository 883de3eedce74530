from .tensor import Tensor, tensor, concat, minimum, conv2d_valid, grad_check
from .layers import (LayerSpec, fc, conv, RELU, TANH, FLATTEN, conv_out_size,
                     conv_chain_sizes, apply_layer, apply_sequence, init_sequence,
                     init_layer_params, param_names, KINDS)
from .optim import ParamStore, adam_step, grads_from_leaves
from .checkpoint import save_checkpoint, load_checkpoint

__all__ = [
    "Tensor", "tensor", "concat", "minimum", "conv2d_valid", "grad_check",
    "LayerSpec", "fc", "conv", "RELU", "TANH", "FLATTEN", "conv_out_size",
    "conv_chain_sizes", "apply_layer", "apply_sequence", "init_sequence",
    "init_layer_params", "param_names", "KINDS",
    "ParamStore", "adam_step", "grads_from_leaves",
    "save_checkpoint", "load_checkpoint",
]
