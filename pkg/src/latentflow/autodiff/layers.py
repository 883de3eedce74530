"""Layer specs, deterministic initialization, and forward application.

Six layer kinds cover every network in the package: FullyConnected,
Conv2dValidStride2, ReLU, Tanh, Flatten, Concat.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from .tensor import Tensor, concat, conv2d_valid

KINDS = ("FullyConnected", "Conv2dValidStride2", "ReLU", "Tanh", "Flatten", "Concat")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_features: int = 0
    out_features: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 3
    stride: int = 2
    # "kaiming" for ReLU-fed layers, "xavier" for tanh/linear outputs
    init: str = "kaiming"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.init not in ("kaiming", "xavier"):
            raise ConfigError(f"unknown init scheme {self.init!r}")


def fc(n_in: int, n_out: int, init: str = "kaiming") -> LayerSpec:
    return LayerSpec("FullyConnected", in_features=n_in, out_features=n_out, init=init)


def conv(c_in: int, c_out: int, kernel_size: int = 3, stride: int = 2,
         init: str = "kaiming") -> LayerSpec:
    return LayerSpec("Conv2dValidStride2", in_channels=c_in, out_channels=c_out,
                     kernel_size=kernel_size, stride=stride, init=init)


RELU = LayerSpec("ReLU")
TANH = LayerSpec("Tanh")
FLATTEN = LayerSpec("Flatten")


def conv_out_size(n: int, kernel_size: int = 3, stride: int = 2) -> int:
    """Valid-convolution output size: floor((n - k)/stride) + 1."""
    if n < kernel_size:
        raise ShapeError(f"spatial size {n} smaller than kernel {kernel_size}")
    return (n - kernel_size) // stride + 1


def conv_chain_sizes(n: int, kernel_size: int = 3, stride: int = 2, floor: int = 3) -> list[int]:
    """Spatial sizes after repeated stride-2 valid convs until <= floor."""
    sizes = []
    while n > floor:
        n = conv_out_size(n, kernel_size, stride)
        sizes.append(n)
    return sizes


def init_layer_params(spec: LayerSpec, rng: np.random.Generator, dtype=np.float32):
    """Weight + bias arrays for one layer; fan-in-scaled uniform, zero bias.

    kaiming bound sqrt(6/fan_in); xavier bound sqrt(6/(fan_in+fan_out)).
    """
    if spec.kind == "FullyConnected":
        fan_in, fan_out = spec.in_features, spec.out_features
        shape_w, shape_b = (fan_in, fan_out), (fan_out,)
    elif spec.kind == "Conv2dValidStride2":
        k = spec.kernel_size
        fan_in = spec.in_channels * k * k
        fan_out = spec.out_channels * k * k
        shape_w = (spec.out_channels, spec.in_channels, k, k)
        shape_b = (spec.out_channels,)
    else:
        return None
    if spec.init == "kaiming":
        bound = np.sqrt(6.0 / fan_in)
    else:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
    w = rng.uniform(-bound, bound, size=shape_w).astype(dtype)
    b = np.zeros(shape_b, dtype=dtype)
    return w, b


def apply_layer(spec: LayerSpec, x, weight: Tensor | None = None, bias: Tensor | None = None):
    """Forward one layer.  ``x`` is a Tensor, or a list of Tensors for Concat."""
    if spec.kind == "Concat":
        return concat(x, axis=1)
    if spec.kind == "FullyConnected":
        if x.data.ndim != 2 or x.data.shape[1] != spec.in_features:
            raise ShapeError(f"FullyConnected({spec.in_features}->{spec.out_features}) "
                             f"got input {x.data.shape}")
        return x @ weight + bias
    if spec.kind == "Conv2dValidStride2":
        return conv2d_valid(x, weight, bias, stride=spec.stride)
    if spec.kind == "ReLU":
        return x.relu()
    if spec.kind == "Tanh":
        return x.tanh()
    if spec.kind == "Flatten":
        return x.flatten_batch()
    raise ConfigError(f"unknown layer kind {spec.kind!r}")


def param_names(specs, prefix: str):
    """Names of the parameterized entries for a layer sequence."""
    names = []
    for i, spec in enumerate(specs):
        if spec.kind in ("FullyConnected", "Conv2dValidStride2"):
            names.append((i, f"{prefix}{i}.weight", f"{prefix}{i}.bias"))
    return names


def init_sequence(specs, store, rng, prefix: str, dtype=np.float32):
    """Initialize every parameterized layer of ``specs`` into ``store``."""
    for i, spec in enumerate(specs):
        made = init_layer_params(spec, rng, dtype)
        if made is not None:
            store.add(f"{prefix}{i}.weight", made[0])
            store.add(f"{prefix}{i}.bias", made[1])


def apply_sequence(specs, leaves, x, prefix: str):
    """Forward a plain layer sequence using the leaf tensors in ``leaves``."""
    for i, spec in enumerate(specs):
        if spec.kind in ("FullyConnected", "Conv2dValidStride2"):
            x = apply_layer(spec, x, leaves[f"{prefix}{i}.weight"], leaves[f"{prefix}{i}.bias"])
        else:
            x = apply_layer(spec, x)
    return x
