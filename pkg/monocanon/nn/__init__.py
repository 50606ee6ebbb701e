"""Minimal reverse-mode differentiable kernel for small convolutional networks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from monocanon.enum import LayerKind
from monocanon.exceptions import StructuralError

from .const import DEC_CHANNELS, ENERGY_CHANNELS, KERNEL_SIZE, TOY_CHANNELS, TOY_HEAD_GRID

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a chain; dense layers reuse the channel fields as feature counts."""

    kind: LayerKind
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    out_h: int = 0
    out_w: int = 0
    name: Optional[str] = None

    @classmethod
    def conv(cls, in_channels: int, out_channels: int, kernel: int = KERNEL_SIZE, stride: int = 1,
             name: str = None) -> 'LayerSpec':
        """Zero-padded convolution with padding kernel // 2."""
        if in_channels < 1 or out_channels < 1 or kernel < 1 or stride < 1:
            raise ValueError("conv sizes must be positive")
        return cls(LayerKind.CONV, in_channels, out_channels, kernel, stride, name=name)

    @classmethod
    def relu(cls) -> 'LayerSpec':
        """Pointwise rectifier."""
        return cls(LayerKind.RELU)

    @classmethod
    def pool(cls, out_h: int, out_w: int) -> 'LayerSpec':
        """Adaptive average pool to a fixed output grid."""
        if out_h < 1 or out_w < 1:
            raise ValueError("pool output must be positive")
        return cls(LayerKind.ADAPTIVE_AVG_POOL, out_h=out_h, out_w=out_w)

    @classmethod
    def flatten(cls) -> 'LayerSpec':
        """Collapses (C, H, W) into features."""
        return cls(LayerKind.FLATTEN)

    @classmethod
    def dense(cls, in_features: int, out_features: int, name: str = None) -> 'LayerSpec':
        """Affine layer."""
        if in_features < 1 or out_features < 1:
            raise ValueError("dense sizes must be positive")
        return cls(LayerKind.DENSE, in_features, out_features, name=name)

    @property
    def has_params(self) -> bool:
        """True for conv and dense layers."""
        return self.kind in (LayerKind.CONV, LayerKind.DENSE)

    def param_shapes(self) -> dict:
        """Shapes of the weight and bias tensors."""
        if self.kind is LayerKind.CONV:
            return {
                "weight": (self.out_channels, self.in_channels, self.kernel, self.kernel),
                "bias": (self.out_channels,),
            }
        if self.kind is LayerKind.DENSE:
            return {"weight": (self.out_channels, self.in_channels), "bias": (self.out_channels,)}
        return {}

    def out_shape(self, shape: tuple) -> tuple:
        """Per-sample output shape for a per-sample input shape."""
        if self.kind is LayerKind.CONV:
            if len(shape) != 3 or shape[0] != self.in_channels:
                raise StructuralError(f"conv expects ({self.in_channels}, H, W), got {shape}")
            pad = self.kernel // 2
            return (
                self.out_channels,
                (shape[1] + 2 * pad - self.kernel) // self.stride + 1,
                (shape[2] + 2 * pad - self.kernel) // self.stride + 1,
            )
        if self.kind is LayerKind.RELU:
            return tuple(shape)
        if self.kind is LayerKind.ADAPTIVE_AVG_POOL:
            if len(shape) != 3:
                raise StructuralError(f"adaptive pool expects (C, H, W), got {shape}")
            return (shape[0], self.out_h, self.out_w)
        if self.kind is LayerKind.FLATTEN:
            return (int(np.prod(shape)),)
        if len(shape) != 1 or shape[0] != self.in_channels:
            raise StructuralError(f"dense expects ({self.in_channels},), got {shape}")
        return (self.out_channels,)


def check_chain(specs: Sequence[LayerSpec], in_shape: tuple) -> list[tuple]:
    """Shapes after every layer; raises StructuralError on the first inconsistency."""
    if not specs:
        raise StructuralError("empty layer chain")
    shapes = [tuple(in_shape)]
    for index, spec in enumerate(specs):
        try:
            shapes.append(spec.out_shape(shapes[-1]))
        except StructuralError as err:
            raise StructuralError(f"layer {index} ({spec.kind})", *err.args[1:]) from err
        if min(shapes[-1]) < 1:
            raise StructuralError(f"layer {index} ({spec.kind}) produces empty shape {shapes[-1]}")
    return shapes


def init_params(specs: Sequence[LayerSpec], seed: int = 0, zero: Iterable[str] = ()) -> list[dict]:
    """He-normal weights and zero biases; layers named in ``zero`` start at exactly zero."""
    rng = np.random.default_rng(seed)
    zero = set(zero)
    params = []
    for spec in specs:
        shapes = spec.param_shapes()
        if not shapes:
            params.append({})
            continue
        weight_shape = shapes["weight"]
        fan_in = int(np.prod(weight_shape[1:]))
        weight = rng.standard_normal(weight_shape) * np.sqrt(2.0 / fan_in)
        if spec.name in zero:
            weight = np.zeros(weight_shape)
        params.append({"weight": weight, "bias": np.zeros(shapes["bias"])})
    return params


def pool_matrix(size_in: int, size_out: int) -> np.ndarray:
    """Averaging matrix of one axis; cell i covers [floor(i*in/out), ceil((i+1)*in/out))."""
    mat = np.zeros((size_out, size_in))
    for i in range(size_out):
        start = (i * size_in) // size_out
        end = -(-((i + 1) * size_in) // size_out)
        mat[i, start:end] = 1.0 / (end - start)
    return mat


def adaptive_avg_pool(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Adaptive average pooling over the last two axes."""
    arr = np.asarray(x, dtype=np.float64)
    rows = pool_matrix(arr.shape[-2], out_h)
    cols = pool_matrix(arr.shape[-1], out_w)
    return np.einsum("ih,...hw,jw->...ij", rows, arr, cols)


def _conv_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int) -> tuple:
    kernel = weight.shape[-1]
    pad = kernel // 2
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(padded, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(windows, weight, axes=([1, 4, 5], [1, 2, 3]))
    return out.transpose(0, 3, 1, 2) + bias[None, :, None, None], windows


def _conv_backward(x_shape: tuple, windows: np.ndarray, weight: np.ndarray, stride: int,
                   upstream: np.ndarray) -> tuple:
    kernel = weight.shape[-1]
    pad = kernel // 2
    d_weight = np.tensordot(upstream, windows, axes=([0, 2, 3], [0, 2, 3]))
    d_bias = upstream.sum(axis=(0, 2, 3))
    d_windows = np.tensordot(upstream, weight, axes=([1], [0]))
    batch, channels, height, width = x_shape
    out_h, out_w = upstream.shape[2:]
    d_padded = np.zeros((batch, channels, height + 2 * pad, width + 2 * pad))
    for a in range(kernel):
        for b in range(kernel):
            d_padded[:, :, a:a + stride * (out_h - 1) + 1:stride, b:b + stride * (out_w - 1) + 1:stride] += \
                d_windows[:, :, :, :, a, b].transpose(0, 3, 1, 2)
    return d_padded[:, :, pad:pad + height, pad:pad + width], d_weight, d_bias


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise StructuralError(f"logits {logits.shape} do not match labels {labels.shape}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(labels.size)
    loss = float(-log_probs[rows, labels].mean())
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    return loss, grad / labels.size


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


@dataclass
class NetCache:
    """Activations recorded by one forward pass."""

    owner: int
    version: int
    records: list = field(default_factory=list)


class Network:
    """A layer chain together with its parameters.

    Parameters are mutated in place by optimizers, which must call
    ``mark_updated`` so that caches from earlier forwards are rejected.
    """

    def __init__(self, specs: Sequence[LayerSpec], params: list[dict], name: str = "") -> None:
        self.specs = tuple(specs)
        self.params = params
        self.name = name
        self.version = 0
        if len(self.params) != len(self.specs):
            raise StructuralError(f"{len(self.params)} parameter sets for {len(self.specs)} layers")
        for index, (spec, layer) in enumerate(zip(self.specs, self.params)):
            for key, shape in spec.param_shapes().items():
                if key not in layer or tuple(layer[key].shape) != shape:
                    raise StructuralError(f"layer {index} {key} must have shape {shape}")

    @classmethod
    def build(cls, specs: Sequence[LayerSpec], in_shape: tuple, seed: int = 0,
              zero: Iterable[str] = (), name: str = "") -> 'Network':
        """Validates the chain against ``in_shape`` and initializes parameters."""
        check_chain(specs, in_shape)
        _LOGGER.debug(">> Network.build(name=%s, layers=%s, seed=%s)", name, len(specs), seed)
        return cls(specs, init_params(specs, seed, zero), name)

    def _param_name(self, index: int, key: str) -> str:
        layer = self.specs[index].name or str(index)
        return f"{self.name}.{layer}.{key}" if self.name else f"{layer}.{key}"

    def parameters(self) -> dict[str, np.ndarray]:
        """Named parameter arrays (live references)."""
        named = {}
        for index, layer in enumerate(self.params):
            for key, value in layer.items():
                named[self._param_name(index, key)] = value
        return named

    @property
    def param_count(self) -> int:
        """Total number of scalar parameters."""
        return sum(value.size for value in self.parameters().values())

    def mark_updated(self) -> None:
        """Invalidates caches recorded before a parameter update."""
        self.version += 1

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, NetCache]:
        """Runs the chain on a batch; returns the output and a cache for ``backward``."""
        out = np.asarray(x, dtype=np.float64)
        cache = NetCache(id(self), self.version)
        for index, (spec, layer) in enumerate(zip(self.specs, self.params)):
            kind = spec.kind
            if kind is LayerKind.CONV:
                if out.ndim != 4 or out.shape[1] != spec.in_channels:
                    raise StructuralError(f"layer {index}: conv expects (B, {spec.in_channels}, H, W), got {out.shape}")
                shape = out.shape
                out, windows = _conv_forward(out, layer["weight"], layer["bias"], spec.stride)
                cache.records.append((shape, windows))
            elif kind is LayerKind.RELU:
                cache.records.append(out > 0.0)
                out = np.maximum(out, 0.0)
            elif kind is LayerKind.ADAPTIVE_AVG_POOL:
                if out.ndim != 4:
                    raise StructuralError(f"layer {index}: pool expects (B, C, H, W), got {out.shape}")
                rows = pool_matrix(out.shape[2], spec.out_h)
                cols = pool_matrix(out.shape[3], spec.out_w)
                cache.records.append((rows, cols))
                out = np.einsum("ih,bchw,jw->bcij", rows, out, cols)
            elif kind is LayerKind.FLATTEN:
                cache.records.append(out.shape)
                out = out.reshape(out.shape[0], -1)
            else:
                if out.ndim != 2 or out.shape[1] != spec.in_channels:
                    raise StructuralError(f"layer {index}: dense expects (B, {spec.in_channels}), got {out.shape}")
                cache.records.append(out)
                out = out @ layer["weight"].T + layer["bias"]
        return out, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: NetCache, upstream: np.ndarray) -> tuple[dict, np.ndarray]:
        """Parameter gradients (named like ``parameters``) and the input gradient."""
        if cache.owner != id(self) or cache.version != self.version:
            raise StructuralError("stale cache: parameters changed since the forward pass")
        grad = np.asarray(upstream, dtype=np.float64)
        grads = {}
        for index in reversed(range(len(self.specs))):
            spec = self.specs[index]
            record = cache.records[index]
            kind = spec.kind
            if kind is LayerKind.CONV:
                shape, windows = record
                grad, d_weight, d_bias = _conv_backward(shape, windows, self.params[index]["weight"],
                                                        spec.stride, grad)
                grads[self._param_name(index, "weight")] = d_weight
                grads[self._param_name(index, "bias")] = d_bias
            elif kind is LayerKind.RELU:
                grad = grad * record
            elif kind is LayerKind.ADAPTIVE_AVG_POOL:
                rows, cols = record
                grad = np.einsum("ih,bcij,jw->bchw", rows, grad, cols)
            elif kind is LayerKind.FLATTEN:
                grad = grad.reshape(record)
            else:
                grads[self._param_name(index, "weight")] = grad.T @ record
                grads[self._param_name(index, "bias")] = grad.sum(axis=0)
                grad = grad @ self.params[index]["weight"]
        return grads, grad


class BlockClassifier:
    """Convolutional blocks followed by a classification head."""

    def __init__(self, blocks: Sequence[Network], head: Network) -> None:
        self.blocks = list(blocks)
        self.head = head

    @property
    def layers(self) -> list[Network]:
        """Blocks then head."""
        return self.blocks + [self.head]

    def parameters(self) -> dict[str, np.ndarray]:
        """Named parameters of every layer."""
        named = {}
        for layer in self.layers:
            named.update(layer.parameters())
        return named

    def mark_updated(self) -> None:
        """Invalidates caches of every layer."""
        for layer in self.layers:
            layer.mark_updated()

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[NetCache]]:
        """Logits and per-layer caches."""
        out = np.asarray(x, dtype=np.float64)
        caches = []
        for layer in self.layers:
            out, cache = layer.forward(out)
            caches.append(cache)
        return out, caches

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, caches: list[NetCache], upstream: np.ndarray) -> tuple[dict, np.ndarray]:
        """Named parameter gradients and the input gradient."""
        grads = {}
        grad = upstream
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            layer_grads, grad = layer.backward(cache, grad)
            grads.update(layer_grads)
        return grads, grad

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray) -> tuple[float, dict]:
        """Softmax cross-entropy of the batch and its parameter gradients."""
        logits, caches = self.forward(x)
        loss, d_logits = softmax_cross_entropy(logits, y)
        grads, _ = self.backward(caches, d_logits)
        return loss, grads


def build_toy_classifier(in_channels: int = 1, n_classes: int = 100, size: int = 64,
                         channels: Sequence[int] = TOY_CHANNELS, seed: int = 0) -> BlockClassifier:
    """Stride-2 conv/relu blocks, then adaptive pool, flatten and a dense head."""
    _LOGGER.debug(">> build_toy_classifier(channels=%s, n_classes=%s, seed=%s)", channels, n_classes, seed)
    blocks = []
    shape = (in_channels, size, size)
    prev = in_channels
    for index, width in enumerate(channels):
        specs = [LayerSpec.conv(prev, width, stride=2), LayerSpec.relu()]
        blocks.append(Network.build(specs, shape, seed=seed + index, name=f"block{index}"))
        shape = check_chain(specs, shape)[-1]
        prev = width
    grid_h, grid_w = TOY_HEAD_GRID
    head_specs = [
        LayerSpec.pool(grid_h, grid_w),
        LayerSpec.flatten(),
        LayerSpec.dense(prev * grid_h * grid_w, n_classes),
    ]
    head = Network.build(head_specs, shape, seed=seed + len(channels), name="head")
    return BlockClassifier(blocks, head)


def dec_raw_size(grid_n: int, grid_m: int) -> int:
    """Number of raw warp parameters: one per segment of every row and column function."""
    return (grid_m + 1) * grid_n + (grid_n + 1) * grid_m


def build_dec_net(in_channels: int, grid_n: int, grid_m: int, channels: Sequence[int] = DEC_CHANNELS,
                  seed: int = 0, zero_head: bool = True, name: str = "dec") -> Network:
    """Stride-2 conv/relu layers, adaptive pool to the warp grid and a linear head.

    With ``zero_head`` the head starts at exactly zero, so the untrained map
    returns the raw vector of the identity warp.
    """
    specs = []
    prev = in_channels
    for width in channels:
        specs += [LayerSpec.conv(prev, width, stride=2), LayerSpec.relu()]
        prev = width
    specs += [
        LayerSpec.pool(grid_m, grid_n),
        LayerSpec.flatten(),
        LayerSpec.dense(prev * grid_m * grid_n, dec_raw_size(grid_n, grid_m), name="head"),
    ]
    zero = ("head",) if zero_head else ()
    nominal = 4 * 2 ** len(channels)
    return Network.build(specs, (in_channels, nominal, nominal), seed=seed, zero=zero, name=name)


def build_energy_net(in_channels: int, channels: Sequence[int] = ENERGY_CHANNELS, seed: int = 0,
                     name: str = "energy") -> Network:
    """Conv/relu layers, global average pool and a scalar head."""
    specs = []
    prev = in_channels
    for width in channels:
        specs += [LayerSpec.conv(prev, width, stride=2), LayerSpec.relu()]
        prev = width
    specs += [LayerSpec.pool(1, 1), LayerSpec.flatten(), LayerSpec.dense(prev, 1, name="head")]
    nominal = 2 ** len(channels)
    return Network.build(specs, (in_channels, nominal, nominal), seed=seed, name=name)
