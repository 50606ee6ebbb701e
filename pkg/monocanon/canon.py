# pylint: disable=line-too-long
"""Latent canonicalization: layers wrapped between S^-1 and S with a predicted warp."""

from __future__ import annotations

from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .const import _LOGGER, DEFAULT_GRID_SIZE, DEFAULT_MIN_SEGMENT, SOLVE_HISTORY
from .dec import AndersonConfig, DecNet, dec_backward, record_tape, solve_fixed_point
from .dec.const import DEFAULT_UNROLL_STEPS
from .dec.energy import EnergyNet
from .enum import AdapterMode, BackwardMode, CanonicalizerKind
from .exceptions import StructuralError, UsageError
from .image_warp import apply_warp, apply_warp_inverse, warp_backward
from .nn import BlockClassifier, Network, NetCache, softmax_cross_entropy
from .warp import Warp2D, WarpSampler, derive_seed


def _merge(target: dict, grads: dict) -> None:
    for name, grad in grads.items():
        target[name] = target[name] + grad if name in target else grad


class Canonicalizer(ABC):
    """Predicts the warp that maps a feature map to its canonical form."""

    kind: CanonicalizerKind

    def __init__(self) -> None:
        self.training = False

    @abstractmethod
    def canonicalize(self, feature: np.ndarray, index: int = 0) -> tuple[Warp2D, object]:
        """Warp for one (C, H, W) feature map and a tape for ``backward`` (None when not training)."""

    def backward(self, feature: np.ndarray, tape: object, d_values: np.ndarray) -> tuple[dict, np.ndarray]:
        """Parameter gradients and feature gradient from gradients on the warp's knot values."""
        return {}, np.zeros_like(feature)

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable parameters."""
        return {}

    def mark_updated(self) -> None:
        """Invalidates caches after an update."""


class DecCanonicalizer(Canonicalizer):
    """Fixed point of the learned map h, solved with Anderson mixing.

    With ``reduce_channels`` the map sees the channel mean, which lets one
    network serve layers of different widths.
    """

    kind = CanonicalizerKind.DEC

    def __init__(self, dec: DecNet, anderson: AndersonConfig = None, backward_mode: BackwardMode = BackwardMode.PHANTOM,
                 unroll_steps: int = DEFAULT_UNROLL_STEPS, reduce_channels: bool = False) -> None:
        super().__init__()
        self.dec = dec
        self.anderson = anderson or AndersonConfig()
        self.backward_mode = backward_mode
        self.unroll_steps = unroll_steps
        self.reduce_channels = reduce_channels
        self.solves: deque = deque(maxlen=SOLVE_HISTORY)

    def _input(self, feature: np.ndarray) -> np.ndarray:
        return feature.mean(axis=0, keepdims=True) if self.reduce_channels else feature

    def canonicalize(self, feature: np.ndarray, index: int = 0) -> tuple[Warp2D, object]:
        img = self._input(feature)
        solution = solve_fixed_point(self.dec, img, cfg=self.anderson)
        self.solves.append((solution.iterations, solution.converged, tuple(solution.state.residuals)))
        if not self.training:
            return solution.warp, None
        tape = record_tape(self.dec, img, solution, self.backward_mode, self.unroll_steps)
        return self.dec.constrain(tape.output), tape

    def backward(self, feature: np.ndarray, tape: object, d_values: np.ndarray) -> tuple[dict, np.ndarray]:
        img = self._input(feature)
        grads = dec_backward(self.dec, img, tape, d_values)
        if self.reduce_channels:
            return grads.params, np.broadcast_to(grads.d_img / feature.shape[0], feature.shape).copy()
        return grads.params, grads.d_img

    def parameters(self) -> dict[str, np.ndarray]:
        return self.dec.parameters()

    def mark_updated(self) -> None:
        self.dec.mark_updated()


@dataclass
class _SoftminTape:
    weights: np.ndarray
    scores: np.ndarray


class VanillaCanonicalizer(Canonicalizer):
    """Energy minimization over a discrete candidate set.

    Inference takes the argmin. Training blends the candidates' knot values
    with softmin weights so the energy network receives gradients.
    """

    kind = CanonicalizerKind.VANILLA

    def __init__(self, energy: EnergyNet, candidates: Sequence[Warp2D], temperature: float = 1.0,
                 reduce_channels: bool = True) -> None:
        super().__init__()
        if not candidates:
            raise UsageError("candidate set is empty")
        if not temperature > 0:
            raise ValueError("temperature must be positive")
        self.energy = energy
        self.candidates = list(candidates)
        self.temperature = temperature
        self.reduce_channels = reduce_channels
        self._values = np.stack([w.parameter_vector() for w in self.candidates])

    def _input(self, feature: np.ndarray) -> np.ndarray:
        return feature.mean(axis=0, keepdims=True) if self.reduce_channels else feature

    def scores(self, feature: np.ndarray) -> np.ndarray:
        """Energy of every candidate's canonical feature."""
        img = self._input(feature)
        features = np.stack([apply_warp_inverse(img, w) for w in self.candidates])
        return self.energy.batch_values(features)

    def canonicalize(self, feature: np.ndarray, index: int = 0) -> tuple[Warp2D, object]:
        scores = self.scores(feature)
        if not self.training:
            return self.candidates[int(np.argmin(scores))], None
        logits = -scores / self.temperature
        weights = np.exp(logits - logits.max())
        weights /= weights.sum()
        first = self.candidates[0]
        blended = Warp2D.from_parameters(weights @ self._values, first.grid_n, first.grid_m, min_segment=first.min_segment)
        return blended, _SoftminTape(weights, scores)

    def backward(self, feature: np.ndarray, tape: object, d_values: np.ndarray) -> tuple[dict, np.ndarray]:
        img = self._input(feature)
        d_weights = self._values @ d_values
        d_scores = -tape.weights * (d_weights - tape.weights @ d_weights) / self.temperature
        grads: dict = {}
        d_img = np.zeros_like(img)
        for warp, d_score in zip(self.candidates, d_scores):
            if d_score == 0.0:
                continue
            _, d_feature, params = self.energy.feature_eval(apply_warp_inverse(img, warp))
            _merge(grads, {name: d_score * grad for name, grad in params.items()})
            d_img += warp_backward(img, warp, d_score * d_feature, inverse=True).d_pixels
        if self.reduce_channels:
            return grads, np.broadcast_to(d_img / feature.shape[0], feature.shape).copy()
        return grads, d_img

    def parameters(self) -> dict[str, np.ndarray]:
        return self.energy.parameters()

    def mark_updated(self) -> None:
        self.energy.mark_updated()


class OracleCanonicalizer(Canonicalizer):
    """Returns known warps: one fixed warp, or one per sample index."""

    kind = CanonicalizerKind.ORACLE

    def __init__(self, warps: Union[Warp2D, Sequence[Warp2D], Callable[[int], Warp2D]]) -> None:
        super().__init__()
        self.warps = warps

    def canonicalize(self, feature: np.ndarray, index: int = 0) -> tuple[Warp2D, object]:
        if isinstance(self.warps, Warp2D):
            return self.warps, None
        if callable(self.warps):
            return self.warps(index), None
        return self.warps[index], None


@dataclass
class AdaptedCache:
    """Forward record of one adapted layer."""

    inputs: np.ndarray
    warps: list
    tapes: list
    outputs: np.ndarray
    layer_cache: NetCache


class AdaptedLayer:
    """A base layer run in the canonical frame of its input.

    Equivariant mode computes S(M(S^-1(F; Phi)); Phi), invariant mode
    M(S^-1(F; Phi)). Without a canonicalizer it is the bare layer.
    """

    def __init__(self, layer: Network, canonicalizer: Optional[Canonicalizer] = None,
                 mode: AdapterMode = AdapterMode.EQUIVARIANT) -> None:
        self.layer = layer
        self.canonicalizer = canonicalizer
        self.mode = AdapterMode(mode)

    def forward(self, x: np.ndarray, indices: Sequence[int] = None) -> tuple[np.ndarray, AdaptedCache]:
        """Runs the layer on a batch; per-sample warps are kept in the cache."""
        x = np.asarray(x, dtype=np.float64)
        if self.canonicalizer is None:
            out, cache = self.layer.forward(x)
            return out, AdaptedCache(x, [], [], out, cache)
        indices = range(x.shape[0]) if indices is None else indices
        warps, tapes = [], []
        for feature, index in zip(x, indices):
            warp, tape = self.canonicalizer.canonicalize(feature, index)
            warps.append(warp)
            tapes.append(tape)
        canonical = np.stack([apply_warp_inverse(feature, warp) for feature, warp in zip(x, warps)])
        out, cache = self.layer.forward(canonical)
        result = out
        if self.mode is AdapterMode.EQUIVARIANT:
            if out.ndim != 4:
                raise StructuralError(f"equivariant wrapping needs spatial output, got {out.shape}")
            result = np.stack([apply_warp(o, warp) for o, warp in zip(out, warps)])
        return result, AdaptedCache(x, warps, tapes, out, cache)

    def backward(self, cache: AdaptedCache, upstream: np.ndarray) -> tuple[dict, np.ndarray]:
        """Gradients of the layer and its canonicalizer, and the input gradient."""
        if self.canonicalizer is None:
            return self.layer.backward(cache.layer_cache, upstream)
        count = len(cache.warps)
        d_values = [np.zeros(w.parameter_vector().size) for w in cache.warps]
        d_out = np.asarray(upstream, dtype=np.float64)
        if self.mode is AdapterMode.EQUIVARIANT:
            d_out = np.empty_like(cache.outputs)
            for b in range(count):
                grads = warp_backward(cache.outputs[b], cache.warps[b], upstream[b], inverse=False)
                d_out[b] = grads.d_pixels
                d_values[b] += grads.d_warp_values
        param_grads, d_canonical = self.layer.backward(cache.layer_cache, d_out)
        param_grads = dict(param_grads)
        d_x = np.empty_like(cache.inputs)
        for b in range(count):
            grads = warp_backward(cache.inputs[b], cache.warps[b], d_canonical[b], inverse=True)
            d_x[b] = grads.d_pixels
            d_values[b] += grads.d_warp_values
            if cache.tapes[b] is not None:
                canon_grads, d_feature = self.canonicalizer.backward(cache.inputs[b], cache.tapes[b], d_values[b])
                _merge(param_grads, canon_grads)
                d_x[b] += d_feature
        return param_grads, d_x


@dataclass
class AdaptedForward:
    """Caches of every adapted layer plus the warps Phi_k each one applied."""

    caches: list
    phis: list = field(default_factory=list)


class AdaptedNetwork:
    """Ordered adapted layers; behaves like the base classifier."""

    def __init__(self, layers: Sequence[AdaptedLayer], freeze_canonicalizers: bool = False) -> None:
        self.layers = list(layers)
        if not self.layers:
            raise StructuralError("adapted network needs at least one layer")
        seen_invariant = False
        for index, layer in enumerate(self.layers):
            wrapped = layer.canonicalizer is not None
            if wrapped and layer.mode is AdapterMode.EQUIVARIANT and seen_invariant:
                raise UsageError(f"layer {index}: equivariant wrap after an invariant one")
            seen_invariant = seen_invariant or (wrapped and layer.mode is AdapterMode.INVARIANT)
        self.freeze_canonicalizers = freeze_canonicalizers

    @property
    def canonicalizers(self) -> list[Canonicalizer]:
        """Distinct canonicalizers in layer order."""
        found = []
        for layer in self.layers:
            canonicalizer = layer.canonicalizer
            if canonicalizer is not None and not any(canonicalizer is seen for seen in found):
                found.append(canonicalizer)
        return found

    def train(self, training: bool = True) -> 'AdaptedNetwork':
        """Switches canonicalizers between training (tapes, relaxations) and inference."""
        for canonicalizer in self.canonicalizers:
            canonicalizer.training = training and not self.freeze_canonicalizers
        return self

    def eval(self) -> 'AdaptedNetwork':
        """Inference mode."""
        return self.train(False)

    def parameters(self) -> dict[str, np.ndarray]:
        """Named parameters of the base layers and the canonicalizers."""
        named = {}
        for layer in self.layers:
            named.update(layer.layer.parameters())
        for canonicalizer in self.canonicalizers:
            named.update(canonicalizer.parameters())
        return named

    def mark_updated(self) -> None:
        """Invalidates all caches and tapes."""
        for layer in self.layers:
            layer.layer.mark_updated()
        for canonicalizer in self.canonicalizers:
            canonicalizer.mark_updated()

    def forward(self, x: np.ndarray, indices: Sequence[int] = None) -> tuple[np.ndarray, AdaptedForward]:
        """Sequential application; records each layer's warps."""
        out = np.asarray(x, dtype=np.float64)
        record = AdaptedForward([])
        for layer in self.layers:
            out, cache = layer.forward(out, indices)
            record.caches.append(cache)
            record.phis.append(cache.warps)
        return out, record

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, record: AdaptedForward, upstream: np.ndarray) -> tuple[dict, np.ndarray]:
        """Named parameter gradients (shared canonicalizers summed) and the input gradient."""
        grads: dict = {}
        grad = upstream
        for layer, cache in zip(reversed(self.layers), reversed(record.caches)):
            layer_grads, grad = layer.backward(cache, grad)
            _merge(grads, layer_grads)
        return grads, grad

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray) -> tuple[float, dict]:
        """Softmax cross-entropy of the batch and its parameter gradients."""
        logits, record = self.forward(x)
        loss, d_logits = softmax_cross_entropy(logits, y)
        grads, _ = self.backward(record, d_logits)
        return loss, grads


def wrap_equivariant(layer: Network, canonicalizer: Optional[Canonicalizer]) -> AdaptedLayer:
    """S(M(S^-1(F; Phi)); Phi) with Phi predicted from F."""
    return AdaptedLayer(layer, canonicalizer, AdapterMode.EQUIVARIANT)


def wrap_invariant(layer: Network, canonicalizer: Optional[Canonicalizer]) -> AdaptedLayer:
    """M(S^-1(F; Phi)) with no re-warp."""
    return AdaptedLayer(layer, canonicalizer, AdapterMode.INVARIANT)


def adapted_forward(net: AdaptedNetwork, img: np.ndarray, indices: Sequence[int] = None) -> tuple[np.ndarray, list]:
    """Logits and the per-layer warps of a batch (or a single (C, H, W) image)."""
    batch = np.asarray(img, dtype=np.float64)
    single = batch.ndim == 3
    if single:
        batch = batch[None]
    logits, record = net.forward(batch, indices)
    return (logits[0] if single else logits), record.phis


def _sample_warps(sampler: WarpSampler, n_samples: int, seed: int) -> list[Warp2D]:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    return [sampler.sample(derive_seed(seed, i)) for i in range(n_samples)]


def _as_batch(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    return arr[None] if arr.ndim == 3 else arr


def invariance_loss(model: Callable, img: np.ndarray, sampler: WarpSampler, n_samples: int = 1, seed: int = 0) -> float:
    """Monte-Carlo mean of the per-element squared difference between M(I) and M(S(I; Phi))."""
    batch = _as_batch(img)
    reference = model(batch)
    total = 0.0
    for warp in _sample_warps(sampler, n_samples, seed):
        warped = np.stack([apply_warp(f, warp) for f in batch])
        total += float(np.mean((reference - model(warped)) ** 2))
    return total / n_samples


def equivariance_loss(model: Callable, img: np.ndarray, sampler: WarpSampler, n_samples: int = 1, seed: int = 0) -> float:
    """Monte-Carlo mean of the per-element squared difference between S(M(I); Phi) and M(S(I; Phi))."""
    batch = _as_batch(img)
    reference = model(batch)
    if reference.ndim != 4:
        raise UsageError(f"equivariance needs a spatial model output, got {reference.shape}")
    total = 0.0
    for warp in _sample_warps(sampler, n_samples, seed):
        warped = np.stack([apply_warp(f, warp) for f in batch])
        moved = np.stack([apply_warp(f, warp) for f in reference])
        total += float(np.mean((moved - model(warped)) ** 2))
    return total / n_samples


def invariance_loss_and_grads(model, x: np.ndarray, warps: Sequence[Warp2D]) -> tuple[float, dict]:
    """InvL of a batch with one warp per sample, differentiated through both branches."""
    x = np.asarray(x, dtype=np.float64)
    warped = np.stack([apply_warp(f, w) for f, w in zip(x, warps)])
    clean_out, clean_cache = model.forward(x)
    warped_out, warped_cache = model.forward(warped)
    diff = clean_out - warped_out
    loss = float(np.mean(diff * diff))
    d_diff = 2.0 * diff / diff.size
    grads, _ = model.backward(clean_cache, d_diff)
    other, _ = model.backward(warped_cache, -d_diff)
    _merge(grads, other)
    return loss, grads


def equivariance_loss_and_grads(model: BlockClassifier, x: np.ndarray, warps: Sequence[Warp2D]) -> tuple[float, dict]:
    """EquL on the output of the last convolutional block, differentiated through both branches."""
    x = np.asarray(x, dtype=np.float64)
    warped = np.stack([apply_warp(f, w) for f, w in zip(x, warps)])

    def trunk(batch: np.ndarray) -> tuple[np.ndarray, list]:
        caches = []
        for block in model.blocks:
            batch, cache = block.forward(batch)
            caches.append(cache)
        return batch, caches

    def trunk_backward(caches: list, upstream: np.ndarray) -> dict:
        grads: dict = {}
        for block, cache in zip(reversed(model.blocks), reversed(caches)):
            block_grads, upstream = block.backward(cache, upstream)
            _merge(grads, block_grads)
        return grads

    clean_feat, clean_caches = trunk(x)
    warped_feat, warped_caches = trunk(warped)
    moved = np.stack([apply_warp(f, w) for f, w in zip(clean_feat, warps)])
    diff = moved - warped_feat
    loss = float(np.mean(diff * diff))
    d_diff = 2.0 * diff / diff.size
    d_clean = np.stack([warp_backward(f, w, d, inverse=False).d_pixels for f, w, d in zip(clean_feat, warps, d_diff)])
    grads = trunk_backward(clean_caches, d_clean)
    _merge(grads, trunk_backward(warped_caches, -d_diff))
    return loss, grads


def build_adapted_classifier(classifier: BlockClassifier, kind: CanonicalizerKind = CanonicalizerKind.DEC,
                             placements: int = None, invariant_last: bool = True, shared: bool = False,
                             grid_size: int = DEFAULT_GRID_SIZE, dec_channels: Sequence[int] = None,
                             anderson: AndersonConfig = None, backward_mode: BackwardMode = BackwardMode.PHANTOM,
                             unroll_steps: int = DEFAULT_UNROLL_STEPS, candidates: Sequence[Warp2D] = None,
                             seed: int = 0, min_segment: float = DEFAULT_MIN_SEGMENT,
                             freeze: bool = False) -> AdaptedNetwork:
    """Wraps the first ``placements`` conv blocks (default: all) of a classifier.

    Every wrapped block is equivariant except the last, which is invariant
    when ``invariant_last`` is set. The head stays bare.
    """
    kind = CanonicalizerKind(kind)
    blocks = classifier.blocks
    placements = len(blocks) if placements is None else placements
    if not 0 <= placements <= len(blocks):
        raise UsageError(f"placements must lie in [0, {len(blocks)}]")
    _LOGGER.debug(">> build_adapted_classifier(kind=%s, placements=%s, shared=%s)", kind, placements, shared)
    extra = {} if dec_channels is None else {"channels": tuple(dec_channels)}

    def make(index: int, in_channels: int) -> Optional[Canonicalizer]:
        if kind is CanonicalizerKind.NONE:
            return None
        if kind is CanonicalizerKind.DEC:
            channels = 1 if shared else in_channels
            dec = DecNet.build(channels, grid_size, seed=derive_seed(seed, index), min_segment=min_segment,
                               name=f"dec{index}", **extra)
            return DecCanonicalizer(dec, anderson, backward_mode, unroll_steps, reduce_channels=shared)
        if kind is CanonicalizerKind.VANILLA:
            if candidates is None:
                raise UsageError("vanilla canonicalization needs a candidate set")
            energy = EnergyNet.build(1, grid_size, seed=derive_seed(seed, index), name=f"energy{index}",
                                     min_segment=min_segment)
            return VanillaCanonicalizer(energy, candidates)
        raise UsageError("oracle canonicalizers are built from known warps, not from a config")

    layers = []
    shared_canon = None
    for index, block in enumerate(blocks):
        canonicalizer = None
        if index < placements:
            if shared:
                shared_canon = shared_canon or make(0, 1)
                canonicalizer = shared_canon
            else:
                canonicalizer = make(index, block.specs[0].in_channels)
        last = index == placements - 1
        mode = AdapterMode.INVARIANT if last and invariant_last else AdapterMode.EQUIVARIANT
        layers.append(AdaptedLayer(block, canonicalizer, mode))
    layers.append(AdaptedLayer(classifier.head, None, AdapterMode.INVARIANT))
    return AdaptedNetwork(layers, freeze_canonicalizers=freeze)
