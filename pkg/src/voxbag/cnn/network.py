"""Network composition: specs, presets, initialization, forward/backward.

Parameters are a flat ``dict`` mapping ``"<layer index>.<name>"`` to arrays,
e.g. ``"0.weight"``, ``"1.gamma"``, ``"1.running_var"``. Only weight, bias,
gamma and beta are learnable; the running statistics are buffers.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..errors import ShapeError
from . import layers as L

LEARNABLE = ("weight", "bias", "gamma", "beta")

# conv-block count per preset id
PRESET_BLOCKS = {1: 5, 2: 4, 3: 3, 4: 6, 5: 2}
BASE_WIDTH = 8
FEATURE_WIDTH = 128


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple
    layers: tuple
    preset_id: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.input_shape) != 4:
            raise ShapeError(f"input_shape must be (C, D, H, W), got {self.input_shape}")
        soft = [i for i, l in enumerate(self.layers) if isinstance(l, L.SoftmaxOutput)]
        if soft != [len(self.layers) - 1]:
            raise ShapeError("network needs exactly one SoftmaxOutput, as its last layer")
        shapes = self.shapes()
        if shapes[-1] != (2,):
            raise ShapeError(f"network must end in 2 logits, ends in {shapes[-1]}")

    def shapes(self) -> list:
        """Per-sample shapes: the input followed by every layer output."""
        out = [self.input_shape]
        for layer in self.layers:
            out.append(L.output_shape(layer, out[-1]))
        return out

    @property
    def feature_layer(self) -> int:
        """Index of the layer whose output is the feature vector.

        That is the ReLU after the first FullyConnected layer, or the FC
        layer itself if no ReLU follows it.
        """
        for i, layer in enumerate(self.layers):
            if isinstance(layer, L.FullyConnected):
                if i + 1 < len(self.layers) and isinstance(self.layers[i + 1], L.ReLU):
                    return i + 1
                return i
        raise ShapeError("network has no fully connected feature layer")

    @property
    def feature_width(self) -> int:
        return self.shapes()[self.feature_layer + 1][0]

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "preset_id": list(self.preset_id) if self.preset_id else None,
            "layers": [{"type": type(l).__name__, **{k: list(v) if isinstance(v, tuple) else v
                                                      for k, v in asdict(l).items()}}
                       for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        layers = []
        for item in d["layers"]:
            item = dict(item)
            kind = L.LAYER_TYPES[item.pop("type")]
            layers.append(kind(**{k: tuple(v) if isinstance(v, list) else v for k, v in item.items()}))
        preset = tuple(d["preset_id"]) if d.get("preset_id") else None
        return cls(tuple(d["input_shape"]), tuple(layers), preset)


def network_preset(preset: int, dims_mode: str = "3d", input_shape=(1, 32, 32, 32),
                   clip_pool: bool = True) -> NetworkSpec:
    """Build Network 1..5 in 3D or depth-1 (2D) form.

    Each block is Conv(3, pad 1) -> BatchNorm -> ReLU -> MaxPool(2) with
    widths 8, 16, 32, ... The head is Flatten -> FC(128) -> ReLU -> FC(2).
    With ``clip_pool`` a pooling window shrinks to the remaining extent once
    an axis is down to one voxel; otherwise such an input is rejected.
    """
    if preset not in PRESET_BLOCKS:
        raise ShapeError(f"preset must be one of {sorted(PRESET_BLOCKS)}, got {preset}")
    mode = dims_mode.lower()
    if mode not in ("2d", "3d"):
        raise ShapeError(f"dims_mode must be '2d' or '3d', got {dims_mode!r}")
    c, d, h, w = (int(v) for v in input_shape)
    if mode == "2d" and d != 1:
        raise ShapeError(f"2D networks take depth-1 input, got {input_shape}")
    kd = 1 if mode == "2d" else 3
    layers = []
    ext = [d, h, w]
    ch = c
    for i in range(PRESET_BLOCKS[preset]):
        width = BASE_WIDTH * 2 ** i
        layers += [
            L.Conv(ch, width, kernel=(kd, 3, 3), stride=(1, 1, 1), pad=(kd // 2, 1, 1)),
            L.BatchNorm(width),
            L.ReLU(),
        ]
        size = [1 if mode == "2d" else 2, 2, 2]
        if clip_pool:
            size = [min(s, e) for s, e in zip(size, ext)]
        elif any(s > e for s, e in zip(size, ext)):
            raise ShapeError(f"input {input_shape} too small for {PRESET_BLOCKS[preset]} pooling stages")
        if max(size) > 1:
            layers.append(L.MaxPool(tuple(size), tuple(size)))
        ext = [(e - s) // s + 1 for e, s in zip(ext, size)]
        ch = width
    flat = ch * int(np.prod(ext))
    layers += [
        L.Flatten(),
        L.FullyConnected(flat, FEATURE_WIDTH),
        L.ReLU(),
        L.FullyConnected(FEATURE_WIDTH, 2),
        L.SoftmaxOutput(2),
    ]
    return NetworkSpec((c, d, h, w), tuple(layers), (preset, mode))


def init_params(network: NetworkSpec, seed: int = 0, dtype=np.float32) -> dict:
    """He-normal weights, zero biases, unit gamma, zero beta."""
    rng = np.random.default_rng(seed)
    params = {}
    for i, layer in enumerate(network.layers):
        if isinstance(layer, L.Conv):
            fan_in = layer.in_ch * int(np.prod(layer.kernel))
            shape = (layer.out_ch, layer.in_ch, *layer.kernel)
            params[f"{i}.weight"] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
            params[f"{i}.bias"] = np.zeros(layer.out_ch, dtype=dtype)
        elif isinstance(layer, L.FullyConnected):
            std = np.sqrt(2.0 / layer.in_dim)
            params[f"{i}.weight"] = (rng.standard_normal((layer.in_dim, layer.out_dim)) * std).astype(dtype)
            params[f"{i}.bias"] = np.zeros(layer.out_dim, dtype=dtype)
        elif isinstance(layer, L.BatchNorm):
            params[f"{i}.gamma"] = np.ones(layer.channels, dtype=dtype)
            params[f"{i}.beta"] = np.zeros(layer.channels, dtype=dtype)
            params[f"{i}.running_mean"] = np.zeros(layer.channels, dtype=dtype)
            params[f"{i}.running_var"] = np.ones(layer.channels, dtype=dtype)
    return params


def learnable_keys(params: dict) -> list:
    return [k for k in params if k.rsplit(".", 1)[1] in LEARNABLE]


@dataclass
class ForwardCache:
    """What a forward pass keeps for backward (train mode) or inspection."""

    mode: str
    batch_size: int
    activations: list = field(default_factory=list)
    layer_caches: list = field(default_factory=list)
    running_updates: dict = field(default_factory=dict)


def forward(network: NetworkSpec, params: dict, batch, mode: str = "eval",
            keep_activations: bool = False):
    """Run the network; returns ``(logits, probabilities, cache)``.

    ``cache`` is None in eval mode unless ``keep_activations`` is set.
    ``cache.activations[i]`` is the output of layer ``i``.
    """
    x = np.asarray(batch)
    if x.ndim != 5 or x.shape[1:] != network.input_shape:
        raise ShapeError(f"batch shape {x.shape} does not match (N, {network.input_shape})")
    keep = mode == "train" or keep_activations
    cache = ForwardCache(mode, x.shape[0]) if keep else None
    last = len(network.layers) - 1
    logits = _run(network, params, x, mode, cache, last - 1)
    probs = _run(network, params, logits, mode, cache, last, first=last)
    return logits, probs, cache


def _run(network, params, x, mode, cache, last, first=0):
    """Apply layers ``first..last`` (inclusive) to ``x``."""
    train = mode == "train"
    for i in range(first, last + 1):
        layer = network.layers[i]
        lc = None
        if isinstance(layer, L.Conv):
            out = L.conv_forward(x, layer, params[f"{i}.weight"], params[f"{i}.bias"], return_cache=train)
            if train:
                out, lc = out
        elif isinstance(layer, L.BatchNorm):
            res = L.batchnorm_forward(x, layer, params[f"{i}.gamma"], params[f"{i}.beta"],
                                      params[f"{i}.running_mean"], params[f"{i}.running_var"],
                                      mode=mode, return_cache=train)
            out = res[0]
            if train:
                lc = res[3]
                cache.running_updates[f"{i}.running_mean"] = res[1]
                cache.running_updates[f"{i}.running_var"] = res[2]
        elif isinstance(layer, L.ReLU):
            out = L.relu_forward(x)
            lc = x
        elif isinstance(layer, L.MaxPool):
            out, argmax = L.maxpool_forward(x, layer)
            lc = (argmax, x.shape)
        elif isinstance(layer, L.Flatten):
            out = x.reshape(x.shape[0], -1)
            lc = x.shape
        elif isinstance(layer, L.FullyConnected):
            out = L.fc_forward(x, params[f"{i}.weight"], params[f"{i}.bias"])
            lc = x
        elif isinstance(layer, L.SoftmaxOutput):
            out = L.softmax(x)
        else:
            raise TypeError(f"unknown layer {layer!r}")
        if cache is not None:
            cache.activations.append(out)
            if train:
                cache.layer_caches.append(lc)
        x = out
    return x


def backward(network: NetworkSpec, params: dict, cache: ForwardCache, labels) -> dict:
    """Gradients of mean cross-entropy for every learnable parameter."""
    if cache is None or cache.mode != "train" or not cache.layer_caches:
        raise ShapeError("backward needs the cache of a train-mode forward pass")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (cache.batch_size,):
        raise ShapeError(f"{labels.shape[0] if labels.ndim else 0} labels for a batch of {cache.batch_size}")
    grads = {}
    g = None
    for i in range(len(network.layers) - 1, -1, -1):
        layer = network.layers[i]
        lc = cache.layer_caches[i]
        if isinstance(layer, L.SoftmaxOutput):
            g = L.softmax_ce_backward(cache.activations[i], labels)
        elif isinstance(layer, L.FullyConnected):
            g, grads[f"{i}.weight"], grads[f"{i}.bias"] = L.fc_backward(g, lc, params[f"{i}.weight"])
        elif isinstance(layer, L.Flatten):
            g = g.reshape(lc)
        elif isinstance(layer, L.MaxPool):
            g = L.maxpool_backward(g, lc[0], lc[1])
        elif isinstance(layer, L.ReLU):
            g = L.relu_backward(g, lc)
        elif isinstance(layer, L.BatchNorm):
            g, grads[f"{i}.gamma"], grads[f"{i}.beta"] = L.batchnorm_backward(g, lc, params[f"{i}.gamma"])
        elif isinstance(layer, L.Conv):
            g, grads[f"{i}.weight"], grads[f"{i}.bias"] = L.conv_backward(g, lc, layer, params[f"{i}.weight"])
    return grads


def loss_and_grads(network: NetworkSpec, params: dict, batch, labels):
    logits, probs, cache = forward(network, params, batch, mode="train")
    return L.cross_entropy(logits, labels), backward(network, params, cache, labels), cache


def predict_proba(network: NetworkSpec, params: dict, batch, chunk: int = 32) -> np.ndarray:
    out = []
    for s in range(0, len(batch), chunk):
        out.append(forward(network, params, batch[s:s + chunk], mode="eval")[1])
    return np.concatenate(out, axis=0)


def extract_features(network: NetworkSpec, params: dict, batch, chunk: int = 32) -> np.ndarray:
    """Eval-mode feature-layer activations, one row per batch item."""
    idx = network.feature_layer
    batch = np.asarray(batch)
    if batch.ndim != 5 or batch.shape[1:] != network.input_shape:
        raise ShapeError(f"batch shape {batch.shape} does not match (N, {network.input_shape})")
    rows = [_run(network, params, batch[s:s + chunk], "eval", None, idx) for s in range(0, len(batch), chunk)]
    return np.concatenate(rows, axis=0)
