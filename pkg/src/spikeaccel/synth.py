"""Random models and inputs for equivalence testing and calibration runs."""
from __future__ import annotations

import numpy as np

from . import fxp
from .model import Conv, Dense, HardwareConfig, LayerWeights, MaxPool, NetworkSpec, resolve_layers, weight_shape


def random_weights(spec: NetworkSpec, rng: np.random.Generator, low: float = -1.0, high: float = 1.0,
                   bias_low: float | None = None, bias_high: float | None = None) -> list:
    """Uniform raw Q3.29 weights in ``[low, high]`` for every compute layer."""
    bias_low = low if bias_low is None else bias_low
    bias_high = high if bias_high is None else bias_high
    out = []
    for layer in spec.compute_layers:
        shape = weight_shape(layer)
        w = rng.integers(fxp.encode_raw(low), fxp.encode_raw(high), size=shape, endpoint=True)
        b = rng.integers(fxp.encode_raw(bias_low), fxp.encode_raw(bias_high), size=shape[0], endpoint=True)
        out.append(LayerWeights(w.astype(np.int64), b.astype(np.int64)))
    return out


def scaled_weights(spec: NetworkSpec, rng: np.random.Generator, gain: float = 1.0,
                   bias: float = 0.0) -> list:
    """Uniform weights in ``+-gain / sqrt(fan_in)``, clipped to [-1, 1].

    Keeps firing rates roughly stable from layer to layer, which a flat
    ``[-1, 1]`` draw does not for wide layers.
    """
    out = []
    for layer in spec.compute_layers:
        shape = weight_shape(layer)
        fan_in = int(np.prod(shape[1:]))
        a = min(1.0, gain / np.sqrt(fan_in))
        w = fxp.encode_array(rng.uniform(-a, a, size=shape))
        b = np.full(shape[0], fxp.encode_raw(bias), dtype=np.int64)
        out.append(LayerWeights(w, b))
    return out


def random_spec(rng: np.random.Generator, *, max_conv: int = 2, max_channels: int = 8,
                max_hw: int = 12, max_t: int = 4, max_classes: int = 4, max_pop: int = 3) -> NetworkSpec:
    """Small random topology: up to ``max_conv`` convs, at most one pool, one dense classifier."""
    while True:
        h = int(rng.integers(1, max_hw + 1))
        w = int(rng.integers(1, max_hw + 1))
        c = int(rng.integers(1, max_channels + 1))
        n_conv = int(rng.integers(0, max_conv + 1))
        layers = []
        for _ in range(n_conv):
            k = int(rng.choice([1, 3, 5])) if rng.random() < 0.8 else int(rng.integers(1, 5))
            pad = "same" if (k % 2 and rng.random() < 0.7) else "valid"
            layers.append(Conv(int(rng.integers(1, max_channels + 1)), k, pad))
        if rng.random() < 0.5:
            pos = int(rng.integers(0, len(layers) + 1))
            layers.insert(pos, MaxPool(int(rng.integers(1, 4))))
        classes = int(rng.integers(1, max_classes + 1))
        pop = int(rng.integers(1, max_pop + 1))
        layers.append(Dense(classes * pop))
        try:
            resolved = resolve_layers((h, w, c), layers)
        except ValueError:
            continue
        beta = fxp.Fx32(int(rng.integers(1, fxp.ONE_RAW)))
        return NetworkSpec((h, w, c), resolved, int(rng.integers(1, max_t + 1)), beta, classes, pop)


def random_image(shape, rng: np.random.Generator) -> np.ndarray:
    """(C, H, W) float32-representable intensities in [0, 1]."""
    h, w, c = shape
    return rng.random((c, h, w)).astype(np.float32).astype(np.float64)


def sparse_image(shape, rng: np.random.Generator, sparsity: float) -> np.ndarray:
    """Binary image with a ``1 - sparsity`` fraction of pixels at full intensity."""
    h, w, c = shape
    n = c * h * w
    on = int(round((1.0 - sparsity) * n))
    img = np.zeros(n)
    img[rng.choice(n, size=on, replace=False)] = 1.0
    return img.reshape(c, h, w)


def hw_grid(spec: NetworkSpec, nc_choices=("1", "2", "cout"), chunk_choices=(1, 3)) -> list:
    """Uniform hardware configs over core-count and chunk choices.

    ``"cout"`` means one core per output channel; chunk counts are clipped to
    the OFM size.
    """
    configs = []
    shapes = [s for l, s in zip(spec.layers, spec.shapes()) if isinstance(l, (Conv, Dense))]
    for nc in nc_choices:
        for chunks in chunk_choices:
            layers = []
            for layer, (h, w, _) in zip(spec.compute_layers, shapes):
                cap = layer.out_channels if isinstance(layer, Conv) else layer.out_features
                n = cap if nc == "cout" else min(int(nc), cap)
                ch = min(chunks, h * w) if isinstance(layer, Conv) else 1
                layers.append((n, ch))
            configs.append(HardwareConfig.from_counts([n for n, _ in layers], [c for _, c in layers]))
    return configs
