"""Network topology, LIF parameters, weights and hardware configuration.

These are the design-time inputs of the accelerator generator.  A network is
described by a compact topology string such as ``28x28-32C3-32C3-P3-10C3-10``
and a JSON manifest that points at raw little-endian int32 weight blobs.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Union

import numpy as np

from . import fxp

MANIFEST_VERSION = 1


class ModelError(ValueError):
    """Invalid topology, shape chain or manifest contents."""


class TopologyParseError(ModelError):
    def __init__(self, message: str, position: int):
        super().__init__(f"token {position}: {message}")
        self.position = position


class ManifestIOError(OSError):
    """A file referenced by a manifest is missing or unreadable."""


# ---------------------------------------------------------------------------
# layers


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int = 3
    padding: str = "same"
    in_channels: int = 0  # filled in by shape inference

    kind = "conv"

    @property
    def filter_size(self) -> int:
        return self.kernel * self.kernel


@dataclass(frozen=True)
class MaxPool:
    window: int

    kind = "pool"


@dataclass(frozen=True)
class Dense:
    out_features: int
    in_features: int = 0  # filled in by shape inference

    kind = "dense"


LayerSpec = Union[Conv, MaxPool, Dense]
Shape = tuple  # (H, W, C)


def is_compute(layer: LayerSpec) -> bool:
    return isinstance(layer, (Conv, Dense))


# ---------------------------------------------------------------------------
# topology grammar

_DIMS_RE = re.compile(r"^(\d+)x(\d+)(?:x(\d+))?$")
_CONV_RE = re.compile(r"^(\d+)C(\d+)$")
_POOL_RE = re.compile(r"^M?P(\d+)$")
_DENSE_RE = re.compile(r"^(\d+)$")


@dataclass(frozen=True)
class Topology:
    input_shape: Shape
    layers: tuple

    @property
    def compute_layers(self) -> list:
        return [l for l in self.layers if is_compute(l)]


def infer_shapes(input_shape: Shape, layers) -> list:
    """Output ``(H, W, C)`` of every layer; Dense layers report ``(1, 1, out)``.

    Conv ``same`` keeps H x W, ``valid`` gives ``H - K + 1``, MaxPool floors.
    """
    h, w, c = input_shape
    shapes = []
    flat = False
    for i, layer in enumerate(layers):
        if isinstance(layer, Conv):
            if flat:
                raise ModelError(f"layer {i}: Conv after Dense is not supported")
            if layer.kernel < 1:
                raise ModelError(f"layer {i}: kernel must be >= 1")
            if layer.padding == "same":
                if layer.kernel % 2 == 0:
                    raise ModelError(f"layer {i}: 'same' padding needs an odd kernel")
            elif layer.padding == "valid":
                h, w = h - layer.kernel + 1, w - layer.kernel + 1
            else:
                raise ModelError(f"layer {i}: unknown padding {layer.padding!r}")
            c = layer.out_channels
        elif isinstance(layer, MaxPool):
            if flat:
                raise ModelError(f"layer {i}: MaxPool after Dense is not supported")
            if layer.window < 1:
                raise ModelError(f"layer {i}: pool window must be >= 1")
            h, w = h // layer.window, w // layer.window
        elif isinstance(layer, Dense):
            h, w, c = 1, 1, layer.out_features
            flat = True
        else:
            raise ModelError(f"layer {i}: unknown layer {layer!r}")
        if h <= 0 or w <= 0 or c <= 0:
            raise ModelError(f"layer {i}: non-positive output shape {(h, w, c)}")
        shapes.append((h, w, c))
    return shapes


def resolve_layers(input_shape: Shape, layers) -> tuple:
    """Fill in ``in_channels``/``in_features`` and validate the chain."""
    shapes = infer_shapes(input_shape, layers)
    resolved = []
    prev = tuple(input_shape)
    for layer, out in zip(layers, shapes):
        if isinstance(layer, Conv):
            layer = replace(layer, in_channels=prev[2])
        elif isinstance(layer, Dense):
            layer = replace(layer, in_features=prev[0] * prev[1] * prev[2])
        resolved.append(layer)
        prev = out
    return tuple(resolved)


def parse_topology(text: str, pop_per_class: int = 1, padding=None) -> Topology:
    """Parse ``HxW[xC]-tok-tok...``.

    Tokens are ``<n>C<k>`` (conv), ``P<z>``/``MP<z>`` (max-pool) or a bare
    integer (dense).  The trailing dense layer is the classifier, so its width
    is multiplied by ``pop_per_class``.  ``padding`` optionally gives one
    padding mode per conv layer.
    """
    tokens = text.strip().split("-")
    m = _DIMS_RE.match(tokens[0])
    if not m:
        raise TopologyParseError(f"bad input dims {tokens[0]!r}", 0)
    h, w = int(m.group(1)), int(m.group(2))
    c = int(m.group(3)) if m.group(3) else 1
    if min(h, w, c) <= 0:
        raise TopologyParseError("input dims must be positive", 0)

    layers = []
    paddings = list(padding) if padding is not None else None
    n_conv = 0
    for pos, tok in enumerate(tokens[1:], start=1):
        if m := _CONV_RE.match(tok):
            pad = "same"
            if paddings is not None:
                if n_conv >= len(paddings):
                    raise ModelError("fewer padding entries than conv layers")
                pad = paddings[n_conv]
            n_conv += 1
            layers.append(Conv(out_channels=int(m.group(1)), kernel=int(m.group(2)), padding=pad))
        elif m := _POOL_RE.match(tok):
            layers.append(MaxPool(int(m.group(1))))
        elif m := _DENSE_RE.match(tok):
            layers.append(Dense(int(m.group(1))))
        else:
            raise TopologyParseError(f"unrecognised token {tok!r}", pos)
        if any(v == 0 for v in _layer_ints(layers[-1])):
            raise TopologyParseError(f"zero size in token {tok!r}", pos)
    if paddings is not None and n_conv != len(paddings):
        raise ModelError("more padding entries than conv layers")

    if layers and isinstance(layers[-1], Dense) and pop_per_class != 1:
        layers[-1] = Dense(layers[-1].out_features * pop_per_class)
    return Topology((h, w, c), resolve_layers((h, w, c), layers))


def _layer_ints(layer):
    if isinstance(layer, Conv):
        return (layer.out_channels, layer.kernel)
    if isinstance(layer, MaxPool):
        return (layer.window,)
    return (layer.out_features,)


def render_topology(topo: Topology, pop_per_class: int = 1) -> str:
    """Inverse of :func:`parse_topology` (pools render as ``P<z>``)."""
    h, w, c = topo.input_shape
    parts = [f"{h}x{w}" if c == 1 else f"{h}x{w}x{c}"]
    n = len(topo.layers)
    for i, layer in enumerate(topo.layers):
        if isinstance(layer, Conv):
            parts.append(f"{layer.out_channels}C{layer.kernel}")
        elif isinstance(layer, MaxPool):
            parts.append(f"P{layer.window}")
        else:
            out = layer.out_features
            if i == n - 1 and pop_per_class != 1:
                if out % pop_per_class:
                    raise ModelError("classifier width is not a multiple of pop_per_class")
                out //= pop_per_class
            parts.append(str(out))
    return "-".join(parts)


# ---------------------------------------------------------------------------
# network, weights, hardware


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: Shape
    layers: tuple
    timesteps: int
    beta: fxp.Fx32
    classes: int
    pop_per_class: int = 1
    theta: fxp.Fx32 = fxp.ONE

    def __post_init__(self):
        if self.timesteps < 1:
            raise ModelError("timesteps must be positive")
        if self.theta != fxp.ONE:
            raise ModelError("theta is fixed to 1.0 by the three-bit comparator")
        if not 0 < self.beta.raw < fxp.ONE_RAW:
            raise ModelError("beta must lie strictly between 0 and 1")
        if self.classes < 1 or self.pop_per_class < 1:
            raise ModelError("classes and pop_per_class must be positive")
        if not self.layers or not isinstance(self.layers[-1], Dense):
            raise ModelError("network must end in a Dense classifier layer")
        if self.layers[-1].out_features != self.classes * self.pop_per_class:
            raise ModelError(
                f"classifier width {self.layers[-1].out_features} != "
                f"classes*pop_per_class = {self.classes * self.pop_per_class}"
            )
        # re-resolve to validate the chain and in_* fields
        if resolve_layers(self.input_shape, self.layers) != tuple(self.layers):
            raise ModelError("layer in_channels/in_features do not match shape inference")

    @classmethod
    def from_topology(cls, text: str, *, timesteps: int, beta, classes: int,
                      pop_per_class: int = 1, padding=None) -> "NetworkSpec":
        topo = parse_topology(text, pop_per_class, padding)
        b = beta if isinstance(beta, fxp.Fx32) else fxp.encode(beta)
        return cls(topo.input_shape, topo.layers, timesteps, b, classes, pop_per_class)

    @property
    def topology(self) -> Topology:
        return Topology(self.input_shape, self.layers)

    @property
    def compute_layers(self) -> list:
        return [l for l in self.layers if is_compute(l)]

    def shapes(self) -> list:
        """Output shape of every layer."""
        return infer_shapes(self.input_shape, self.layers)

    def input_shapes(self) -> list:
        return [tuple(self.input_shape)] + self.shapes()[:-1]


@dataclass
class LayerWeights:
    """Raw Q3.29 weights (int64 container) and bias for one compute layer."""

    w: np.ndarray
    bias: np.ndarray


def weight_shape(layer: LayerSpec) -> tuple:
    if isinstance(layer, Conv):
        return (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
    if isinstance(layer, Dense):
        return (layer.out_features, layer.in_features)
    raise ModelError(f"{layer!r} has no weights")


def check_weights(spec: NetworkSpec, weights: list) -> None:
    compute = spec.compute_layers
    if len(weights) != len(compute):
        raise ModelError(f"expected {len(compute)} weight sets, got {len(weights)}")
    for i, (layer, lw) in enumerate(zip(compute, weights)):
        want = weight_shape(layer)
        if tuple(lw.w.shape) != want:
            raise ModelError(f"compute layer {i} ({layer.kind}): weights {lw.w.shape} != {want}")
        if tuple(lw.bias.shape) != (want[0],):
            raise ModelError(f"compute layer {i} ({layer.kind}): bias {lw.bias.shape} != {(want[0],)}")


@dataclass(frozen=True)
class LayerHW:
    nc_count: int = 1
    chunk_count: int = 1


@dataclass(frozen=True)
class HardwareConfig:
    """Per compute layer core count and OFM chunking, plus timing knobs."""

    layers: tuple
    clock_mhz: float = 125.0
    penc_width: int = 32
    pipeline_fill: int = 4

    @classmethod
    def uniform(cls, spec: NetworkSpec, nc_count: int = 1, chunk_count: int = 1, **kw) -> "HardwareConfig":
        layers = []
        for layer in spec.compute_layers:
            cap = layer.out_channels if isinstance(layer, Conv) else layer.out_features
            chunks = chunk_count if isinstance(layer, Conv) else 1
            layers.append(LayerHW(min(nc_count, cap), chunks))
        return cls(tuple(layers), **kw)

    @classmethod
    def from_counts(cls, counts, chunks=None, **kw) -> "HardwareConfig":
        chunks = chunks or [1] * len(counts)
        return cls(tuple(LayerHW(n, c) for n, c in zip(counts, chunks)), **kw)

    def with_counts(self, counts) -> "HardwareConfig":
        return replace(self, layers=tuple(replace(h, nc_count=n) for h, n in zip(self.layers, counts)))

    def validate(self, spec: NetworkSpec) -> None:
        compute = spec.compute_layers
        if len(self.layers) != len(compute):
            raise ModelError(f"hardware config has {len(self.layers)} entries for {len(compute)} compute layers")
        if not self.clock_mhz > 0:
            raise ModelError("clock_mhz must be positive")
        if self.penc_width < 1 or self.pipeline_fill < 0:
            raise ModelError("penc_width must be >= 1 and pipeline_fill >= 0")
        out_shapes = [s for l, s in zip(spec.layers, spec.shapes()) if is_compute(l)]
        for i, (layer, hw) in enumerate(zip(compute, self.layers)):
            cap = layer.out_channels if isinstance(layer, Conv) else layer.out_features
            if not 1 <= hw.nc_count <= cap:
                raise ModelError(f"compute layer {i}: nc_count {hw.nc_count} outside [1, {cap}]")
            if hw.chunk_count < 1:
                raise ModelError(f"compute layer {i}: chunk_count must be >= 1")
            if isinstance(layer, Dense) and hw.chunk_count != 1:
                raise ModelError(f"compute layer {i}: dense layers are not chunked")
            if isinstance(layer, Conv):
                h, w, _ = out_shapes[i]
                if hw.chunk_count > h * w:
                    raise ModelError(f"compute layer {i}: more chunks than neurons per OFM")


def chunk_ranges(n: int, chunk_count: int) -> list:
    """Contiguous row-major ``[lo, hi)`` spans of ``ceil(n / chunk_count)``."""
    size = -(-n // chunk_count)
    return [(lo, min(lo + size, n)) for lo in range(0, n, size)]


# ---------------------------------------------------------------------------
# manifest I/O


def _read_blob(path: Path, count: int, what: str) -> np.ndarray:
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ManifestIOError(f"cannot read {what} {path}: {exc.strerror or exc}") from exc
    if len(data) != 4 * count:
        raise ModelError(
            f"{what} {path}: shape mismatch, expected {count} int32 values, found {len(data) / 4:g}"
        )
    return np.frombuffer(data, dtype="<i4").astype(np.int64)


def write_blob(path: Path, raw: np.ndarray) -> None:
    arr = np.asarray(raw, dtype=np.int64)
    if arr.size and (arr.min() < fxp.RAW_MIN or arr.max() > fxp.RAW_MAX):
        raise ModelError(f"{path}: value outside int32")
    Path(path).write_bytes(arr.astype("<i4").tobytes())


def load_manifest(path) -> tuple:
    """Load ``(NetworkSpec, weights, HardwareConfig)`` from a JSON manifest."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ManifestIOError(f"cannot read manifest {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelError(f"manifest {path} is not valid JSON: {exc}") from exc
    base = path.parent

    try:
        spec = NetworkSpec.from_topology(
            doc["topology"],
            timesteps=int(doc["timesteps"]),
            beta=str(doc["beta"]),
            classes=int(doc["classes"]),
            pop_per_class=int(doc.get("pop_per_class", 1)),
            padding=doc.get("padding"),
        )
        entries = doc["layers"]
    except KeyError as exc:
        raise ModelError(f"manifest {path}: missing field {exc}") from exc
    except fxp.FxpRangeError as exc:
        raise ModelError(f"manifest {path}: beta {exc}") from exc

    compute = spec.compute_layers
    if len(entries) != len(compute):
        raise ModelError(f"manifest lists {len(entries)} layer entries for {len(compute)} compute layers")

    weights, hw_layers = [], []
    for i, (layer, ent) in enumerate(zip(compute, entries)):
        shape = weight_shape(layer)
        name = f"layer {i} ({layer.kind})"
        try:
            w = _read_blob(base / ent["weights_file"], int(np.prod(shape)), f"{name} weights")
            b = _read_blob(base / ent["bias_file"], shape[0], f"{name} bias")
        except KeyError as exc:
            raise ModelError(f"{name}: missing field {exc}") from exc
        weights.append(LayerWeights(w.reshape(shape), b))
        hw_layers.append(LayerHW(int(ent.get("nc_count", 1)), int(ent.get("chunk_count", 1))))

    hw = HardwareConfig(
        tuple(hw_layers),
        clock_mhz=float(doc.get("clock_mhz", 125.0)),
        penc_width=int(doc.get("penc_width", 32)),
        pipeline_fill=int(doc.get("pipeline_fill", 4)),
    )
    hw.validate(spec)
    check_weights(spec, weights)
    return spec, weights, hw


def _beta_text(beta: fxp.Fx32) -> str:
    # shortest decimal that encodes back to the same raw
    frac = beta.to_fraction()
    for digits in range(1, 40):
        text = f"{float(frac):.{digits}f}".rstrip("0").rstrip(".")
        if fxp.encode_raw(Fraction(text)) == beta.raw:
            return text
    return repr(float(frac))


def save_manifest(path, spec: NetworkSpec, weights: list, hw: HardwareConfig,
                  blob_prefix: str = "") -> Path:
    """Write a manifest plus one weight and one bias blob per compute layer."""
    path = Path(path)
    base = path.parent
    base.mkdir(parents=True, exist_ok=True)
    check_weights(spec, weights)
    hw.validate(spec)
    entries = []
    for i, (layer, lw, lhw) in enumerate(zip(spec.compute_layers, weights, hw.layers)):
        wname = f"{blob_prefix}layer{i}_{layer.kind}_w.bin"
        bname = f"{blob_prefix}layer{i}_{layer.kind}_b.bin"
        write_blob(base / wname, lw.w.reshape(-1))
        write_blob(base / bname, lw.bias)
        entries.append({"kind": layer.kind, "nc_count": lhw.nc_count, "chunk_count": lhw.chunk_count,
                        "weights_file": wname, "bias_file": bname})
    doc = {
        "format_version": MANIFEST_VERSION,
        "topology": render_topology(spec.topology, spec.pop_per_class),
        "padding": [l.padding for l in spec.layers if isinstance(l, Conv)],
        "timesteps": spec.timesteps,
        "beta": _beta_text(spec.beta),
        "classes": spec.classes,
        "pop_per_class": spec.pop_per_class,
        "clock_mhz": hw.clock_mhz,
        "penc_width": hw.penc_width,
        "pipeline_fill": hw.pipeline_fill,
        "layers": entries,
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def load_image(path, shape: Shape) -> np.ndarray:
    """Read a float32 ``[C][H][W]`` tensor; returns float64 array shaped (C, H, W)."""
    h, w, c = shape
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ManifestIOError(f"cannot read input {path}: {exc.strerror or exc}") from exc
    if len(data) != 4 * c * h * w:
        raise ModelError(f"input {path}: expected {c * h * w} float32 values, found {len(data) / 4:g}")
    return np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(c, h, w)


def save_image(path, image: np.ndarray) -> None:
    Path(path).write_bytes(np.asarray(image, dtype="<f4").tobytes())
