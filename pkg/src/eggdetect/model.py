"""Patch autoencoder assembly and checkpoint serialization.

The two model variants share one encoder and differ only in decoder
width: model1 carries 96 feature maps through its unpooling/deconvolution
stages, model2 carries 128.

Concrete stack on 16x16 single-map patches:

    conv 5x5 x32   16 -> 12
    maxpool 2      12 -> 6
    conv 3x3 x64    6 -> 4
    maxpool 2       4 -> 2
    flatten         64*2*2 = 256
    corrupt         additive Gaussian noise, training only
    dense           256 -> 864
    dense           864 -> zd*2*2
    reshape         (zd, 2, 2)
    unpool 2        2 -> 4
    deconv 3x3      4 -> 6   (zd -> zd maps)
    unpool 2        6 -> 12
    deconv 5x5     12 -> 16  (zd -> 1 map)

The mirrored 5/3 encoder and 3/5 decoder kernels are what make the
composite land back on 16x16 with valid-mode convs, power-of-two pools,
and full-mode deconvs; build_model asserts that closure. The 864-unit
code layer is overcomplete relative to the 256-unit flatten, sized so
both variants stay within the documented parameter budget; the l1/l2
regularizer keeps the overcomplete code well behaved.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .layers import (
    Conv2D,
    Deconv2D,
    Dense,
    Flatten,
    GaussianCorruption,
    Layer,
    MaxPool2D,
    ReshapeMaps,
    Unpool2D,
)
from .tensorops import FLOAT

PATCH_SIZE = 16
INPUT_SHAPE = (1, PATCH_SIZE, PATCH_SIZE)
DECODER_MAPS = {"model1": 96, "model2": 128}
CODE_UNITS = 864

# documented parameter budget target and tolerance
PARAM_COUNT_TARGET = 743209
PARAM_COUNT_TOLERANCE = 0.15


class LayerStack:
    """Ordered layers plus the plumbing the optimizer needs."""

    def __init__(self, layers: list[Layer], arch: str = "custom",
                 noise_std: float = 0.0, input_shape=INPUT_SHAPE):
        self.layers = layers
        self.arch = arch
        self.noise_std = noise_std
        self.input_shape = tuple(input_shape)

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, train=train, rng=rng)
        return x

    def backward(self, dout: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def out_shape(self, in_shape=None):
        shape = tuple(in_shape) if in_shape is not None else self.input_shape
        for layer in self.layers:
            shape = layer.out_shape(shape)
        return shape

    def param_slots(self) -> list[tuple[Layer, str]]:
        """(layer, name) pairs in a fixed order, one per parameter array."""
        slots = []
        for layer in self.layers:
            for name in sorted(layer.params):
                slots.append((layer, name))
        return slots

    def weight_arrays(self) -> list[np.ndarray]:
        """Weight matrices only; biases are excluded from regularization."""
        return [layer.params["W"] for layer in self.layers if "W" in layer.params]

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)

    def snapshot(self) -> list[np.ndarray]:
        return [layer.params[name].copy() for layer, name in self.param_slots()]

    def restore(self, snapshot: list[np.ndarray]) -> None:
        for (layer, name), saved in zip(self.param_slots(), snapshot):
            layer.params[name][...] = saved

    def cast(self, dtype) -> None:
        for layer, name in self.param_slots():
            layer.params[name] = layer.params[name].astype(dtype)


def build_model(arch: str, seed: int, noise_std: float = 0.1,
                zero_insert_unpool: bool = False) -> LayerStack:
    """Assemble and initialize a model1 or model2 stack."""
    arch = arch.lower()
    if arch not in DECODER_MAPS:
        raise ValueError(f"unknown arch {arch!r}; expected one of {sorted(DECODER_MAPS)}")
    zd = DECODER_MAPS[arch]
    layers = [
        Conv2D(1, 32, 5),
        MaxPool2D(2),
        Conv2D(32, 64, 3),
        MaxPool2D(2),
        Flatten(),
        GaussianCorruption(noise_std),
        Dense(64 * 2 * 2, CODE_UNITS),
        Dense(CODE_UNITS, zd * 2 * 2),
        ReshapeMaps(zd, 2, 2),
        Unpool2D(2, zero_insert=zero_insert_unpool),
        Deconv2D(zd, zd, 3),
        Unpool2D(2, zero_insert=zero_insert_unpool),
        Deconv2D(zd, 1, 5),
    ]
    model = LayerStack(layers, arch=arch, noise_std=noise_std)
    closed = model.out_shape()
    if closed != INPUT_SHAPE:
        raise AssertionError(f"stack does not close: {INPUT_SHAPE} -> {closed}")
    rng = np.random.default_rng(np.random.PCG64(seed))
    for layer in layers:
        if hasattr(layer, "init_params"):
            layer.init_params(rng)
    return model


# ---------------------------------------------------------------------------
# Checkpoint format: little-endian binary, self-describing layer table.
#
#   magic "EGGDAE1\n" | u32 version | u8 arch tag | f64 noise_std |
#   u32 layer count | per layer: u8 kind, u8 n_meta, i32 meta... |
#   per layer in order, params sorted by name: raw float64 payloads
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"EGGDAE1\n"
CHECKPOINT_VERSION = 1
_ARCH_TAGS = {"model1": 1, "model2": 2, "custom": 0}
_KIND_CODES = {
    "conv": 1, "maxpool": 2, "dense": 3, "reshape": 4,
    "unpool": 5, "deconv": 6, "corrupt": 7, "flatten": 8,
}


def _layer_meta(layer: Layer) -> list[int]:
    if isinstance(layer, (Conv2D, Deconv2D)):
        return [layer.in_maps, layer.out_maps, layer.ksize]
    if isinstance(layer, MaxPool2D):
        return [layer.pool]
    if isinstance(layer, Unpool2D):
        return [layer.pool, int(layer.zero_insert)]
    if isinstance(layer, Dense):
        return [layer.in_units, layer.out_units]
    if isinstance(layer, ReshapeMaps):
        return [layer.maps, layer.height, layer.width]
    return []


def _layer_from_meta(kind: str, meta: list[int], noise_std: float) -> Layer:
    if kind == "conv":
        return Conv2D(*meta)
    if kind == "deconv":
        return Deconv2D(*meta)
    if kind == "maxpool":
        return MaxPool2D(meta[0])
    if kind == "unpool":
        return Unpool2D(meta[0], zero_insert=bool(meta[1]))
    if kind == "dense":
        return Dense(*meta)
    if kind == "reshape":
        return ReshapeMaps(*meta)
    if kind == "corrupt":
        return GaussianCorruption(noise_std)
    if kind == "flatten":
        return Flatten()
    raise ValueError(f"unknown layer kind {kind!r}")


def _param_shapes(layer: Layer) -> list[tuple[str, tuple[int, ...]]]:
    if isinstance(layer, (Conv2D, Deconv2D)):
        return [("W", (layer.out_maps, layer.in_maps, layer.ksize, layer.ksize)),
                ("b", (layer.out_maps,))]
    if isinstance(layer, Dense):
        return [("W", (layer.out_units, layer.in_units)), ("b", (layer.out_units,))]
    return []


def save_checkpoint(model: LayerStack, path, metadata: dict | None = None) -> None:
    """Write the binary checkpoint plus a human-readable JSON sidecar."""
    path = Path(path)
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    blob += struct.pack("<B", _ARCH_TAGS[model.arch])
    blob += struct.pack("<d", model.noise_std)
    blob += struct.pack("<I", len(model.layers))
    for layer in model.layers:
        meta = _layer_meta(layer)
        blob += struct.pack("<BB", _KIND_CODES[layer.kind], len(meta))
        blob += struct.pack(f"<{len(meta)}i", *meta) if meta else b""
    for layer in model.layers:
        for name in sorted(layer.params):
            blob += np.ascontiguousarray(layer.params[name], dtype="<f8").tobytes()
    path.write_bytes(bytes(blob))

    sidecar = dict(metadata or {})
    sidecar.setdefault("arch", model.arch)
    sidecar.setdefault("noise_std", model.noise_std)
    sidecar.setdefault("param_count", model.param_count())
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
    )


def load_checkpoint(path) -> tuple[LayerStack, dict]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<I", blob, off); off += 4
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (arch_tag,) = struct.unpack_from("<B", blob, off); off += 1
    (noise_std,) = struct.unpack_from("<d", blob, off); off += 8
    (n_layers,) = struct.unpack_from("<I", blob, off); off += 4
    arch = {v: k for k, v in _ARCH_TAGS.items()}[arch_tag]
    kinds = {v: k for k, v in _KIND_CODES.items()}

    layers = []
    for _ in range(n_layers):
        kind_code, n_meta = struct.unpack_from("<BB", blob, off); off += 2
        meta = list(struct.unpack_from(f"<{n_meta}i", blob, off)) if n_meta else []
        off += 4 * n_meta
        layers.append(_layer_from_meta(kinds[kind_code], meta, noise_std))

    for layer in layers:
        params = {}
        for name, shape in _param_shapes(layer):
            count = int(np.prod(shape))
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
            off += count * 8
            # copy into a fresh (writable, aligned) allocation; views into
            # the blob are read-only and alignment perturbs BLAS results
            params[name] = np.array(arr.reshape(shape), dtype=FLOAT)
        if params:
            layer.params = params
    if off != len(blob):
        raise ValueError(f"{path}: {len(blob) - off} trailing bytes")

    model = LayerStack(layers, arch=arch, noise_std=noise_std)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    metadata = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else {}
    return model, metadata
