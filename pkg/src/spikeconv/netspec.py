"""Layered DNN description, model file I/O, batch-norm folding and the
real-valued forward pass.

Activations are laid out NHWC (``(batch, height, width, channels)``); conv
weights are ``(out_ch, in_ch, kh, kw)`` and dense weights ``(out, in)``. A
dense layer that follows a spatial layer consumes the HWC-flattened tensor,
so input feature ``f`` belongs to channel ``f % channels``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

DTYPE = np.float32
KINDS = ("conv2d", "dense", "maxpool2d")
ACTIVATIONS = ("leaky_relu", "none")
PADDINGS = ("same", "valid")


class ModelError(ValueError):
    """Raised for malformed manifests, blobs or inconsistent networks."""


def _frozen(a, dtype=DTYPE):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        for name in ("gamma", "beta", "mean", "var"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if np.any(self.var < 0):
            raise ModelError("batchnorm variance must be non-negative")

    def scale(self) -> np.ndarray:
        return (self.gamma / np.sqrt(self.var + DTYPE(self.eps))).astype(DTYPE)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_ch: int = 0
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    kernel: tuple[int, int] = (1, 1)
    stride: int = 1
    padding: str = "valid"
    batchnorm: BatchNorm | None = None
    activation: str = "leaky_relu"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown layer kind {self.kind!r}")
        if self.padding not in PADDINGS:
            raise ModelError(f"unknown padding {self.padding!r}")
        if self.activation not in ACTIVATIONS:
            raise ModelError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "kernel", tuple(int(k) for k in np.broadcast_to(self.kernel, 2)))
        if self.stride < 1 or min(self.kernel) < 1:
            raise ModelError("kernel and stride must be positive")
        if self.kind == "maxpool2d":
            if self.weights is not None or self.bias is not None or self.batchnorm is not None:
                raise ModelError("maxpool layers carry no weights, bias or batchnorm")
            if self.activation != "none":
                raise ModelError("maxpool layers have no activation")
            return
        if self.weights is None:
            raise ModelError(f"{self.kind} layer needs weights")
        w = _frozen(self.weights)
        expected_ndim = 4 if self.kind == "conv2d" else 2
        if w.ndim != expected_ndim:
            raise ModelError(f"{self.kind} weights must be {expected_ndim}-D, got shape {w.shape}")
        if self.kind == "conv2d":
            object.__setattr__(self, "kernel", (w.shape[2], w.shape[3]))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "out_ch", int(w.shape[0]))
        b = np.zeros(w.shape[0]) if self.bias is None else self.bias
        b = _frozen(b)
        if b.shape != (w.shape[0],):
            raise ModelError(f"bias shape {b.shape} does not match {w.shape[0]} output channels")
        object.__setattr__(self, "bias", b)
        bn = self.batchnorm
        if bn is not None and any(getattr(bn, k).shape != (w.shape[0],) for k in ("gamma", "beta", "mean", "var")):
            raise ModelError("batchnorm parameters must have one entry per output channel")

    @property
    def in_ch(self) -> int | None:
        return None if self.weights is None else int(self.weights.shape[1])

    @property
    def has_weights(self) -> bool:
        return self.kind != "maxpool2d"


def pad_amounts(size: int, k: int, stride: int, padding: str) -> tuple[int, int, int]:
    """Return ``(out_size, pad_before, pad_after)`` along one spatial axis."""
    if padding == "valid":
        out = (size - k) // stride + 1
        if out < 1:
            raise ModelError(f"kernel {k} larger than input {size} with valid padding")
        return out, 0, 0
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


def output_shape(layer: LayerSpec, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    if layer.kind == "dense":
        n_in = int(np.prod(in_shape))
        if layer.weights.shape[1] != n_in:
            raise ModelError(f"dense layer expects {layer.weights.shape[1]} inputs, got {n_in}")
        return (layer.out_ch,)
    if len(in_shape) != 3:
        raise ModelError(f"{layer.kind} needs a spatial (h, w, c) input, got {in_shape}")
    h, w, c = in_shape
    if layer.kind == "conv2d" and layer.in_ch != c:
        raise ModelError(f"conv layer expects {layer.in_ch} input channels, got {c}")
    oh = pad_amounts(h, layer.kernel[0], layer.stride, layer.padding)[0]
    ow = pad_amounts(w, layer.kernel[1], layer.stride, layer.padding)[0]
    return (oh, ow, layer.out_ch if layer.kind == "conv2d" else c)


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int]
    alpha: float = 0.01
    shapes: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if len(self.input_shape) != 3:
            raise ModelError("input_shape must be (height, width, channels)")
        if not 0 < self.alpha <= 1:
            raise ModelError(f"leaky slope alpha must be in (0, 1], got {self.alpha}")
        if not self.layers:
            raise ModelError("network has no layers")
        last = self.layers[-1]
        if not last.has_weights or last.activation != "none":
            raise ModelError("final layer must be a conv/dense layer with linear output")
        shapes, shape = [], self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = output_shape(layer, shape)
            except ModelError as exc:
                raise ModelError(f"layer {i}: {exc}") from None
            shapes.append(shape)
        object.__setattr__(self, "shapes", tuple(shapes))

    def in_shape(self, index: int) -> tuple[int, ...]:
        return self.input_shape if index == 0 else self.shapes[index - 1]

    def channels(self, index: int) -> int:
        """Channel count of layer ``index``'s output (``-1`` means the input)."""
        shape = self.input_shape if index < 0 else self.shapes[index]
        return shape[-1]


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------


def leaky_relu(x, alpha):
    return np.where(x >= 0, x, x * x.dtype.type(alpha))


def _pad(x, layer, fill):
    h, w = x.shape[1:3]
    _, t, b = pad_amounts(h, layer.kernel[0], layer.stride, layer.padding)
    _, l, r = pad_amounts(w, layer.kernel[1], layer.stride, layer.padding)
    if t == b == l == r == 0:
        return x
    return np.pad(x, ((0, 0), (t, b), (l, r), (0, 0)), constant_values=fill)


def _windows(x, layer):
    """Strided view of shape (n, oh, ow, c, kh, kw)."""
    win = np.lib.stride_tricks.sliding_window_view(x, layer.kernel, axis=(1, 2))
    return win[:, :: layer.stride, :: layer.stride]


def linear(layer: LayerSpec, x: np.ndarray, with_bias: bool = True) -> np.ndarray:
    """Apply a conv/dense layer's affine map to a batched input."""
    if layer.kind == "dense":
        y = x.reshape(x.shape[0], -1) @ layer.weights.T.astype(x.dtype)
    else:
        win = _windows(_pad(x, layer, 0), layer)
        y = np.tensordot(win, layer.weights.astype(x.dtype), axes=([3, 4, 5], [1, 2, 3]))
    if with_bias:
        y = y + layer.bias.astype(x.dtype)
    return y


def maxpool(layer: LayerSpec, x: np.ndarray) -> np.ndarray:
    win = _windows(_pad(x, layer, -np.inf), layer)
    return win.max(axis=(4, 5))


def _batchnorm(layer, y):
    bn = layer.batchnorm
    inv = 1 / np.sqrt(bn.var + DTYPE(bn.eps))
    return (y - bn.mean) * inv * bn.gamma + bn.beta


def as_batch(net: NetworkSpec, x, dtype=DTYPE) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=dtype)
    single = x.shape == net.input_shape
    if single:
        x = x[None]
    if x.shape[1:] != net.input_shape:
        raise ModelError(f"input shape {x.shape} does not match network input {net.input_shape}")
    return x, single


def forward(net: NetworkSpec, x) -> list[np.ndarray]:
    """Return the output of every layer (post-activation; the last entry is the
    linear network output). Accepts one input ``(h, w, c)`` or a batch."""
    x, single = as_batch(net, x)
    outs = []
    for layer in net.layers:
        if layer.kind == "maxpool2d":
            x = maxpool(layer, x)
        else:
            x = linear(layer, x)
            if layer.batchnorm is not None:
                x = _batchnorm(layer, x)
            if layer.activation == "leaky_relu":
                x = leaky_relu(x, net.alpha)
        x = x.astype(DTYPE, copy=False)
        outs.append(x[0] if single else x)
    return outs


def fold_batchnorm(net: NetworkSpec) -> NetworkSpec:
    layers = []
    for layer in net.layers:
        bn = layer.batchnorm
        if bn is None:
            layers.append(layer)
            continue
        s = bn.scale()
        w = layer.weights * s.reshape((-1,) + (1,) * (layer.weights.ndim - 1))
        b = (layer.bias - bn.mean) * s + bn.beta
        layers.append(replace(layer, weights=w, bias=b, batchnorm=None))
    return replace(net, layers=tuple(layers))


def with_weights(net: NetworkSpec, params: Sequence[tuple[np.ndarray, np.ndarray] | None]) -> NetworkSpec:
    """Copy of ``net`` with (weights, bias) replaced per layer (None keeps a layer)."""
    layers = [
        layer if p is None else replace(layer, weights=p[0], bias=p[1])
        for layer, p in zip(net.layers, params)
    ]
    return replace(net, layers=tuple(layers))


# ---------------------------------------------------------------------------
# Model files: JSON manifest + little-endian float32 blob
# ---------------------------------------------------------------------------


def _blob_path(manifest_path: Path, manifest: dict) -> Path:
    name = manifest.get("weights_file", manifest_path.with_suffix(".bin").name)
    return manifest_path.parent / name


def load_model(path) -> NetworkSpec:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
        input_shape = tuple(int(v) for v in manifest["input_shape"])
        alpha = float(manifest.get("alpha", 0.01))
        entries = list(manifest["layers"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ModelError(f"malformed manifest {path}: {exc}") from None

    blob_file = _blob_path(path, manifest)
    try:
        blob = np.fromfile(blob_file, dtype="<f4")
    except OSError as exc:
        raise ModelError(f"cannot read weight blob {blob_file}: {exc}") from None

    layers, shape, pos = [], input_shape, 0

    def take(n, i):
        nonlocal pos
        if pos + n > blob.size:
            raise ModelError(f"weight blob length mismatch at layer {i}")
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    for i, e in enumerate(entries):
        try:
            kind = e["kind"]
            kernel = e.get("kernel", 1)
            kernel = (kernel, kernel) if np.isscalar(kernel) else tuple(kernel)
            common = dict(
                kind=kind,
                stride=int(e.get("stride", 1)),
                padding=e.get("padding", "valid"),
                kernel=kernel,
                activation=e.get("activation", "none" if kind == "maxpool2d" else "leaky_relu"),
            )
            if kind == "maxpool2d":
                layer = LayerSpec(**common)
            else:
                out_ch = int(e["out_ch"])
                n_in = shape[-1] if kind == "conv2d" else int(np.prod(shape))
                if "in_ch" in e and int(e["in_ch"]) != n_in:
                    raise ModelError(
                        f"layer {i}: shape-compatibility error, in_ch={e['in_ch']} "
                        f"but previous layer provides {n_in}"
                    )
                wshape = (out_ch, n_in, *kernel) if kind == "conv2d" else (out_ch, n_in)
                w = take(int(np.prod(wshape)), i).reshape(wshape)
                b = take(out_ch, i)
                bn = None
                if e.get("has_batchnorm", False):
                    g, be, mu, var = (take(out_ch, i) for _ in range(4))
                    bn = BatchNorm(g, be, mu, var, eps=float(e.get("bn_eps", 1e-5)))
                layer = LayerSpec(weights=w, bias=b, batchnorm=bn, **common)
            shape = output_shape(layer, shape)
        except ModelError as exc:
            msg = str(exc)
            raise ModelError(msg if msg.startswith(("layer", "weight blob")) else f"layer {i}: {msg}") from None
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelError(f"malformed manifest entry at layer {i}: {exc}") from None
        layers.append(layer)

    if pos != blob.size:
        raise ModelError(
            f"weight blob length mismatch at layer {len(entries) - 1}: {blob.size - pos} trailing floats"
        )
    return NetworkSpec(tuple(layers), input_shape, alpha)


def save_model(net: NetworkSpec, path) -> None:
    path = Path(path)
    entries, chunks = [], []
    for layer in net.layers:
        e = {
            "kind": layer.kind,
            "kernel": list(layer.kernel),
            "stride": layer.stride,
            "padding": layer.padding,
            "activation": layer.activation,
        }
        if layer.has_weights:
            e.update(out_ch=layer.out_ch, in_ch=layer.in_ch, has_batchnorm=layer.batchnorm is not None)
            chunks += [layer.weights.ravel(), layer.bias]
            if layer.batchnorm is not None:
                bn = layer.batchnorm
                e["bn_eps"] = bn.eps
                chunks += [bn.gamma, bn.beta, bn.mean, bn.var]
        entries.append(e)
    manifest = {
        "input_shape": list(net.input_shape),
        "alpha": net.alpha,
        "weights_file": path.with_suffix(".bin").name,
        "layers": entries,
    }
    path.write_text(json.dumps(manifest, indent=2))
    blob = np.concatenate(chunks).astype("<f4") if chunks else np.zeros(0, "<f4")
    blob.tofile(path.with_suffix(".bin"))


def save_activations(path, activations: Sequence[np.ndarray]) -> None:
    """Write per-layer activations as a float32 blob plus a JSON index."""
    path = Path(path)
    index, offset = [], 0
    for i, a in enumerate(activations):
        index.append({"layer": i, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        offset += a.size
    blob = np.concatenate([np.ravel(a) for a in activations]).astype("<f4")
    blob.tofile(path.with_suffix(".f32"))
    path.with_suffix(".json").write_text(
        json.dumps({"blob": path.with_suffix(".f32").name, "layers": index}, indent=2)
    )


def load_activations(path) -> list[np.ndarray]:
    path = Path(path)
    index = json.loads(path.with_suffix(".json").read_text())
    blob = np.fromfile(path.parent / index["blob"], dtype="<f4")
    return [blob[e["offset"] : e["offset"] + e["count"]].reshape(e["shape"]) for e in index["layers"]]
