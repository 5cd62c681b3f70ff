"""Activation statistics and data-based weight normalization (layer-wise and
channel-wise)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .netspec import DTYPE, NetworkSpec, forward, with_weights

EPS = 1e-6
MODES = ("max", "p99.9")
SCHEMES = ("layer_norm", "channel_norm")


@dataclass(frozen=True)
class ActivationStats:
    mode: str
    sample_count: int
    lambda_layer: np.ndarray
    lambda_chan: tuple[np.ndarray, ...]
    degenerate: tuple[np.ndarray, ...]
    magnitude: bool = True

    def to_json(self) -> str:
        layers = [
            {
                "lambda_layer": float(ll),
                "lambda_chan": [float(v) for v in lc],
                "degenerate_channels": [int(j) for j in np.flatnonzero(dg)],
            }
            for ll, lc, dg in zip(self.lambda_layer, self.lambda_chan, self.degenerate)
        ]
        doc = {
            "mode": self.mode,
            "statistic": "magnitude" if self.magnitude else "positive",
            "sample_count": self.sample_count,
            "layers": layers,
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ActivationStats":
        doc = json.loads(text)
        chans = tuple(np.array(e["lambda_chan"], dtype=np.float64) for e in doc["layers"])
        degenerate = []
        for e, c in zip(doc["layers"], chans):
            d = np.zeros(c.size, dtype=bool)
            d[e.get("degenerate_channels", [])] = True
            degenerate.append(d)
        return cls(
            mode=doc["mode"],
            sample_count=int(doc["sample_count"]),
            lambda_layer=np.array([e["lambda_layer"] for e in doc["layers"]], dtype=np.float64),
            lambda_chan=chans,
            degenerate=tuple(degenerate),
            magnitude=doc.get("statistic", "magnitude") == "magnitude",
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "ActivationStats":
        return cls.from_json(Path(path).read_text())


def nearest_rank(values: np.ndarray, q: float) -> float:
    """Nearest-rank ``q``-th percentile (no interpolation)."""
    n = values.size
    # round away representation noise: 99.9 / 100 * 1000 is 999.0000000000001
    rank = max(1, math.ceil(round(q * n / 100.0, 9)))
    return float(np.partition(values, rank - 1)[rank - 1])


def _statistic(values: np.ndarray, mode: str) -> float:
    if values.size == 0:
        return 0.0
    if mode == "max":
        return float(values.max())
    return nearest_rank(values, 99.9)


def _magnitude_layer(net: NetworkSpec, i: int) -> bool:
    # Linear-output layers drive symmetric neurons, so their scale is |a|.
    layer = net.layers[i]
    return layer.has_weights and layer.activation == "none"


def collect_stats(
    net: NetworkSpec,
    calib_inputs: Iterable[np.ndarray],
    mode: str = "p99.9",
    batch_size: int = 64,
    magnitude: bool = True,
) -> ActivationStats:
    """Per-layer and per-channel activation scale over a calibration set.

    ``mode`` is ``"max"`` or ``"p99.9"`` (nearest rank, pooled over all
    inputs). With ``magnitude`` the statistic is taken over ``|a|``: a signed
    neuron's negative firing rate is ``|a| / lambda`` too, so this is what
    keeps both directions unsaturated. Without it only positive activations
    are measured (the linear output layer always uses ``|a|``); a channel
    with no positive activation then gets the ``EPS`` floor and its negative
    side saturates after normalization.

    Scales at or below ``EPS`` are floored to ``EPS`` and flagged as
    degenerate.
    """
    if mode not in MODES:
        raise ValueError(f"unknown percentile mode {mode!r}")
    x = np.asarray(list(calib_inputs) if not isinstance(calib_inputs, np.ndarray) else calib_inputs, dtype=DTYPE)
    if x.ndim == 3:
        x = x[None]
    if x.shape[0] == 0:
        raise ValueError("empty calibration set")

    n_layers = len(net.layers)
    # per layer, per channel: nonzero samples (max mode keeps per-batch maxima only)
    pools: list[list[list[np.ndarray]]] = [[[] for _ in range(net.channels(i))] for i in range(n_layers)]
    for start in range(0, x.shape[0], batch_size):
        acts = forward(net, x[start : start + batch_size])
        for i, a in enumerate(acts):
            a = np.abs(a) if magnitude or _magnitude_layer(net, i) else a
            a = a.reshape(-1, a.shape[-1])
            for j in range(a.shape[1]):
                col = a[:, j]
                col = col[col > 0]
                if mode == "max":
                    col = col.max(keepdims=True) if col.size else col
                pools[i][j].append(col)

    lam_layer, lam_chan, degenerate = [], [], []
    for i in range(n_layers):
        per_chan = [np.concatenate(p) for p in pools[i]]
        chan = np.array([_statistic(c, mode) for c in per_chan], dtype=np.float64)
        layer_val = _statistic(np.concatenate(per_chan), mode)
        deg = chan <= EPS
        lam_chan.append(np.where(deg, EPS, chan))
        degenerate.append(deg)
        lam_layer.append(max(layer_val, EPS))
    return ActivationStats(
        mode, int(x.shape[0]), np.array(lam_layer), tuple(lam_chan), tuple(degenerate), magnitude
    )


@dataclass(frozen=True)
class NormalizedNetwork:
    net: NetworkSpec
    scheme: str
    stats: ActivationStats
    output_scale: np.ndarray
    input_scale: float = 1.0


def _check(net: NetworkSpec, stats: ActivationStats):
    if len(stats.lambda_chan) != len(net.layers):
        raise ValueError(f"stats describe {len(stats.lambda_chan)} layers, network has {len(net.layers)}")
    for i, lc in enumerate(stats.lambda_chan):
        if lc.size != net.channels(i):
            raise ValueError(f"layer {i}: stats have {lc.size} channels, network has {net.channels(i)}")


def output_scales(net: NetworkSpec, stats: ActivationStats, per_channel: bool, input_scale: float = 1.0):
    """Per-channel scale carried by each layer's normalized output. Max-pool
    layers pass their input's scale through unchanged."""
    scales, prev = [], np.full(net.input_shape[-1], float(input_scale))
    for i, layer in enumerate(net.layers):
        if layer.has_weights:
            lam = stats.lambda_chan[i] if per_channel else np.full(layer.out_ch, stats.lambda_layer[i])
            prev = np.asarray(lam, dtype=np.float64)
        scales.append(prev)
    return scales


def _rescale(net: NetworkSpec, stats: ActivationStats, per_channel: bool, input_scale: float):
    _check(net, stats)
    scales = output_scales(net, stats, per_channel, input_scale)
    params = []
    for i, layer in enumerate(net.layers):
        if not layer.has_weights:
            params.append(None)
            continue
        prev = scales[i - 1] if i > 0 else np.full(net.input_shape[-1], float(input_scale))
        cur = scales[i]
        w = layer.weights.astype(np.float64)
        if layer.kind == "conv2d":
            w = w * prev[None, :, None, None] / cur[:, None, None, None]
        else:
            if w.shape[1] != prev.size:
                # HWC flatten: feature f belongs to channel f % C
                prev = np.tile(prev, w.shape[1] // prev.size)
            w = w * prev[None, :] / cur[:, None]
        b = layer.bias.astype(np.float64) / cur
        params.append((w.astype(DTYPE), b.astype(DTYPE)))
    return with_weights(net, params), scales[-1]


def layer_norm(net: NetworkSpec, stats: ActivationStats, input_scale: float = 1.0) -> NormalizedNetwork:
    normed, out_scale = _rescale(net, stats, False, input_scale)
    return NormalizedNetwork(normed, "layer_norm", stats, out_scale, input_scale)


def channel_norm(net: NetworkSpec, stats: ActivationStats, input_scale: float = 1.0) -> NormalizedNetwork:
    normed, out_scale = _rescale(net, stats, True, input_scale)
    return NormalizedNetwork(normed, "channel_norm", stats, out_scale, input_scale)


def normalize(net: NetworkSpec, stats: ActivationStats, scheme: str, input_scale: float = 1.0) -> NormalizedNetwork:
    if scheme in ("layer", "layer_norm"):
        return layer_norm(net, stats, input_scale)
    if scheme in ("channel", "channel_norm"):
        return channel_norm(net, stats, input_scale)
    raise ValueError(f"unknown normalization scheme {scheme!r}")


def denormalize_output(out, normnet: NormalizedNetwork) -> np.ndarray:
    out = np.asarray(out)
    if out.shape[-1] != normnet.output_scale.size:
        raise ValueError(f"output has {out.shape[-1]} channels, expected {normnet.output_scale.size}")
    return out * normnet.output_scale
