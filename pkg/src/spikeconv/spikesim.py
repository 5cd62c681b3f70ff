"""Clock-driven simulator for converted networks.

Hidden neurons are integrate-and-fire with reset by subtraction. A signed
neuron also fires -1 spikes once its potential falls to the negative
threshold ``-v_th / alpha``; because that threshold is ``1/alpha`` times
further away, negative inputs are transmitted at ``alpha`` times the rate,
which reproduces the leaky-ReLU slope without any multiplier. Output-layer
neurons are signed and symmetric (slope 1) so they carry the linear head.

Each spike transmits ``v_th_pos``: incoming synaptic weights of spike-driven
layers are premultiplied by it, so normalized activations map to firing rates
``a / v_th_pos`` for any threshold.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .calibrate import NormalizedNetwork
from .netspec import LayerSpec, ModelError, NetworkSpec, as_batch, linear, pad_amounts

# Relative guard on threshold comparisons. Rounding in repeated float addition
# must not delay a spike that fires exactly at threshold in real arithmetic
# (0.7 summed ten times is 6.999...).
FIRE_TOL = 1e-9


@dataclass(frozen=True)
class NeuronConfig:
    v_th_pos: float = 1.0
    alpha: float = 0.01
    signed: bool = True

    def __post_init__(self):
        if not self.v_th_pos > 0:
            raise ValueError("v_th_pos must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    @property
    def v_th_neg(self) -> float:
        return -self.v_th_pos / self.alpha


def step_neuron(v_mem: np.ndarray, z, cfg: NeuronConfig) -> np.ndarray:
    """Integrate ``z`` into ``v_mem`` (in place) and return spikes in {-1, 0, +1}.

    At most one spike per neuron per call; any excess stays in ``v_mem``.
    """
    v_mem += z
    pos = v_mem >= cfg.v_th_pos * (1 - FIRE_TOL)
    spikes = pos.astype(np.int8)
    v_mem[pos] -= cfg.v_th_pos
    if cfg.signed:
        neg = ~pos & (v_mem <= cfg.v_th_neg * (1 - FIRE_TOL))
        spikes[neg] = -1
        v_mem[neg] -= cfg.v_th_neg
    return spikes


def synaptic_input(layer: LayerSpec, incoming_spikes: np.ndarray) -> np.ndarray:
    """Weighted sum of signed spikes plus bias (batched NHWC / NC)."""
    return linear(layer, np.asarray(incoming_spikes, dtype=np.float64))


def encode_input(image) -> np.ndarray:
    """Constant analog input current: the pixel values themselves, every tick."""
    image = np.asarray(image, dtype=np.float64)
    if image.size and (image.min() < 0 or image.max() > 1):
        raise ValueError("input values must lie in [0, 1]")
    return image


def _pool_windows(layer: LayerSpec, x: np.ndarray, fill) -> np.ndarray:
    """(n, oh, ow, c, kh*kw) view of pooling windows, row-major in the window."""
    h, w = x.shape[1:3]
    _, t, b = pad_amounts(h, layer.kernel[0], layer.stride, layer.padding)
    _, l, r = pad_amounts(w, layer.kernel[1], layer.stride, layer.padding)
    if t or b or l or r:
        x = np.pad(x, ((0, 0), (t, b), (l, r), (0, 0)), constant_values=fill)
    win = np.lib.stride_tricks.sliding_window_view(x, layer.kernel, axis=(1, 2))
    win = win[:, :: layer.stride, :: layer.stride]
    return win.reshape(*win.shape[:4], -1)


def spike_maxpool(layer: LayerSpec, spikes: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Forward, per window, the spike of the input with the largest cumulative
    signed spike count (ties go to the lowest window index)."""
    c = _pool_windows(layer, counts.astype(np.float64), -np.inf)
    s = _pool_windows(layer, spikes, 0)
    winner = np.argmax(c, axis=-1)[..., None]
    return np.take_along_axis(s, winner, axis=-1)[..., 0]


def input_fanout(layer: LayerSpec, in_shape: tuple[int, ...]) -> np.ndarray:
    """Number of synapses each input neuron of ``layer`` drives."""
    if layer.kind == "dense":
        return np.full(in_shape, layer.out_ch, dtype=np.int64)
    if layer.kind == "maxpool2d":
        return np.zeros(in_shape, dtype=np.int64)
    h, w, c = in_shape
    oh, t, _ = pad_amounts(h, layer.kernel[0], layer.stride, layer.padding)
    ow, l, _ = pad_amounts(w, layer.kernel[1], layer.stride, layer.padding)
    kh, kw = layer.kernel
    s = layer.stride
    hits = np.zeros((t + h + kh + s * oh, l + w + kw + s * ow), dtype=np.int64)
    for di in range(kh):
        for dj in range(kw):
            hits[di : di + s * oh : s, dj : dj + s * ow : s] += 1
    hits = hits[t : t + h, l : l + w]
    return np.repeat(hits[:, :, None] * layer.out_ch, c, axis=2)


@dataclass(frozen=True)
class SpikingNetwork:
    net: NetworkSpec
    neuron: NeuronConfig
    output_scale: np.ndarray
    output_mode: str = "fire"
    input_scale: float = 1.0
    scheme: str = ""
    layers: tuple[LayerSpec, ...] = field(init=False, repr=False)
    fanout: tuple[np.ndarray, ...] = field(init=False, repr=False)

    def __post_init__(self):
        if self.output_mode not in ("fire", "accumulate"):
            raise ValueError(f"unknown output mode {self.output_mode!r}")
        if not self.net.layers[0].has_weights:
            raise ModelError("first layer must be conv2d or dense")
        v = self.neuron.v_th_pos
        layers = []
        for i, layer in enumerate(self.net.layers):
            if i > 0 and layer.has_weights and v != 1.0:
                layer = replace(layer, weights=layer.weights * np.float32(v))
            layers.append(layer)
        object.__setattr__(self, "layers", tuple(layers))
        fan = [input_fanout(layer, self.net.in_shape(i)) for i, layer in enumerate(layers)]
        object.__setattr__(self, "fanout", tuple(fan))

    @property
    def output_neuron(self) -> NeuronConfig:
        return NeuronConfig(self.neuron.v_th_pos, 1.0, True)

    def layer_neuron(self, index: int) -> NeuronConfig:
        return self.output_neuron if index == len(self.layers) - 1 else self.neuron


def convert(
    normnet: NormalizedNetwork,
    v_th: float = 1.0,
    signed: bool = True,
    output_mode: str = "fire",
    alpha: float | None = None,
) -> SpikingNetwork:
    """Build a spiking network from a normalized one. ``alpha`` defaults to the
    network's leaky slope (the imbalanced negative threshold is -v_th/alpha)."""
    cfg = NeuronConfig(v_th, normnet.net.alpha if alpha is None else alpha, signed)
    return SpikingNetwork(
        normnet.net, cfg, np.asarray(normnet.output_scale, dtype=np.float64),
        output_mode, normnet.input_scale, normnet.scheme,
    )


@dataclass
class SimulationState:
    """Per-layer state after ``t`` ticks. Arrays are batched like the input."""

    t: int
    v_mem: list[np.ndarray]
    spike_count_pos: list[np.ndarray]
    spike_count_neg: list[np.ndarray]
    trace: list[tuple[int, int, int, int]] | None = None
    synaptic_ops: int = 0
    bias_ops: int = 0
    batch_size: int = 1
    single: bool = True
    snapshots: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=dict)

    def signed_count(self, layer: int) -> np.ndarray:
        return self.spike_count_pos[layer].astype(np.int64) - self.spike_count_neg[layer]

    def export_trace(self, path) -> None:
        if self.trace is None:
            raise ValueError("simulation was run without trace recording")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "layer", "neuron_flat_index", "sign"])
            writer.writerows(self.trace)


def run(
    snn: SpikingNetwork,
    image,
    T: int,
    record: bool | Iterable[int] = False,
    checkpoints: Iterable[int] = (),
) -> SimulationState:
    """Simulate ``T`` ticks. Layer ``l`` consumes layer ``l-1``'s spikes from the
    same tick. ``record`` selects layers whose spike events go to the trace
    (single image only); ``checkpoints`` lists ticks at which the output
    layer's counts and potential are snapshotted."""
    if T < 1:
        raise ValueError("T must be at least 1")
    # inputs stay float64: a float32 0.7 would integrate to 6.99999992 in 10 ticks
    x, single = as_batch(snn.net, image, np.float64)
    n = x.shape[0]
    if record is True:
        recorded = set(range(len(snn.layers)))
    elif record is False:
        recorded = set()
    else:
        recorded = set(record)
    if recorded and n != 1:
        raise ValueError("trace recording needs a single input")
    checkpoints = set(int(c) for c in checkpoints)

    z_in = synaptic_input(snn.layers[0], encode_input(x) / snn.input_scale)
    shapes = [(n, *s) for s in snn.net.shapes]
    v_mem = [np.zeros(s) for s in shapes]
    pos = [np.zeros(s, dtype=np.int32) for s in shapes]
    neg = [np.zeros(s, dtype=np.int32) for s in shapes]
    state = SimulationState(0, v_mem, pos, neg, [] if recorded else None, batch_size=n, single=single)

    last = len(snn.layers) - 1
    biased = [
        0 if not layer.has_weights else int(np.prod(snn.net.shapes[i][:-1])) * int(np.count_nonzero(layer.bias))
        for i, layer in enumerate(snn.layers)
    ]
    first_neurons = int(np.prod(snn.net.shapes[0]))

    for t in range(1, T + 1):
        prev = None
        for i, layer in enumerate(snn.layers):
            if layer.kind == "maxpool2d":
                # pool gate sees counts that include this tick's input spikes
                spikes = spike_maxpool(layer, prev, state.signed_count(i - 1))
            else:
                if i == 0:
                    z = z_in
                    state.bias_ops += n * first_neurons
                else:
                    z = synaptic_input(layer, prev)
                    state.synaptic_ops += int(np.sum(np.abs(prev) * snn.fanout[i]))
                    state.bias_ops += n * biased[i]
                if i == last and snn.output_mode == "accumulate":
                    v_mem[i] += z
                    spikes = np.zeros(z.shape, dtype=np.int8)
                else:
                    spikes = step_neuron(v_mem[i], z, snn.layer_neuron(i))
            pos[i] += spikes > 0
            neg[i] += spikes < 0
            if i in recorded:
                flat = spikes[0].ravel()
                for idx in np.flatnonzero(flat):
                    state.trace.append((t, i, int(idx), int(flat[idx])))
            prev = spikes
        state.t = t
        if t in checkpoints:
            state.snapshots[t] = (pos[last].copy(), neg[last].copy(), v_mem[last].copy())
    return state
