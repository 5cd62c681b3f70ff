"""Firing-rate statistics, raster extraction, channel activation profiles and
error-vs-time-step convergence curves."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .calibrate import ActivationStats, NormalizedNetwork, denormalize_output
from .decode import decode
from .netspec import NetworkSpec, forward
from .spikesim import SimulationState, convert, run

LOW_RATE = 0.035


def firing_rates(state: SimulationState, layer: int, T: int | None = None) -> np.ndarray:
    """Activity rate ``(pos + neg) / T`` per neuron (sign-agnostic)."""
    T = state.t if T is None else T
    if T < 1:
        raise ValueError("T must be at least 1")
    r = (state.spike_count_pos[layer].astype(np.float64) + state.spike_count_neg[layer]) / T
    return r[0] if state.single else r


def signed_rates(state: SimulationState, layer: int, T: int | None = None) -> np.ndarray:
    T = state.t if T is None else T
    if T < 1:
        raise ValueError("T must be at least 1")
    r = state.signed_count(layer).astype(np.float64) / T
    return r[0] if state.single else r


def rate_histogram(rates, bin_width: float = 0.005) -> tuple[np.ndarray, np.ndarray]:
    """Counts of neurons per rate bin on [0, 1]; a rate of exactly 1 falls in
    the last bin."""
    n_bins = int(round(1.0 / bin_width))
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    counts, _ = np.histogram(np.ravel(rates), bins=edges)
    return edges, counts


def fraction_below(rates, threshold: float = LOW_RATE) -> float:
    rates = np.ravel(rates)
    return float(np.count_nonzero(rates < threshold)) / rates.size


def channel_rate_summary(rates: np.ndarray) -> dict[str, np.ndarray]:
    """Mean/min/max rate per channel (channels on the last axis)."""
    flat = rates.reshape(-1, rates.shape[-1])
    return {"mean": flat.mean(axis=0), "min": flat.min(axis=0), "max": flat.max(axis=0)}


def raster(state: SimulationState, layer: int, channel: int, n_neurons: int = 20) -> list[tuple[int, int, int]]:
    """Spike events ``(t, neuron, sign)`` of the first ``n_neurons`` neurons of a
    channel. Needs a single-input run recorded on ``layer``."""
    if state.trace is None:
        raise ValueError("raster needs a run with trace recording")
    n_ch = state.spike_count_pos[layer].shape[-1]
    n_pos = state.spike_count_pos[layer][0].size // n_ch
    chosen = {p * n_ch + channel: k for k, p in enumerate(range(min(n_neurons, n_pos)))}
    return [(t, chosen[idx], sign) for t, lay, idx, sign in state.trace if lay == layer and idx in chosen]


def channel_activation_profile(stats: ActivationStats, scheme: str) -> list[dict[str, object]]:
    """Per layer: each channel's maximum activation after normalization, with
    the layer mean and minimum."""
    out = []
    for lam_l, lam_c in zip(stats.lambda_layer, stats.lambda_chan):
        if scheme in ("channel", "channel_norm"):
            ratios = np.ones_like(lam_c)
        elif scheme in ("layer", "layer_norm"):
            ratios = lam_c / lam_l
        else:
            raise ValueError(f"unknown normalization scheme {scheme!r}")
        out.append({"normalized": ratios, "mean": float(ratios.mean()), "min": float(ratios.min())})
    return out


def time_to_target(T_list: Sequence[int], errors: Sequence[float], target: float) -> int | None:
    """First T from which the error stays at or below ``target`` for the rest
    of the series, or None if the last point is still above it."""
    above = np.flatnonzero(np.asarray(errors) > target)
    if above.size == 0:
        return int(T_list[0])
    if above[-1] == len(T_list) - 1:
        return None
    return int(T_list[above[-1] + 1])


@dataclass
class ConvergenceReport:
    T_list: list[int]
    target: float
    series: dict[str, list[float]] = field(default_factory=dict)
    reach: dict[str, int | None] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"T_list": self.T_list, "target": self.target, "metric": "mean absolute error",
                "series": self.series, "reach": self.reach}


def scheme_errors(
    net: NetworkSpec,
    normnet: NormalizedNetwork,
    inputs,
    T_list: Sequence[int],
    decode_scheme: str = "v_mem",
    v_th: float = 1.0,
    signed: bool = True,
    output_mode: str = "fire",
) -> list[float]:
    """Mean absolute error of the decoded, denormalized output against the
    original network for each T in ``T_list`` (one simulation to max(T))."""
    T_list = sorted(int(t) for t in T_list)
    reference = forward(net, inputs)[-1].astype(np.float64)
    snn = convert(normnet, v_th=v_th, signed=signed, output_mode=output_mode)
    state = run(snn, inputs, T_list[-1], checkpoints=T_list)
    return [float(np.mean(np.abs(decode(state, snn, decode_scheme, T).values - reference))) for T in T_list]


def convergence_curve(
    net: NetworkSpec,
    normnet_a: NormalizedNetwork,
    normnet_b: NormalizedNetwork,
    inputs,
    T_list: Sequence[int],
    target: float = 0.02,
    **sim_options,
) -> ConvergenceReport:
    T_list = sorted(int(t) for t in T_list)
    report = ConvergenceReport(T_list, target)
    labels = [normnet_a.scheme or "a", normnet_b.scheme or "b"]
    if labels[0] == labels[1]:
        labels = [labels[0] + "_a", labels[1] + "_b"]
    for label, nn in zip(labels, (normnet_a, normnet_b)):
        errs = scheme_errors(net, nn, inputs, T_list, **sim_options)
        report.series[label] = errs
        report.reach[label] = time_to_target(T_list, errs, target)
    return report


@dataclass
class FiringReport:
    T: int
    layers: list[dict] = field(default_factory=list)
    histogram: dict = field(default_factory=dict)
    raster: list[tuple[int, int, int]] = field(default_factory=list)
    convergence: dict | None = None

    def to_json(self) -> str:
        return json.dumps({"T": self.T, "layers": self.layers, "histogram": self.histogram,
                           "raster": [list(r) for r in self.raster], "convergence": self.convergence}, indent=2)

    def write_histogram_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["layer", "rate_lo", "rate_hi", "count"])
            for layer, h in self.histogram.items():
                edges, counts = h["edges"], h["counts"]
                for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                    w.writerow([layer, f"{lo:.6g}", f"{hi:.6g}", c])

    def write_raster_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "neuron", "sign"])
            w.writerows(self.raster)


def firing_report(
    state: SimulationState,
    bin_width: float = 0.005,
    raster_layer: int | None = None,
    raster_channel: int = 0,
    raster_neurons: int = 20,
) -> FiringReport:
    report = FiringReport(state.t)
    for i in range(len(state.spike_count_pos)):
        rates = firing_rates(state, i)
        summary = channel_rate_summary(rates)
        report.layers.append({
            "layer": i,
            "neurons": int(rates.size),
            "fraction_below_3.5pct": fraction_below(rates),
            "channel_mean": summary["mean"].tolist(),
            "channel_min": summary["min"].tolist(),
            "channel_max": summary["max"].tolist(),
        })
        edges, counts = rate_histogram(rates, bin_width)
        report.histogram[str(i)] = {"edges": edges.tolist(), "counts": counts.tolist()}
    if raster_layer is not None and state.trace is not None:
        report.raster = raster(state, raster_layer, raster_channel, raster_neurons)
    return report
