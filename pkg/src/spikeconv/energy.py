"""Operation counting and energy estimates.

Two models: per-operation energy (MAC for the DNN, AC for the SNN) and
platform-level energy (GPU power times runtime against a neuromorphic chip's
GFLOPS/W efficiency over the simulated time steps).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .netspec import LayerSpec, NetworkSpec, pad_amounts
from .spikesim import SimulationState


@dataclass(frozen=True)
class EnergyModel:
    """Per-operation energies in joules."""

    mac_fl32: float = 4.6e-12
    ac_fl32: float = 0.9e-12
    mac_int32: float = 3.2e-12
    ac_int32: float = 0.1e-12

    def __post_init__(self):
        vals = (self.mac_fl32, self.ac_fl32, self.mac_int32, self.ac_int32)
        if min(vals) <= 0:
            raise ValueError("per-op energies must be positive")
        if self.mac_fl32 <= self.ac_fl32 or self.mac_int32 <= self.ac_int32:
            raise ValueError("a MAC must cost more than an AC")

    def costs(self, precision: str) -> tuple[float, float]:
        if precision == "fl32":
            return self.mac_fl32, self.ac_fl32
        if precision == "int32":
            return self.mac_int32, self.ac_int32
        raise ValueError(f"unknown precision {precision!r}")


@dataclass(frozen=True)
class PlatformModel:
    gpu_power: float = 250.0  # W
    gpu_throughput: float = 14_000.0  # GFLOPS
    neuro_efficiency: float = 400.0  # GFLOPS/W
    timestep_duration: float = 1e-3  # s

    def __post_init__(self):
        if min(asdict(self).values()) <= 0:
            raise ValueError("platform parameters must be positive")


# ---------------------------------------------------------------------------
# Operation counts
# ---------------------------------------------------------------------------


def count_dnn_ops(net: NetworkSpec) -> int:
    """MACs of one forward pass (padded positions included); bias adds are
    counted by :func:`count_dnn_bias_adds`."""
    macs = 0
    for i, layer in enumerate(net.layers):
        if layer.kind == "conv2d":
            oh, ow, oc = net.shapes[i]
            kh, kw = layer.kernel
            macs += oh * ow * oc * layer.in_ch * kh * kw
        elif layer.kind == "dense":
            macs += layer.weights.shape[0] * layer.weights.shape[1]
    return macs


def count_dnn_bias_adds(net: NetworkSpec) -> int:
    return sum(int(np.prod(net.shapes[i])) for i, layer in enumerate(net.layers) if layer.has_weights)


def _axis_cover(size: int, k: int, stride: int, padding: str) -> np.ndarray:
    out, before, _ = pad_amounts(size, k, stride, padding)
    cover = np.zeros(size, dtype=np.int64)
    for x in range(size):
        p = x + before
        # outputs o with o*stride <= p <= o*stride + k - 1
        cover[x] = sum(1 for o in range(out) if o * stride <= p < o * stride + k)
    return cover


def synapse_fanout(layer: LayerSpec, in_shape: tuple[int, ...]) -> np.ndarray:
    """Outgoing synapses per input neuron of ``layer`` (max-pool routing is free)."""
    if layer.kind == "maxpool2d":
        return np.zeros(in_shape, dtype=np.int64)
    if layer.kind == "dense":
        return np.full(in_shape, layer.weights.shape[0], dtype=np.int64)
    h, w, c = in_shape
    rows = _axis_cover(h, layer.kernel[0], layer.stride, layer.padding)
    cols = _axis_cover(w, layer.kernel[1], layer.stride, layer.padding)
    per_pos = np.outer(rows, cols) * layer.out_ch
    return np.broadcast_to(per_pos[:, :, None], (h, w, c))


def count_snn_ops(net: NetworkSpec, state: SimulationState) -> dict[str, int]:
    """Accumulations actually executed, summed over the simulated batch.

    ``synaptic``: every spike (either sign) of a layer's input touches each of
    its outgoing synapses once. ``bias``: per tick, each neuron with nonzero
    bias accumulates it, and every first-layer neuron accumulates its constant
    input current.
    """
    T, n = state.t, state.batch_size
    synaptic = bias = 0
    for i, layer in enumerate(net.layers):
        if not layer.has_weights:
            continue
        if i == 0:
            bias += T * n * int(np.prod(net.shapes[0]))
            continue
        spikes = state.spike_count_pos[i - 1].astype(np.int64) + state.spike_count_neg[i - 1]
        synaptic += int(np.sum(spikes * synapse_fanout(layer, net.in_shape(i))))
        bias += T * n * int(np.prod(net.shapes[i][:-1])) * int(np.count_nonzero(layer.bias))
    return {"synaptic": synaptic, "bias": bias, "total": synaptic + bias}


# ---------------------------------------------------------------------------
# Energy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OpEnergy:
    precision: str
    dnn_joules: float
    snn_joules: float

    @property
    def ratio(self) -> float:
        return self.dnn_joules / self.snn_joules if self.snn_joules else float("inf")


def op_energy(macs: float, acs: float, model: EnergyModel = EnergyModel(), precision: str = "fl32") -> OpEnergy:
    mac, ac = model.costs(precision)
    return OpEnergy(precision, macs * mac, acs * ac)


def gpu_energy(flops: float, platform: PlatformModel = PlatformModel()) -> float:
    """Power times runtime, runtime = flops / throughput."""
    return platform.gpu_power * flops / (platform.gpu_throughput * 1e9)


def neuromorphic_power(op_rate: float, platform: PlatformModel = PlatformModel()) -> float:
    """Operations per second divided by GFLOPS/W efficiency."""
    return op_rate / (platform.neuro_efficiency * 1e9)


def neuromorphic_energy(op_rate: float, timesteps: int, platform: PlatformModel = PlatformModel()) -> float:
    return neuromorphic_power(op_rate, platform) * timesteps * platform.timestep_duration


@dataclass(frozen=True)
class PlatformEnergy:
    gpu_joules: float
    neuro_power: float
    neuro_joules: float

    @property
    def ratio(self) -> float:
        return self.gpu_joules / self.neuro_joules


def platform_energy(dnn_flops: float, snn_op_rate: float, timesteps: int, platform: PlatformModel = PlatformModel()) -> PlatformEnergy:
    if min(dnn_flops, snn_op_rate, timesteps) <= 0:
        raise ValueError("flops, op rate and timesteps must be positive")
    return PlatformEnergy(
        gpu_energy(dnn_flops, platform),
        neuromorphic_power(snn_op_rate, platform),
        neuromorphic_energy(snn_op_rate, timesteps, platform),
    )


FORMULAS = {
    "dnn_op_energy": "dnn_J = MACs * mac_cost",
    "snn_op_energy": "snn_J = ACs * ac_cost",
    "dnn_flops": "FLOPs = 2 * MACs",
    "gpu_energy": "E = gpu_power * FLOPs / (GFLOPS * 1e9)",
    "neuromorphic_power": "P = op_rate / (GFLOPS_per_W * 1e9), op_rate read as operations per second",
    "neuromorphic_energy": "E = P * timesteps * timestep_duration",
}


def energy_report(
    net: NetworkSpec,
    state: SimulationState | None = None,
    model: EnergyModel = EnergyModel(),
    platform: PlatformModel = PlatformModel(),
) -> dict:
    """Per-image operation counts, per-op energies for both precisions and the
    platform comparison (SNN op rate = ACs per image / (T * timestep))."""
    macs = count_dnn_ops(net)
    report = {
        "inputs": {"energy_model": asdict(model), "platform": asdict(platform)},
        "formulas": FORMULAS,
        "dnn_mac_count": macs,
        "dnn_bias_adds": count_dnn_bias_adds(net),
    }
    if state is not None:
        acs = count_snn_ops(net, state)
        per_image = {k: v / state.batch_size for k, v in acs.items()}
        report["timesteps"] = state.t
        report["snn_ac_count"] = per_image
        report["op_energy"] = {
            p: {"dnn_joules": e.dnn_joules, "snn_joules": e.snn_joules, "ratio": e.ratio}
            for p in ("fl32", "int32")
            for e in [op_energy(macs, per_image["total"], model, p)]
        }
        op_rate = per_image["total"] / (state.t * platform.timestep_duration)
        if op_rate > 0:
            pe = platform_energy(2 * macs, op_rate, state.t, platform)
            report["platform_energy"] = {
                "dnn_flops": 2 * macs, "snn_op_rate": op_rate,
                "gpu_joules": pe.gpu_joules, "neuro_power": pe.neuro_power,
                "neuro_joules": pe.neuro_joules, "ratio": pe.ratio,
            }
    return report


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
