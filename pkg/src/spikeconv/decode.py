"""Output decoding: spike-count and membrane-potential based."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .spikesim import SimulationState, SpikingNetwork

SCHEMES = ("spike_count", "v_mem")


@dataclass(frozen=True)
class DecodedOutput:
    values: np.ndarray
    scheme: str
    T: int

    def to_json(self) -> str:
        return json.dumps(
            {"scheme": self.scheme, "T": self.T, "shape": list(self.values.shape),
             "values": np.asarray(self.values, dtype=np.float64).ravel().tolist()},
            indent=2,
        )

    def save(self, path) -> None:
        """Write ``<path>.json`` and the raw little-endian float32 ``<path>.f32``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.with_suffix(".json").write_text(self.to_json())
        np.asarray(self.values, dtype="<f4").tofile(path.with_suffix(".f32"))


def _output_state(state: SimulationState, T: int | None):
    T = state.t if T is None else int(T)
    if T < 1:
        raise ValueError("T must be at least 1")
    if T == state.t:
        arrays = state.spike_count_pos[-1], state.spike_count_neg[-1], state.v_mem[-1]
    elif T in state.snapshots:
        arrays = state.snapshots[T]
    else:
        raise ValueError(f"no output snapshot at T={T} (simulated {state.t} ticks)")
    if state.single:
        arrays = tuple(a[0] for a in arrays)
    return T, arrays


def _finish(values, output_scale):
    return values if output_scale is None else values * output_scale


def decode_spike_count(state: SimulationState, T: int | None = None, v_th: float = 1.0, output_scale=None) -> DecodedOutput:
    """``(pos - neg) * v_th / T``; the residual potential is discarded."""
    T, (pos, neg, _) = _output_state(state, T)
    values = (pos.astype(np.float64) - neg) * v_th / T
    return DecodedOutput(_finish(values, output_scale), "spike_count", T)


def decode_vmem(state: SimulationState, T: int | None = None, v_th: float = 1.0, output_scale=None) -> DecodedOutput:
    """``((pos - neg) * v_th + v_mem) / T``: total integrated input per tick."""
    T, (pos, neg, v) = _output_state(state, T)
    values = ((pos.astype(np.float64) - neg) * v_th + v) / T
    return DecodedOutput(_finish(values, output_scale), "v_mem", T)


def decode(state: SimulationState, snn: SpikingNetwork, scheme: str = "v_mem", T: int | None = None) -> DecodedOutput:
    """Decode with the network's threshold and map back to the original
    output scale."""
    fn = {"spike_count": decode_spike_count, "v_mem": decode_vmem}.get(scheme)
    if fn is None:
        raise ValueError(f"unknown decoding scheme {scheme!r}")
    return fn(state, T, snn.neuron.v_th_pos, snn.output_scale)
