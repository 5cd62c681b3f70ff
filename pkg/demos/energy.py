"""Energy estimates.

First the platform arithmetic behind the GPU vs neuromorphic comparison, then
per-operation energy for a small converted network (MACs for the DNN forward
pass, accumulations actually triggered by spikes for the SNN).

A network this small gives no advantage over 200 time steps: every neuron
fires many times per image, so the accumulations outnumber the MACs, and only
the much cheaper INT32 accumulate comes out ahead.
"""

import numpy as np

from spikeconv import synthetic
from spikeconv.calibrate import channel_norm, collect_stats
from spikeconv.energy import count_dnn_ops, count_snn_ops, op_energy, platform_energy
from spikeconv.spikesim import convert, run

gpu_flops = 6.97e9
for label, op_rate, steps in (("layer-norm", 5.28e7, 8000), ("channel-norm", 4.90e7, 3500)):
    pe = platform_energy(gpu_flops, op_rate, steps)
    print(f"{label:12s} GPU {pe.gpu_joules:.3g} J, chip {pe.neuro_power:.4g} W x {steps} ms = "
          f"{pe.neuro_joules:.3g} J, ratio {pe.ratio:.0f}x")

rng = np.random.default_rng(1)
net = synthetic.skewed_network(rng)
x = synthetic.random_inputs(rng, net, 4)
snn = convert(channel_norm(net, collect_stats(net, x, mode="max")))
state = run(snn, x, 200)

macs = count_dnn_ops(net)
acs = count_snn_ops(net, state)["total"] / state.batch_size
print(f"\nper image: {macs} MACs vs {acs:.0f} ACs over {state.t} steps")
for precision in ("fl32", "int32"):
    e = op_energy(macs, acs, precision=precision)
    print(f"{precision}: DNN {e.dnn_joules:.3g} J, SNN {e.snn_joules:.3g} J, ratio {e.ratio:.2f}")
