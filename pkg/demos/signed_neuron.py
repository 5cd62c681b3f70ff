"""Signed neuron with an imbalanced threshold.

A plain integrate-and-fire neuron only transmits positive values, so a
leaky-ReLU layer loses its negative side after conversion. Here one neuron is
driven by constant currents of both signs; the negative threshold sits at
-v_th / alpha, so negative inputs come out at alpha times the rate.
"""

import numpy as np

from spikeconv.spikesim import NeuronConfig, step_neuron

ALPHA = 0.1
T = 1000

signed = NeuronConfig(v_th_pos=1.0, alpha=ALPHA, signed=True)
plain = NeuronConfig(v_th_pos=1.0, alpha=ALPHA, signed=False)

print(f"negative threshold: {signed.v_th_neg:g} V")
print(f"{'z':>6} {'leaky(z)':>9} {'signed rate':>12} {'plain IF rate':>14}")
for z in (-1.0, -0.5, -0.05, 0.05, 0.5, 1.0):
    rates = []
    for cfg in (signed, plain):
        v = np.zeros(1)
        rates.append(sum(step_neuron(v, z, cfg).item() for _ in range(T)) / T)
    target = z if z > 0 else ALPHA * z
    print(f"{z:6.2f} {target:9.3f} {rates[0]:12.3f} {rates[1]:14.3f}")

# a constant -1 V input needs ten ticks to reach -10 V
v = np.zeros(1)
trace = [step_neuron(v, -1.0, signed).item() for _ in range(12)]
print("first 12 ticks at z=-1:", trace)
