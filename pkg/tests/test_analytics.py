import json

import numpy as np
import pytest

from spikeconv import synthetic
from spikeconv.analytics import (
    ConvergenceReport,
    channel_activation_profile,
    channel_rate_summary,
    convergence_curve,
    firing_rates,
    firing_report,
    fraction_below,
    rate_histogram,
    raster,
    scheme_errors,
    signed_rates,
    time_to_target,
)
from spikeconv.calibrate import ActivationStats, channel_norm, collect_stats, layer_norm
from spikeconv.spikesim import NeuronConfig, SimulationState, SpikingNetwork, convert, run

from .helpers import one_by_one


def counts_state(pos, neg, t):
    pos = np.asarray(pos, dtype=np.int32)[None]
    neg = np.asarray(neg, dtype=np.int32)[None]
    return SimulationState(t, [np.zeros(pos.shape)], [pos], [neg])


def test_rate_examples():
    state = counts_state([[80, 0]], [[0, 0]], 100)
    np.testing.assert_allclose(firing_rates(state, 0), [[0.8, 0.0]])


def test_rates_are_sign_agnostic():
    state = counts_state([[3]], [[5]], 10)
    assert firing_rates(state, 0).item() == pytest.approx(0.8)
    assert signed_rates(state, 0).item() == pytest.approx(-0.2)
    with pytest.raises(ValueError):
        firing_rates(state, 0, T=0)


def test_constant_current_rate():
    net = one_by_one(w=1.0, activation="leaky_relu")
    snn = SpikingNetwork(net, NeuronConfig(1.0, 0.1), np.ones(1))
    state = run(snn, np.full((1, 1, 1), 0.55), 200)
    assert abs(firing_rates(state, 0).item() - 0.55) <= 0.005


def test_histogram_counts_every_neuron():
    rates = np.array([0.0, 0.004, 0.005, 0.5, 0.999, 1.0])
    edges, counts = rate_histogram(rates, 0.005)
    assert counts.size == 200 and edges[0] == 0.0 and edges[-1] == 1.0
    assert counts.sum() == rates.size
    assert counts[0] == 2 and counts[1] == 1 and counts[-1] == 2


def test_fraction_below():
    assert fraction_below([0.0, 0.01, 0.034, 0.035, 0.5]) == pytest.approx(0.6)


def test_channel_summary():
    rates = np.array([[[0.1, 0.5]], [[0.3, 0.7]]])
    s = channel_rate_summary(rates)
    np.testing.assert_allclose(s["mean"], [0.2, 0.6])
    np.testing.assert_allclose(s["min"], [0.1, 0.5])
    np.testing.assert_allclose(s["max"], [0.3, 0.7])


def _stats(lam_layer, lam_chan):
    chans = tuple(np.asarray(c, float) for c in lam_chan)
    return ActivationStats("max", 1, np.asarray(lam_layer, float), chans, tuple(np.zeros(c.size, bool) for c in chans))


def test_activation_profile_examples():
    stats = _stats([0.8], [[0.8, 0.1]])
    layer = channel_activation_profile(stats, "layer_norm")[0]
    np.testing.assert_allclose(layer["normalized"], [1.0, 0.125])
    assert layer["min"] == pytest.approx(0.125)
    assert layer["mean"] == pytest.approx(0.5625)
    chan = channel_activation_profile(stats, "channel_norm")[0]
    np.testing.assert_array_equal(chan["normalized"], [1.0, 1.0])
    with pytest.raises(ValueError):
        channel_activation_profile(stats, "batch_norm")


def test_skewed_profile_min_far_below_mean(rng):
    net = synthetic.skewed_network(rng)
    stats = collect_stats(net, synthetic.random_inputs(rng, net, 20), mode="max")
    first = channel_activation_profile(stats, "layer_norm")[0]
    assert first["min"] < 0.05 * first["mean"]


def test_time_to_target():
    T = [1, 10, 100, 1000]
    assert time_to_target(T, [0.5, 0.1, 0.01, 0.001], 0.02) == 100
    assert time_to_target(T, [0.5, 0.01, 0.03, 0.001], 0.02) == 1000
    assert time_to_target(T, [0.01, 0.01, 0.01, 0.01], 0.02) == 1
    assert time_to_target(T, [0.5, 0.5, 0.5, 0.5], 0.02) is None


def _small_setup(rng, n_inputs=5):
    net = synthetic.random_network(rng, n_layers=3, max_channels=8)
    x = synthetic.random_inputs(rng, net, n_inputs)
    stats = collect_stats(net, x, "max")
    return net, x, stats


def test_identical_networks_identical_curves(rng):
    net, x, stats = _small_setup(rng)
    nn = channel_norm(net, stats)
    rep = convergence_curve(net, nn, nn, x, [1, 10, 100])
    a, b = rep.series.values()
    assert a == b
    assert set(rep.series) == {"channel_norm_a", "channel_norm_b"}


def test_single_tick_error_is_worst(rng):
    net, x, stats = _small_setup(rng)
    rep = convergence_curve(net, layer_norm(net, stats), channel_norm(net, stats), x, [1, 10, 100, 1000])
    for series in rep.series.values():
        assert series[0] == max(series)
        assert series[0] > 10 * series[-1]


def test_curve_equals_independent_runs(rng):
    net, x, stats = _small_setup(rng)
    nn = layer_norm(net, stats)
    rep = convergence_curve(net, nn, channel_norm(net, stats), x, [5, 50])
    assert rep.series["layer_norm"] == scheme_errors(net, nn, x, [5, 50])
    d = rep.to_dict()
    assert d["T_list"] == [5, 50] and d["target"] == 0.02
    json.dumps(d)


def test_mean_error_decreases_over_inputs():
    rng = np.random.default_rng(3)
    net = synthetic.random_network(rng, n_layers=3, max_channels=8)
    x = synthetic.random_inputs(rng, net, 20)
    nn = channel_norm(net, collect_stats(net, x, "max"))
    errs = scheme_errors(net, nn, x, [10, 100, 1000, 3000])
    assert all(b <= a for a, b in zip(errs, errs[1:]))


def test_channel_norm_reaches_target_first_on_skewed_fixture():
    rng = np.random.default_rng(1)
    net = synthetic.skewed_network(rng)
    x = synthetic.random_inputs(rng, net, 10)
    stats = collect_stats(net, np.concatenate([x, synthetic.random_inputs(rng, net, 40)]), "max")
    T_list = list(range(1, 1001))
    rep = convergence_curve(net, layer_norm(net, stats), channel_norm(net, stats), x, T_list)
    reach = rep.reach
    assert reach["channel_norm"] is not None
    assert reach["layer_norm"] is None or reach["layer_norm"] > reach["channel_norm"]


def test_firing_report_and_raster(rng, tmp_path):
    net, x, stats = _small_setup(rng, 1)
    snn = convert(channel_norm(net, stats))
    state = run(snn, x[0], 50, record=[0])
    rep = firing_report(state, raster_layer=0, raster_channel=1, raster_neurons=4)
    assert len(rep.layers) == len(net.layers)
    for i, layer in enumerate(rep.layers):
        assert sum(rep.histogram[str(i)]["counts"]) == layer["neurons"]
        assert all(0 <= r <= 1 for r in layer["channel_max"])
    # raster: neurons 0..3 of channel 1 only, events match the counts
    n_ch = net.channels(0)
    pos = state.spike_count_pos[0][0].reshape(-1, n_ch)[:4, 1]
    neg = state.spike_count_neg[0][0].reshape(-1, n_ch)[:4, 1]
    events = raster(state, 0, 1, 4)
    assert {k for _, k, _ in events} <= {0, 1, 2, 3}
    assert len(events) == int(pos.sum() + neg.sum())
    assert rep.raster == events
    rep.write_histogram_csv(tmp_path / "h.csv")
    rep.write_raster_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "t,neuron,sign"
    assert json.loads(rep.to_json())["T"] == 50


def test_raster_needs_trace(rng):
    net, x, stats = _small_setup(rng, 1)
    state = run(convert(channel_norm(net, stats)), x[0], 5)
    with pytest.raises(ValueError):
        raster(state, 0, 0)


def test_report_dataclass_defaults():
    rep = ConvergenceReport([1], 0.1)
    assert rep.to_dict()["series"] == {}
