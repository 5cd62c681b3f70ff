"""Random small networks and the skewed-channel fixture."""

from __future__ import annotations

import numpy as np

from .netspec import BatchNorm, LayerSpec, NetworkSpec


def _conv(rng, cin, cout, k=3, padding="same", activation="leaky_relu", bias_scale=0.1, batchnorm=False):
    w = rng.normal(0, 1 / np.sqrt(cin * k * k), size=(cout, cin, k, k))
    b = rng.normal(0, bias_scale, size=cout)
    bn = _random_bn(rng, cout) if batchnorm else None
    return LayerSpec("conv2d", weights=w, bias=b, padding=padding, activation=activation, batchnorm=bn)


def _dense(rng, nin, nout, activation="none", bias_scale=0.1, batchnorm=False):
    w = rng.normal(0, 1 / np.sqrt(nin), size=(nout, nin))
    b = rng.normal(0, bias_scale, size=nout)
    bn = _random_bn(rng, nout) if batchnorm else None
    return LayerSpec("dense", weights=w, bias=b, activation=activation, batchnorm=bn)


def _random_bn(rng, n):
    return BatchNorm(
        gamma=rng.uniform(0.5, 2.0, n),
        beta=rng.normal(0, 0.2, n),
        mean=rng.normal(0, 0.2, n),
        var=rng.uniform(0.2, 2.0, n),
    )


def random_network(
    rng: np.random.Generator,
    n_layers: int | None = None,
    max_channels: int = 32,
    input_shape=(6, 6, 3),
    alpha: float = 0.1,
    batchnorm: bool = False,
    bias_scale: float = 0.1,
) -> NetworkSpec:
    """Random conv stack (2-4 weighted layers, optional 2x2 max-pool) ending in
    a linear dense head."""
    if n_layers is None:
        n_layers = int(rng.integers(2, 5))
    h, w, c = input_shape
    layers = []
    pooled = False
    for _ in range(n_layers - 1):
        cout = int(rng.integers(2, max_channels + 1))
        layers.append(_conv(rng, c, cout, batchnorm=batchnorm, bias_scale=bias_scale))
        c = cout
        if not pooled and h >= 4 and rng.random() < 0.5:
            layers.append(LayerSpec("maxpool2d", kernel=2, stride=2, activation="none"))
            h, w, pooled = h // 2, w // 2, True
    nout = int(rng.integers(1, 5))
    layers.append(_dense(rng, h * w * c, nout, batchnorm=batchnorm, bias_scale=bias_scale))
    return NetworkSpec(tuple(layers), input_shape, alpha)


def random_inputs(rng: np.random.Generator, net: NetworkSpec, n: int) -> np.ndarray:
    return rng.uniform(0, 1, size=(n, *net.input_shape)).astype(np.float32)


def skewed_network(
    rng: np.random.Generator,
    skew: float = 0.01,
    skewed_channel: int = 0,
    channels: int = 8,
    input_shape=(8, 8, 3),
    n_out: int = 4,
    alpha: float = 0.1,
) -> NetworkSpec:
    """Conv - maxpool - conv - dense network whose first conv layer has one
    channel scaled down by ``skew`` (its maximum activation sits ~1/skew below
    the layer maximum). The next layer's weights from that channel are scaled
    up by ``1/skew`` so the channel still matters to the output."""
    h, w, c = input_shape
    conv1 = _conv(rng, c, channels, bias_scale=0.0)
    w1 = np.array(conv1.weights)
    w1[skewed_channel] *= skew
    conv1 = LayerSpec("conv2d", weights=w1, bias=conv1.bias, padding="same")

    pool = LayerSpec("maxpool2d", kernel=2, stride=2, activation="none")

    conv2 = _conv(rng, channels, channels, bias_scale=0.05)
    w2 = np.array(conv2.weights)
    w2[:, skewed_channel] /= skew
    conv2 = LayerSpec("conv2d", weights=w2, bias=conv2.bias, padding="same")

    head = _dense(rng, (h // 2) * (w // 2) * channels, n_out, bias_scale=0.05)
    return NetworkSpec((conv1, pool, conv2, head), input_shape, alpha)
