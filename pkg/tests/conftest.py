"""Shared builders for toy networks, weight streams, and image fixtures."""

import struct

import numpy as np
import pytest

from fmprune import (
    LayerSpec, NetworkModel, PruneConfig, Tensor, WeightBlock, forward,
    load_weights, parse_config,
)


def header_blob(major=0, minor=2, revision=0, seen=0) -> bytes:
    out = struct.pack("<iii", major, minor, revision)
    fmt = "<q" if major * 10 + minor >= 2 else "<i"
    return out + struct.pack(fmt, seen)


def count_layer_floats_oracle(layer: LayerSpec) -> int:
    """Weight-slot count by explicit enumeration, independent of the loader."""
    if layer.kind == "convolutional":
        slots = 0
        for _f in range(layer.filters):
            slots += 1  # bias
            if layer.batch_normalize:
                slots += 3
            for _c in range(layer.in_shape[0] // layer.groups):
                for _ky in range(layer.size):
                    for _kx in range(layer.size):
                        slots += 1
        return slots
    if layer.kind == "connected":
        inputs = layer.in_shape[0] * layer.in_shape[1] * layer.in_shape[2]
        return layer.outputs * (1 + inputs)
    return 0


def weights_blob(model: NetworkModel, values=None, rng=None, header=None) -> bytes:
    """Pack a weights stream for a parsed skeleton."""
    total = sum(count_layer_floats_oracle(l) for l in model.layers)
    if values is None:
        rng = rng or np.random.default_rng(0)
        values = rng.normal(scale=0.4, size=total)
    arr = np.asarray(values, dtype=np.float32)
    assert arr.size == total, f"need {total} values, got {arr.size}"
    return (header if header is not None else header_blob()) + arr.tobytes()


def build_model(cfg_text: str, values=None, rng=None) -> NetworkModel:
    model = parse_config(cfg_text)
    return load_weights(weights_blob(model, values=values, rng=rng), model)


def conv_block(rng, layer: LayerSpec, scale=0.4, bias_scale=0.5) -> WeightBlock:
    cpg = layer.in_shape[0] // layer.groups
    return WeightBlock(
        rng.normal(scale=scale, size=(layer.filters, cpg, layer.size, layer.size)).astype(np.float32),
        rng.normal(scale=bias_scale, size=layer.filters).astype(np.float32),
    )


def random_input(rng, shape) -> Tensor:
    return Tensor(rng.normal(size=shape).astype(np.float32))


def random_relu_net(rng, max_convs=4, dead_bias_prob=0.3):
    """A random conv/maxpool stack with ReLU activations.

    Some biases are driven strongly negative so whole output channels
    frequently die, which is what makes exact-zero channel skipping visible.
    """
    c0 = int(rng.integers(1, 4))
    h = int(rng.integers(5, 10))
    w = int(rng.integers(5, 10))
    lines = ["[net]", f"height={h}", f"width={w}", f"channels={c0}"]
    n_conv = int(rng.integers(2, max_convs + 1))
    cur_h, cur_w = h, w
    for j in range(n_conv):
        k = int(rng.choice([1, 3]))
        filters = int(rng.integers(1, 9))
        lines += ["[convolutional]", f"filters={filters}", f"size={k}", "stride=1",
                  f"pad={1 if k > 1 else 0}", "activation=relu"]
        if j < n_conv - 1 and min(cur_h, cur_w) >= 4 and rng.random() < 0.3:
            lines += ["[maxpool]", "size=2", "stride=2"]
            cur_h = -((cur_h - 2) // -2) + 1
            cur_w = -((cur_w - 2) // -2) + 1
    model = parse_config("\n".join(lines))
    values = []
    for layer in model.layers:
        if layer.kind != "convolutional":
            continue
        biases = rng.normal(scale=0.5, size=layer.filters)
        dead = rng.random(layer.filters) < dead_bias_prob
        biases[dead] = -8.0
        values.append(biases)
        n_weights = layer.filters * (layer.in_shape[0] // layer.groups) * layer.size ** 2
        values.append(rng.normal(scale=0.25, size=n_weights))
    return load_weights(weights_blob(model, values=np.concatenate(values)), model)


def expected_zero_channel_skips(model, image) -> list[int]:
    """Per-conv-layer skip counts an epsilon=0 pruned run must report.

    Counts the exactly-zero channels of each convolutional layer's activated
    output, which is what the next convolutional layer may skip; the first
    convolutional layer consumes the unmarked image and skips nothing.
    """
    conv_outputs = []

    def tap(layer, out):
        if layer.kind == "convolutional":
            conv_outputs.append(out)

    forward(model, image, PruneConfig(), layer_tap=tap)
    expected = [0]
    for out in conv_outputs[:-1]:
        zero = sum(int(np.all(out.data[ch] == 0.0)) for ch in range(out.c))
        expected.append(zero)
    return expected


SOFTMAX_ONLY_CFG = """
[net]
height=1
width=1
channels={channels}

[softmax]
"""


def softmax_only_model(channels: int) -> NetworkModel:
    model = parse_config(SOFTMAX_ONLY_CFG.format(channels=channels))
    return load_weights(header_blob(), model)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
