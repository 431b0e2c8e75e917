"""Shared helpers: reference oracles and network builders for the tests.

The conv oracle here is written independently of the engine kernels (plain
window arithmetic over numpy views, float64 accumulation) so the two sides
of every comparison never share code.  ``conv_order_exact`` replays the
engine's documented float32 summation order with numpy scalars and is used
for the bit-exactness checks.
"""

from __future__ import annotations

import numpy as np

from vcnn import (
    ConvNode,
    ConvSpec,
    FireNode,
    FireSpec,
    FireWeights,
    NetworkDef,
    PlainWeightBank,
    PoolKind,
    PoolNode,
    PoolSpec,
    SoftmaxNode,
)
from vcnn.kernels import WeightBank, weights_from_plain


def conv_oracle(
    inp: np.ndarray, kernels: np.ndarray, biases: np.ndarray, stride: int, pad: int
) -> np.ndarray:
    """Brute-force convolution: zero-pad, slide windows, accumulate in
    float64.  inp (L, H, W); kernels (out, in, K, K); returns (out, oh, ow)."""
    n_out, n_in, k, _ = kernels.shape
    h, w = inp.shape[1], inp.shape[2]
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    padded = np.zeros((n_in, h + 2 * pad, w + 2 * pad), np.float64)
    padded[:, pad:pad + h, pad:pad + w] = inp
    out = np.empty((n_out, oh, ow), np.float64)
    for m in range(n_out):
        for y in range(oh):
            for x in range(ow):
                window = padded[:, y * stride:y * stride + k, x * stride:x * stride + k]
                out[m, y, x] = biases[m] + (window * kernels[m]).sum()
    return out


def conv_order_exact(
    inp: np.ndarray, kernels: np.ndarray, biases: np.ndarray, stride: int, pad: int
) -> np.ndarray:
    """Replay of the engine's strict float32 summation order: channel chunks
    outermost, then kernel rows, columns, then the four dot lanes."""
    n_out, n_in, k, _ = kernels.shape
    h, w = inp.shape[1], inp.shape[2]
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    padded_in = (n_in + 3) // 4 * 4
    cin = np.zeros((padded_in, h, w), np.float32)
    cin[:n_in] = inp
    cker = np.zeros((n_out, padded_in, k, k), np.float32)
    cker[:, :n_in] = kernels
    out = np.empty((n_out, oh, ow), np.float32)
    for m in range(n_out):
        for y in range(oh):
            for x in range(ow):
                acc = np.float32(biases[m])
                for c in range(padded_in // 4):
                    for i in range(k):
                        hi = y * stride - pad + i
                        if hi < 0 or hi >= h:
                            continue
                        for j in range(k):
                            wj = x * stride - pad + j
                            if wj < 0 or wj >= w:
                                continue
                            d = np.float32(cin[4 * c, hi, wj] * cker[m, 4 * c, i, j])
                            for lane in (1, 2, 3):
                                d = np.float32(
                                    d + cin[4 * c + lane, hi, wj]
                                    * cker[m, 4 * c + lane, i, j]
                                )
                            acc = np.float32(acc + d)
                out[m, y, x] = acc
    return out


def conv_seq_order_exact(
    inp: np.ndarray, kernels: np.ndarray, biases: np.ndarray, stride: int, pad: int
) -> np.ndarray:
    """Replay of the sequential kernel's float32 order: input channels, then
    kernel rows, then columns."""
    n_out, n_in, k, _ = kernels.shape
    h, w = inp.shape[1], inp.shape[2]
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    out = np.empty((n_out, oh, ow), np.float32)
    for m in range(n_out):
        for y in range(oh):
            for x in range(ow):
                acc = np.float32(biases[m])
                for l in range(n_in):
                    for i in range(k):
                        hi = y * stride - pad + i
                        if hi < 0 or hi >= h:
                            continue
                        for j in range(k):
                            wj = x * stride - pad + j
                            if wj < 0 or wj >= w:
                                continue
                            acc = np.float32(
                                acc + inp[l, hi, wj] * kernels[m, l, i, j]
                            )
                out[m, y, x] = acc
    return out


def random_plain_bank(spec: ConvSpec, rng: np.random.Generator,
                      scale: float | None = None) -> PlainWeightBank:
    fan_in = spec.in_layers * spec.kernel_size ** 2
    if scale is None:
        scale = float(np.sqrt(2.0 / fan_in))
    kernels = (rng.standard_normal(
        (spec.out_layers, spec.in_layers, spec.kernel_size, spec.kernel_size)
    ) * scale).astype(np.float32)
    biases = (rng.standard_normal(spec.out_layers) * 0.01).astype(np.float32)
    return PlainWeightBank(spec, kernels, biases)


def random_bank(spec: ConvSpec, rng: np.random.Generator,
                scale: float | None = None) -> WeightBank:
    return weights_from_plain(random_plain_bank(spec, rng, scale))


def fire_spec(in_layers: int, squeeze: int, e1: int, e3: int) -> FireSpec:
    return FireSpec(
        ConvSpec(1, 1, 0, in_layers, squeeze),
        ConvSpec(1, 1, 0, squeeze, e1),
        ConvSpec(3, 1, 1, squeeze, e3),
    )


def squeezenet_def(num_classes: int = 1000) -> NetworkDef:
    """The v1.0 topology: conv1 pads its 224x224 input by 2 so the canonical
    111/55/27/13 shape chain falls out of floor arithmetic."""
    return NetworkDef((3, 224, 224), (
        ConvNode("conv1", ConvSpec(7, 2, 2, 3, 96), relu=True),
        PoolNode("pool1", PoolSpec(3, 2, PoolKind.MAX)),
        FireNode("fire2", fire_spec(96, 16, 64, 64)),
        FireNode("fire3", fire_spec(128, 16, 64, 64)),
        FireNode("fire4", fire_spec(128, 32, 128, 128)),
        PoolNode("pool4", PoolSpec(3, 2, PoolKind.MAX)),
        FireNode("fire5", fire_spec(256, 32, 128, 128)),
        FireNode("fire6", fire_spec(256, 48, 192, 192)),
        FireNode("fire7", fire_spec(384, 48, 192, 192)),
        FireNode("fire8", fire_spec(384, 64, 256, 256)),
        PoolNode("pool8", PoolSpec(3, 2, PoolKind.MAX)),
        FireNode("fire9", fire_spec(512, 64, 256, 256)),
        ConvNode("conv10", ConvSpec(1, 1, 0, 512, num_classes), relu=True),
        PoolNode("pool10", PoolSpec(13, 1, PoolKind.AVG)),
        SoftmaxNode("softmax"),
    ))


def random_network_weights(net: NetworkDef, rng: np.random.Generator):
    weights = {}
    for node in net.nodes:
        if isinstance(node, ConvNode):
            weights[node.name] = random_bank(node.spec, rng)
        elif isinstance(node, FireNode):
            weights[node.name] = FireWeights(
                random_bank(node.spec.squeeze1x1, rng),
                random_bank(node.spec.expand1x1, rng),
                random_bank(node.spec.expand3x3, rng),
            )
    return weights


def write_ppm(path, pixels: np.ndarray) -> None:
    """pixels: (H, W, 3) uint8."""
    h, w, _ = pixels.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(pixels.tobytes())
