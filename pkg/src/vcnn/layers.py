"""Non-convolution layer operators and the fire-block composition.

Pooling runs data-parallel over chunked-4 tensors, reducing four channels
per vector step; row-major single-worker variants back the sequential
benchmark path.  Softmax runs on the host, scalar.  A fire block is a
1x1 squeeze convolution feeding parallel 1x1 and 3x3 expand convolutions
whose outputs concatenate along the channel axis.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .kernels import (
    ArithMode,
    ConvSpec,
    WeightBank,
    _RELAXED_FLAGS,
    conv_granular,
)
from .tensor import Layout, Tensor3

__all__ = [
    "ArithMode",
    "PoolKind",
    "PoolSpec",
    "FireSpec",
    "FireWeights",
    "max_pool",
    "avg_pool",
    "pool_rowmajor",
    "relu",
    "softmax",
    "fire_forward",
]


class PoolKind(enum.Enum):
    MAX = "max"
    AVG = "avg"


@dataclass(frozen=True)
class PoolSpec:
    window: int
    stride: int
    kind: PoolKind

    def __post_init__(self) -> None:
        if self.window < 1 or self.stride < 1:
            raise ValueError(f"invalid pool spec {self.window}/{self.stride}")

    def out_shape(self, in_h: int, in_w: int) -> tuple[int, int]:
        if self.window > in_h or self.window > in_w:
            raise ValueError(
                f"pool window {self.window} larger than input {in_h}x{in_w}"
            )
        return (
            (in_h - self.window) // self.stride + 1,
            (in_w - self.window) // self.stride + 1,
        )


@dataclass(frozen=True)
class FireSpec:
    """Squeeze plus two expand convolutions; outputs concatenate channel-wise."""

    squeeze1x1: ConvSpec
    expand1x1: ConvSpec
    expand3x3: ConvSpec

    def __post_init__(self) -> None:
        if self.expand1x1.in_layers != self.squeeze1x1.out_layers \
                or self.expand3x3.in_layers != self.squeeze1x1.out_layers:
            raise ValueError("expand input counts must equal squeeze output count")
        # The concatenated output must keep whole chunks on each side of the
        # seam, otherwise the chunked layout of the fire output breaks.
        if self.expand1x1.out_layers % 4 != 0 or self.expand3x3.out_layers % 4 != 0:
            raise ValueError("expand output counts must be multiples of 4")

    @property
    def in_layers(self) -> int:
        return self.squeeze1x1.in_layers

    @property
    def out_layers(self) -> int:
        return self.expand1x1.out_layers + self.expand3x3.out_layers


@dataclass
class FireWeights:
    squeeze1x1: WeightBank
    expand1x1: WeightBank
    expand3x3: WeightBank


def _max_body(inp, out, window, stride, out_h, out_w):
    chunks = inp.shape[0]
    for x in prange(chunks * out_h * out_w):
        w = x % out_w
        h = (x // out_w) % out_h
        c = x // (out_w * out_h)
        m0 = inp[c, h * stride, w * stride, 0]
        m1 = inp[c, h * stride, w * stride, 1]
        m2 = inp[c, h * stride, w * stride, 2]
        m3 = inp[c, h * stride, w * stride, 3]
        for i in range(window):
            for j in range(window):
                v0 = inp[c, h * stride + i, w * stride + j, 0]
                v1 = inp[c, h * stride + i, w * stride + j, 1]
                v2 = inp[c, h * stride + i, w * stride + j, 2]
                v3 = inp[c, h * stride + i, w * stride + j, 3]
                if v0 > m0:
                    m0 = v0
                if v1 > m1:
                    m1 = v1
                if v2 > m2:
                    m2 = v2
                if v3 > m3:
                    m3 = v3
        out[c, h, w, 0] = m0
        out[c, h, w, 1] = m1
        out[c, h, w, 2] = m2
        out[c, h, w, 3] = m3


def _avg_body(inp, out, window, stride, out_h, out_w):
    chunks = inp.shape[0]
    area = np.float32(window * window)
    for x in prange(chunks * out_h * out_w):
        w = x % out_w
        h = (x // out_w) % out_h
        c = x // (out_w * out_h)
        s0 = np.float32(0.0)
        s1 = np.float32(0.0)
        s2 = np.float32(0.0)
        s3 = np.float32(0.0)
        for i in range(window):
            for j in range(window):
                s0 += inp[c, h * stride + i, w * stride + j, 0]
                s1 += inp[c, h * stride + i, w * stride + j, 1]
                s2 += inp[c, h * stride + i, w * stride + j, 2]
                s3 += inp[c, h * stride + i, w * stride + j, 3]
        out[c, h, w, 0] = s0 / area
        out[c, h, w, 1] = s1 / area
        out[c, h, w, 2] = s2 / area
        out[c, h, w, 3] = s3 / area

# Same single-body/two-wrappers rule as the conv kernels: only the strict
# variant may use the on-disk cache.
_POOL_STRICT = {
    PoolKind.MAX: njit(parallel=True, cache=True)(_max_body),
    PoolKind.AVG: njit(parallel=True, cache=True)(_avg_body),
}
_POOL_RELAXED = {
    PoolKind.MAX: njit(parallel=True, fastmath=_RELAXED_FLAGS)(_max_body),
    PoolKind.AVG: njit(parallel=True, fastmath=_RELAXED_FLAGS)(_avg_body),
}


@njit(cache=True)
def _pool_rowmajor_body(inp, out, window, stride, out_h, out_w, take_max):
    layers = inp.shape[0]
    area = np.float32(window * window)
    for m in range(layers):
        for h in range(out_h):
            for w in range(out_w):
                if take_max:
                    best = inp[m, h * stride, w * stride]
                    for i in range(window):
                        for j in range(window):
                            v = inp[m, h * stride + i, w * stride + j]
                            if v > best:
                                best = v
                    out[m, h, w] = best
                else:
                    s = np.float32(0.0)
                    for i in range(window):
                        for j in range(window):
                            s += inp[m, h * stride + i, w * stride + j]
                    out[m, h, w] = s / area


def _pool_chunked(t: Tensor3, spec: PoolSpec, mode: ArithMode) -> Tensor3:
    if t.layout is not Layout.CHUNKED4:
        raise ValueError("pooling expects a CHUNKED4 tensor")
    out_h, out_w = spec.out_shape(t.height, t.width)
    out = np.empty((t.padded_layers // 4, out_h, out_w, 4), np.float32)
    table = _POOL_STRICT if mode is ArithMode.STRICT else _POOL_RELAXED
    table[spec.kind](t.chunk_view(), out, spec.window, spec.stride, out_h, out_w)
    return Tensor3(t.num_layers, out_h, out_w, Layout.CHUNKED4, out.reshape(-1))


def max_pool(t: Tensor3, spec: PoolSpec, mode: ArithMode = ArithMode.STRICT) -> Tensor3:
    """Per-channel window maxima, four channels per vector step."""
    if spec.kind is not PoolKind.MAX:
        raise ValueError("max_pool requires a MAX pool spec")
    return _pool_chunked(t, spec, mode)


def avg_pool(t: Tensor3, spec: PoolSpec, mode: ArithMode = ArithMode.STRICT) -> Tensor3:
    """Per-channel window means; divisor is the window area."""
    if spec.kind is not PoolKind.AVG:
        raise ValueError("avg_pool requires an AVG pool spec")
    return _pool_chunked(t, spec, mode)


def pool_rowmajor(t: Tensor3, spec: PoolSpec) -> Tensor3:
    """Single-worker pooling over a row-major tensor (sequential bench path)."""
    if t.layout is not Layout.ROW_MAJOR:
        raise ValueError("pool_rowmajor expects a ROW_MAJOR tensor")
    out_h, out_w = spec.out_shape(t.height, t.width)
    out = np.empty((t.num_layers, out_h, out_w), np.float32)
    _pool_rowmajor_body(
        t.to_array(), out, spec.window, spec.stride, out_h, out_w,
        spec.kind is PoolKind.MAX,
    )
    return Tensor3(t.num_layers, out_h, out_w, Layout.ROW_MAJOR, out.reshape(-1))


def relu(t: Tensor3) -> Tensor3:
    """Elementwise max(0, x); layout-preserving.  Zero padding stays zero."""
    return Tensor3(
        t.num_layers, t.height, t.width, t.layout,
        np.maximum(t.data, np.float32(0.0)),
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted exponentiation, normalized; runs scalar on the host."""
    logits = np.asarray(logits)
    if logits.ndim != 1 or logits.size == 0:
        raise ValueError("softmax expects a nonempty vector")
    shifted = logits.astype(np.float64) - float(logits.max())
    e = np.exp(shifted)
    return e / e.sum()


def fire_forward(
    t: Tensor3,
    spec: FireSpec,
    weights: FireWeights,
    g: tuple[int, int, int] = (1, 1, 1),
    mode: ArithMode = ArithMode.STRICT,
) -> Tensor3:
    """relu(squeeze) feeding both expands; outputs concatenated channel-wise,
    expand1x1 channels first.  g picks the granularity of each convolution
    in (squeeze, expand1x1, expand3x3) order."""
    if t.num_layers != spec.in_layers:
        raise ValueError(
            f"fire input has {t.num_layers} layers, spec expects {spec.in_layers}"
        )
    squeezed = relu(conv_granular(t, weights.squeeze1x1, g[0], mode))
    e1 = relu(conv_granular(squeezed, weights.expand1x1, g[1], mode))
    e3 = relu(conv_granular(squeezed, weights.expand3x3, g[2], mode))
    if (e1.height, e1.width) != (e3.height, e3.width):
        raise ValueError("expand branches disagree on spatial dims")
    # Both expand channel counts are multiples of 4, so whole chunks
    # concatenate cleanly.
    data = np.concatenate([e1.data, e3.data])
    return Tensor3(
        spec.out_layers, e1.height, e1.width, Layout.CHUNKED4, data
    )
