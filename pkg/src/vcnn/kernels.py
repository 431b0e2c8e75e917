"""The five convolution kernels forming the optimization ladder.

All kernels compute the same convolution

    out[m][h][w] = bias[m] + sum_{l,i,j} in[l][h*S - P + i][w*S - P + j]
                                         * kernel[m][l][i][j]

with out-of-bounds input reads treated as zero.  ``conv_sequential`` is the
reference; the others restate it as data-parallel work items:

* ``conv_parallel_scalar``: one work item per output element, coordinates
  decoded from the flat index in row-major order.
* ``conv_vectorized``: input in the chunked-4 layout, inner reduction in
  4-wide dot products over channel chunks.
* ``conv_vectorized_fused``: same math, output written directly in
  chunked-4 order so the next layer needs no reorder pass.
* ``conv_granular``: each work item computes g outputs at the same spatial
  position, in output channels m, m + L/g, m + 2L/g, ..., reusing the
  loaded input window g times.

Summation order inside a work item is fixed (channel chunks outermost,
then kernel rows, then columns, then the four lanes of the dot), so strict
mode is deterministic, bit-exact across granularities and thread counts.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .tensor import Layout, Tensor3, padded_layer_count

log = logging.getLogger(__name__)


class ArithMode(enum.Enum):
    """Arithmetic strictness for parallel kernels.

    STRICT evaluates plain IEEE float32 in the documented summation order.
    RELAXED additionally permits fused multiply-add contraction (and lets
    the hardware flush denormals); reassociation stays forbidden so the
    deviation from strict mode remains bounded.
    """

    STRICT = "strict"
    RELAXED = "relaxed"


# LLVM fast-math subset for RELAXED: contraction only.
_RELAXED_FLAGS = {"contract"}


@dataclass(frozen=True)
class ConvSpec:
    """Convolution hyperparameters: K x K kernels, stride, zero padding."""

    kernel_size: int
    stride: int
    pad: int
    in_layers: int
    out_layers: int

    def __post_init__(self) -> None:
        if self.kernel_size < 1:
            raise ValueError(f"kernel_size must be >= 1, got {self.kernel_size}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.pad < 0:
            raise ValueError(f"pad must be >= 0, got {self.pad}")
        if self.in_layers < 1 or self.out_layers < 1:
            raise ValueError("layer counts must be >= 1")

    def out_shape(self, in_h: int, in_w: int) -> tuple[int, int]:
        """Output spatial dims: floor((in + 2P - K) / S) + 1, must be >= 1."""
        oh = (in_h + 2 * self.pad - self.kernel_size) // self.stride + 1
        ow = (in_w + 2 * self.pad - self.kernel_size) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ValueError(
                f"kernel {self.kernel_size} stride {self.stride} pad {self.pad} "
                f"does not fit a {in_h}x{in_w} input"
            )
        return oh, ow

    @property
    def padded_in_layers(self) -> int:
        return padded_layer_count(self.in_layers)


@dataclass
class PlainWeightBank:
    """Kernels in plain (out, in, K, K) order plus per-output biases."""

    spec: ConvSpec
    kernels: np.ndarray = field(repr=False)
    biases: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        k, s = self.kernels, self.spec
        expect = (s.out_layers, s.in_layers, s.kernel_size, s.kernel_size)
        if k.shape != expect:
            raise ValueError(f"plain kernel shape {k.shape} != {expect}")
        if self.biases.shape != (s.out_layers,):
            raise ValueError(f"bias shape {self.biases.shape} != ({s.out_layers},)")
        if k.dtype != np.float32 or self.biases.dtype != np.float32:
            raise TypeError("weights must be float32")


@dataclass
class WeightBank:
    """Kernels pre-reordered for the vectorized kernels, plus biases.

    Flat kernel order per output channel m: the K x K spatial positions,
    each holding paddedInputLayers values with input channels grouped in
    fours; padded input channels carry zero weights.
    """

    spec: ConvSpec
    kernels: np.ndarray = field(repr=False)
    biases: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        s = self.spec
        expect = s.out_layers * s.kernel_size * s.kernel_size * s.padded_in_layers
        if self.kernels.shape != (expect,):
            raise ValueError(
                f"reordered kernel length {self.kernels.shape} != ({expect},)"
            )
        if self.biases.shape != (s.out_layers,):
            raise ValueError(f"bias shape {self.biases.shape} != ({s.out_layers},)")
        if self.kernels.dtype != np.float32 or self.biases.dtype != np.float32:
            raise TypeError("weights must be float32")

    def kernel_view(self) -> np.ndarray:
        """View kernels as (out, K, K, in_chunks, 4)."""
        s = self.spec
        return self.kernels.reshape(
            s.out_layers, s.kernel_size, s.kernel_size, s.padded_in_layers // 4, 4
        )


def weights_from_plain(plain: PlainWeightBank) -> WeightBank:
    """Reorder plain kernels into the chunked-4 input-channel order."""
    s = plain.spec
    padded = s.padded_in_layers
    k = plain.kernels
    if padded != s.in_layers:
        pad = np.zeros(
            (s.out_layers, padded - s.in_layers, s.kernel_size, s.kernel_size),
            np.float32,
        )
        k = np.concatenate([k, pad], axis=1)
    # (out, in, K, K) -> (out, K, K, in); groups of 4 fall out of the reshape
    reordered = np.ascontiguousarray(k.transpose(0, 2, 3, 1)).reshape(-1)
    return WeightBank(s, reordered, plain.biases.copy())


def weights_to_plain(bank: WeightBank) -> PlainWeightBank:
    """Inverse of weights_from_plain; drops the zero-padded input channels."""
    s = bank.spec
    k = bank.kernels.reshape(
        s.out_layers, s.kernel_size, s.kernel_size, s.padded_in_layers
    )
    plain = np.ascontiguousarray(k.transpose(0, 3, 1, 2)[:, : s.in_layers])
    return PlainWeightBank(s, plain, bank.biases.copy())


def valid_granularities(out_layers: int) -> list[int]:
    """All granularities g with g | L and (L / g) divisible by four, ascending.

    Returns an empty list (with a logged diagnostic) when the output layer
    count itself is not a multiple of four, since the chunked output of a
    granular kernel cannot be formed then.
    """
    if out_layers % 4 != 0:
        log.warning(
            "no valid granularities: %d output layers is not a multiple of 4",
            out_layers,
        )
        return []
    return [g for g in range(1, out_layers + 1)
            if out_layers % g == 0 and (out_layers // g) % 4 == 0]


def _check_granularity(g: int, out_layers: int) -> None:
    if g < 1 or out_layers % 4 != 0 or out_layers % g != 0 \
            or (out_layers // g) % 4 != 0:
        raise ValueError(
            f"granularity {g} invalid for {out_layers} output layers "
            f"(need g | L and L/g divisible by 4)"
        )


def _check_input(t: Tensor3, spec: ConvSpec, layout: Layout) -> tuple[int, int]:
    if t.layout is not layout:
        raise ValueError(f"input layout {t.layout.value} != required {layout.value}")
    if t.num_layers != spec.in_layers:
        raise ValueError(
            f"input has {t.num_layers} layers, spec expects {spec.in_layers}"
        )
    return spec.out_shape(t.height, t.width)


# ---------------------------------------------------------------------------
# Compiled kernel bodies.  Each body is written once and wrapped twice: the
# strict wrapper may use the on-disk cache, the relaxed one must not -- numba
# keys the cache per function, so caching both variants of one body would let
# one silently serve the other's machine code.
# ---------------------------------------------------------------------------


def _seq_body(inp, ker, bias, ksize, stride, pad, out, out_h, out_w):
    in_layers, in_h, in_w = inp.shape
    out_layers = ker.shape[0]
    for m in range(out_layers):
        for h in range(out_h):
            for w in range(out_w):
                acc = bias[m]
                for l in range(in_layers):
                    for i in range(ksize):
                        hi = h * stride - pad + i
                        if hi < 0 or hi >= in_h:
                            continue
                        for j in range(ksize):
                            wj = w * stride - pad + j
                            if wj < 0 or wj >= in_w:
                                continue
                            acc += inp[l, hi, wj] * ker[m, l, i, j]
                out[(m * out_h + h) * out_w + w] = acc


def _par_scalar_body(inp, ker, bias, ksize, stride, pad, out, out_h, out_w):
    in_layers, in_h, in_w = inp.shape
    out_layers = ker.shape[0]
    for x in prange(out_layers * out_h * out_w):
        w = x % out_w
        h = (x // out_w) % out_h
        m = x // (out_w * out_h)
        acc = bias[m]
        for l in range(in_layers):
            for i in range(ksize):
                hi = h * stride - pad + i
                if hi < 0 or hi >= in_h:
                    continue
                for j in range(ksize):
                    wj = w * stride - pad + j
                    if wj < 0 or wj >= in_w:
                        continue
                    acc += inp[l, hi, wj] * ker[m, l, i, j]
        out[x] = acc


def _vec_body(inp, ker, bias, ksize, stride, pad, out, out_h, out_w):
    # inp: (chunks, H, W, 4); ker: (out, K, K, chunks, 4); out row-major flat
    chunks, in_h, in_w = inp.shape[0], inp.shape[1], inp.shape[2]
    out_layers = ker.shape[0]
    for x in prange(out_layers * out_h * out_w):
        w = x % out_w
        h = (x // out_w) % out_h
        m = x // (out_w * out_h)
        acc = bias[m]
        for c in range(chunks):
            for i in range(ksize):
                hi = h * stride - pad + i
                if hi < 0 or hi >= in_h:
                    continue
                for j in range(ksize):
                    wj = w * stride - pad + j
                    if wj < 0 or wj >= in_w:
                        continue
                    d = inp[c, hi, wj, 0] * ker[m, i, j, c, 0]
                    d += inp[c, hi, wj, 1] * ker[m, i, j, c, 1]
                    d += inp[c, hi, wj, 2] * ker[m, i, j, c, 2]
                    d += inp[c, hi, wj, 3] * ker[m, i, j, c, 3]
                    acc += d
        out[x] = acc


def _fused_body(inp, ker, bias, ksize, stride, pad, out, out_h, out_w):
    # Output written at chunked-4 flat positions; padded channels stay zero.
    chunks, in_h, in_w = inp.shape[0], inp.shape[1], inp.shape[2]
    out_layers = ker.shape[0]
    padded_out = (out_layers + 3) // 4 * 4
    for x in prange(padded_out * out_h * out_w):
        w = (x // 4) % out_w
        h = (x // (4 * out_w)) % out_h
        m = (x % 4) + (x // (4 * out_w * out_h)) * 4
        if m >= out_layers:
            out[x] = 0.0
            continue
        acc = bias[m]
        for c in range(chunks):
            for i in range(ksize):
                hi = h * stride - pad + i
                if hi < 0 or hi >= in_h:
                    continue
                for j in range(ksize):
                    wj = w * stride - pad + j
                    if wj < 0 or wj >= in_w:
                        continue
                    d = inp[c, hi, wj, 0] * ker[m, i, j, c, 0]
                    d += inp[c, hi, wj, 1] * ker[m, i, j, c, 1]
                    d += inp[c, hi, wj, 2] * ker[m, i, j, c, 2]
                    d += inp[c, hi, wj, 3] * ker[m, i, j, c, 3]
                    acc += d
        out[x] = acc


def _granular_body(inp, ker, bias, ksize, stride, pad, out, out_h, out_w, g):
    # One work item computes g outputs at the same (h, w), in channels
    # m, m + L/g, m + 2L/g, ...; the input window is loaded once per item.
    chunks, in_h, in_w = inp.shape[0], inp.shape[1], inp.shape[2]
    out_layers = ker.shape[0]
    sub = out_layers // g
    plane = out_h * out_w
    for x in prange(sub * plane):
        w = (x // 4) % out_w
        h = (x // (4 * out_w)) % out_h
        m = (x % 4) + (x // (4 * plane)) * 4
        accs = np.empty(g, np.float32)
        for k in range(g):
            accs[k] = bias[m + k * sub]
        for c in range(chunks):
            for i in range(ksize):
                hi = h * stride - pad + i
                if hi < 0 or hi >= in_h:
                    continue
                for j in range(ksize):
                    wj = w * stride - pad + j
                    if wj < 0 or wj >= in_w:
                        continue
                    a0 = inp[c, hi, wj, 0]
                    a1 = inp[c, hi, wj, 1]
                    a2 = inp[c, hi, wj, 2]
                    a3 = inp[c, hi, wj, 3]
                    for k in range(g):
                        mk = m + k * sub
                        d = a0 * ker[mk, i, j, c, 0]
                        d += a1 * ker[mk, i, j, c, 1]
                        d += a2 * ker[mk, i, j, c, 2]
                        d += a3 * ker[mk, i, j, c, 3]
                        accs[k] += d
        for k in range(g):
            out[x + k * sub * plane] = accs[k]


_seq_strict = njit(cache=True)(_seq_body)
_par_scalar_strict = njit(parallel=True, cache=True)(_par_scalar_body)

_STRICT = {
    "vec": njit(parallel=True, cache=True)(_vec_body),
    "fused": njit(parallel=True, cache=True)(_fused_body),
    "granular": njit(parallel=True, cache=True)(_granular_body),
}
_RELAXED = {
    "vec": njit(parallel=True, fastmath=_RELAXED_FLAGS)(_vec_body),
    "fused": njit(parallel=True, fastmath=_RELAXED_FLAGS)(_fused_body),
    "granular": njit(parallel=True, fastmath=_RELAXED_FLAGS)(_granular_body),
}


def _impl(name: str, mode: ArithMode):
    return (_STRICT if mode is ArithMode.STRICT else _RELAXED)[name]


# ---------------------------------------------------------------------------
# Public kernel entry points.
# ---------------------------------------------------------------------------


def conv_sequential(t: Tensor3, weights: PlainWeightBank) -> Tensor3:
    """Reference convolution: plain nested loops, single worker.

    Every other kernel is tested against this one.
    """
    out_h, out_w = _check_input(t, weights.spec, Layout.ROW_MAJOR)
    s = weights.spec
    out = np.empty(s.out_layers * out_h * out_w, np.float32)
    _seq_strict(
        t.to_array(), weights.kernels, weights.biases,
        s.kernel_size, s.stride, s.pad, out, out_h, out_w,
    )
    return Tensor3(s.out_layers, out_h, out_w, Layout.ROW_MAJOR, out)


def conv_parallel_scalar(t: Tensor3, weights: PlainWeightBank) -> Tensor3:
    """One work item per output element; values identical to conv_sequential."""
    out_h, out_w = _check_input(t, weights.spec, Layout.ROW_MAJOR)
    s = weights.spec
    out = np.empty(s.out_layers * out_h * out_w, np.float32)
    _par_scalar_strict(
        t.to_array(), weights.kernels, weights.biases,
        s.kernel_size, s.stride, s.pad, out, out_h, out_w,
    )
    return Tensor3(s.out_layers, out_h, out_w, Layout.ROW_MAJOR, out)


def conv_vectorized(
    t: Tensor3, weights: WeightBank, mode: ArithMode = ArithMode.STRICT
) -> Tensor3:
    """Chunked-4 input, 4-wide dots over channel chunks, row-major output."""
    out_h, out_w = _check_input(t, weights.spec, Layout.CHUNKED4)
    s = weights.spec
    out = np.empty(s.out_layers * out_h * out_w, np.float32)
    _impl("vec", mode)(
        t.chunk_view(), weights.kernel_view(), weights.biases,
        s.kernel_size, s.stride, s.pad, out, out_h, out_w,
    )
    return Tensor3(s.out_layers, out_h, out_w, Layout.ROW_MAJOR, out)


def conv_vectorized_fused(
    t: Tensor3, weights: WeightBank, mode: ArithMode = ArithMode.STRICT
) -> Tensor3:
    """Like conv_vectorized but the output lands directly in chunked-4 order,
    so it feeds the next layer with zero reordering overhead."""
    out_h, out_w = _check_input(t, weights.spec, Layout.CHUNKED4)
    s = weights.spec
    out = np.empty(padded_layer_count(s.out_layers) * out_h * out_w, np.float32)
    _impl("fused", mode)(
        t.chunk_view(), weights.kernel_view(), weights.biases,
        s.kernel_size, s.stride, s.pad, out, out_h, out_w,
    )
    return Tensor3(s.out_layers, out_h, out_w, Layout.CHUNKED4, out)


def conv_granular(
    t: Tensor3,
    weights: WeightBank,
    granularity: int,
    mode: ArithMode = ArithMode.STRICT,
) -> Tensor3:
    """Fused kernel with adjustable work granularity: each work item
    computes ``granularity`` outputs, value-identical to
    conv_vectorized_fused for every valid choice."""
    s = weights.spec
    if granularity == 1:
        # Degenerate granularity: one output per work item.
        return conv_vectorized_fused(t, weights, mode)
    _check_granularity(granularity, s.out_layers)
    out_h, out_w = _check_input(t, weights.spec, Layout.CHUNKED4)
    out = np.empty(s.out_layers * out_h * out_w, np.float32)
    _impl("granular", mode)(
        t.chunk_view(), weights.kernel_view(), weights.biases,
        s.kernel_size, s.stride, s.pad, out, out_h, out_w, granularity,
    )
    return Tensor3(s.out_layers, out_h, out_w, Layout.CHUNKED4, out)
