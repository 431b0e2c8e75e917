"""3-D feature-map tensors, their two storage layouts, and the index algebra.

Two flat layouts are used throughout the engine:

* row-major: channel-major order, element (m, h, w) at flat index
  ``(m * height + h) * width + w``.
* chunked-4: channels are grouped in runs of four at each spatial
  position, so that the four values at one (h, w) from four consecutive
  channels sit contiguously and can feed a 4-wide dot product.  Element
  (m, h, w) lives at ``((m // 4 * height + h) * width + w) * 4 + m % 4``.
  The channel count is zero-padded up to a multiple of four.

The per-work-item coordinate maps below are the inverse of those layouts:
a kernel's flat work index x decodes to the output coordinate it owns.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class Layout(enum.Enum):
    ROW_MAJOR = "row_major"
    CHUNKED4 = "chunked4"


class ElemCoord(NamedTuple):
    """Coordinate of one tensor element: channel m, row h, column w."""

    m: int
    h: int
    w: int


def padded_layer_count(num_layers: int) -> int:
    """Channel count rounded up to the next multiple of four."""
    return (num_layers + 3) // 4 * 4


@dataclass
class Tensor3:
    """A 3-D feature map (channels x height x width) over flat float32 storage.

    ``data`` holds exactly ``padded_layers * height * width`` values, where
    padded_layers equals num_layers for ROW_MAJOR and num_layers rounded up
    to a multiple of four for CHUNKED4.  Padded channel slots are zero.
    Tensors are treated as immutable once built; kernels only read them.
    """

    num_layers: int
    height: int
    width: int
    layout: Layout
    data: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.num_layers < 1 or self.height < 1 or self.width < 1:
            raise ValueError(
                f"invalid tensor dims {self.num_layers}x{self.height}x{self.width}"
            )
        if self.data.dtype != np.float32:
            raise TypeError(f"tensor data must be float32, got {self.data.dtype}")
        if self.data.ndim != 1:
            raise ValueError("tensor data must be a flat array")
        expect = self.padded_layers * self.height * self.width
        if self.data.shape[0] != expect:
            raise ValueError(
                f"data length {self.data.shape[0]} != expected {expect} for "
                f"{self.num_layers}x{self.height}x{self.width} {self.layout.value}"
            )

    @property
    def padded_layers(self) -> int:
        if self.layout is Layout.CHUNKED4:
            return padded_layer_count(self.num_layers)
        return self.num_layers

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.num_layers, self.height, self.width)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Tensor3":
        """Build a row-major tensor from a (layers, height, width) array."""
        if arr.ndim != 3:
            raise ValueError(f"expected a 3-D array, got shape {arr.shape}")
        flat = np.ascontiguousarray(arr, dtype=np.float32).reshape(-1)
        return cls(arr.shape[0], arr.shape[1], arr.shape[2], Layout.ROW_MAJOR, flat)

    def to_array(self) -> np.ndarray:
        """View a row-major tensor as (layers, height, width)."""
        if self.layout is not Layout.ROW_MAJOR:
            raise ValueError("to_array requires ROW_MAJOR layout")
        return self.data.reshape(self.num_layers, self.height, self.width)

    def chunk_view(self) -> np.ndarray:
        """View a chunked-4 tensor as (chunks, height, width, 4)."""
        if self.layout is not Layout.CHUNKED4:
            raise ValueError("chunk_view requires CHUNKED4 layout")
        return self.data.reshape(
            self.padded_layers // 4, self.height, self.width, 4
        )


def index_to_coord_row_major(
    x: int, width: int, height: int, num_layers: int | None = None
) -> ElemCoord:
    """Decode a flat row-major index into (m, h, w).

    w = x mod width; h = floor(x / width) mod height;
    m = floor(x / (width * height)).
    """
    if x < 0:
        raise IndexError(f"flat index {x} is negative")
    if num_layers is not None and x >= num_layers * height * width:
        raise IndexError(
            f"flat index {x} out of range for {num_layers}x{height}x{width}"
        )
    w = x % width
    h = (x // width) % height
    m = x // (width * height)
    return ElemCoord(m, h, w)


def index_to_coord_chunked4(
    x: int, width: int, height: int, num_layers: int | None = None
) -> ElemCoord:
    """Decode a flat chunked-4 index into (m, h, w).

    w = floor(x / 4) mod width; h = floor(x / (4 * width)) mod height;
    m = (x mod 4) + floor(x / (4 * width * height)) * 4.
    """
    if x < 0:
        raise IndexError(f"flat index {x} is negative")
    if num_layers is not None:
        if x >= padded_layer_count(num_layers) * height * width:
            raise IndexError(
                f"flat index {x} out of range for "
                f"{padded_layer_count(num_layers)}x{height}x{width}"
            )
    w = (x // 4) % width
    h = (x // (4 * width)) % height
    m = (x % 4) + (x // (4 * width * height)) * 4
    return ElemCoord(m, h, w)


def row_major_index(m: int, h: int, w: int, width: int, height: int) -> int:
    """Flat row-major index of element (m, h, w)."""
    return (m * height + h) * width + w


def chunked4_index(m: int, h: int, w: int, width: int, height: int) -> int:
    """Flat chunked-4 index of element (m, h, w)."""
    return ((m // 4 * height + h) * width + w) * 4 + m % 4


def reorder_to_chunked4(t: Tensor3) -> Tensor3:
    """Permute a row-major tensor into the chunked-4 layout.

    Element (m, h, w) of the input lands at the flat position whose
    chunked-4 decoding is (m, h, w); channel counts not divisible by four
    gain zero channels, which are neutral for the dot products downstream.
    """
    if t.layout is not Layout.ROW_MAJOR:
        raise ValueError("reorder_to_chunked4 requires a ROW_MAJOR input")
    padded = padded_layer_count(t.num_layers)
    arr = t.to_array()
    if padded != t.num_layers:
        pad = np.zeros((padded - t.num_layers, t.height, t.width), np.float32)
        arr = np.concatenate([arr, pad], axis=0)
    # (padded, H, W) -> (chunks, 4, H, W) -> (chunks, H, W, 4)
    chunked = np.ascontiguousarray(
        arr.reshape(padded // 4, 4, t.height, t.width).transpose(0, 2, 3, 1)
    )
    return Tensor3(
        t.num_layers, t.height, t.width, Layout.CHUNKED4, chunked.reshape(-1)
    )


def reorder_from_chunked4(t: Tensor3) -> Tensor3:
    """Inverse of reorder_to_chunked4; drops the zero-padded channels."""
    if t.layout is not Layout.CHUNKED4:
        raise ValueError("reorder_from_chunked4 requires a CHUNKED4 input")
    chunks = t.padded_layers // 4
    arr = t.data.reshape(chunks, t.height, t.width, 4).transpose(0, 3, 1, 2)
    arr = arr.reshape(t.padded_layers, t.height, t.width)[: t.num_layers]
    return Tensor3(
        t.num_layers,
        t.height,
        t.width,
        Layout.ROW_MAJOR,
        np.ascontiguousarray(arr).reshape(-1),
    )
