"""Writer for the engine's binary model format.

Implements docs/model_format.md from the engine repository byte for byte:
little-endian throughout; header (magic, version, means, input shape, node
records with a per-node output shape table) followed by the per-convolution
payloads whose kernels are already in the chunked-4 input-channel order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"VCNN"
VERSION = 1

NODE_CONV = 1
NODE_FIRE = 2
NODE_POOL = 3
NODE_SOFTMAX = 4

POOL_MAX = 1
POOL_AVG = 2


@dataclass
class ConvUnit:
    """One convolution: plain kernels (out, in, K, K) plus bias."""

    kernel: np.ndarray
    bias: np.ndarray
    stride: int = 1
    pad: int = 0

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.kernel.shape[2]

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        k, s, p = self.kernel_size, self.stride, self.pad
        return ((h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)


@dataclass
class ConvDesc:
    name: str
    unit: ConvUnit
    relu: bool


@dataclass
class FireDesc:
    name: str
    squeeze1x1: ConvUnit
    expand1x1: ConvUnit
    expand3x3: ConvUnit

    def subunits(self):
        yield "squeeze1x1", self.squeeze1x1
        yield "expand1x1", self.expand1x1
        yield "expand3x3", self.expand3x3


@dataclass
class PoolDesc:
    name: str
    window: int
    stride: int
    kind: str  # "max" | "avg"


@dataclass
class SoftmaxDesc:
    name: str


@dataclass
class NetDescription:
    input_shape: tuple[int, int, int]
    nodes: list = field(default_factory=list)

    def shape_table(self) -> list[tuple[str, tuple[int, int, int]]]:
        c, h, w = self.input_shape
        table = []
        for node in self.nodes:
            if isinstance(node, ConvDesc):
                h, w = node.unit.out_hw(h, w)
                c = node.unit.out_channels
            elif isinstance(node, FireDesc):
                h, w = node.squeeze1x1.out_hw(h, w)
                c = node.expand1x1.out_channels + node.expand3x3.out_channels
            elif isinstance(node, PoolDesc):
                h = (h - node.window) // node.stride + 1
                w = (w - node.window) // node.stride + 1
            table.append((node.name, (c, h, w)))
        return table

    def conv_units(self) -> list[tuple[str, ConvUnit]]:
        units = []
        for node in self.nodes:
            if isinstance(node, ConvDesc):
                units.append((node.name, node.unit))
            elif isinstance(node, FireDesc):
                units.extend(
                    (f"{node.name}.{sub}", u) for sub, u in node.subunits()
                )
        return units


def reorder_kernel(plain: np.ndarray) -> np.ndarray:
    """Offline permutation: (out, in, K, K) kernels into the flat layout the
    engine's vectorized kernels read (per output channel: K x K spatial
    positions, input channels grouped in fours, zero-padded to a multiple
    of four)."""
    out, cin, k, _ = plain.shape
    padded = (cin + 3) // 4 * 4
    buf = np.zeros((out, k, k, padded), np.float32)
    buf[:, :, :, :cin] = plain.astype(np.float32).transpose(0, 2, 3, 1)
    return buf.reshape(-1)


def unit_payload(unit: ConvUnit) -> bytes:
    return (
        reorder_kernel(unit.kernel).astype("<f4").tobytes()
        + unit.bias.astype("<f4").tobytes()
    )


def serialize(net: NetDescription, mean_rgb) -> bytes:
    mean = np.asarray(mean_rgb, np.float32)
    shapes = dict(net.shape_table())

    head = bytearray()
    head += MAGIC
    head += struct.pack("<I", VERSION)
    head += mean.astype("<f4").tobytes()
    head += struct.pack("<III", *net.input_shape)
    head += struct.pack("<I", len(net.nodes))
    payload = bytearray()
    for node in net.nodes:
        name = node.name.encode("utf-8")
        if isinstance(node, ConvDesc):
            u = node.unit
            head += struct.pack("<BH", NODE_CONV, len(name)) + name
            head += struct.pack(
                "<IIIIIB", u.kernel_size, u.stride, u.pad,
                u.in_channels, u.out_channels, 1 if node.relu else 0,
            )
            payload += unit_payload(u)
        elif isinstance(node, FireDesc):
            head += struct.pack("<BH", NODE_FIRE, len(name)) + name
            head += struct.pack(
                "<IIII", node.squeeze1x1.in_channels,
                node.squeeze1x1.out_channels,
                node.expand1x1.out_channels, node.expand3x3.out_channels,
            )
            for _, u in node.subunits():
                payload += unit_payload(u)
        elif isinstance(node, PoolDesc):
            head += struct.pack("<BH", NODE_POOL, len(name)) + name
            kind = POOL_MAX if node.kind == "max" else POOL_AVG
            head += struct.pack("<IIB", node.window, node.stride, kind)
        elif isinstance(node, SoftmaxDesc):
            head += struct.pack("<BH", NODE_SOFTMAX, len(name)) + name
        else:
            raise TypeError(f"unserializable node {type(node).__name__}")
        head += struct.pack("<III", *shapes[node.name])
    return bytes(head) + bytes(payload)


def payload_slices(net: NetDescription, blob: bytes) -> dict[str, tuple[int, int]]:
    """(offset, length) of each convolution unit's payload inside a
    serialized model, derived from the description."""
    header_len = len(blob) - sum(
        (u.out_channels * u.kernel_size ** 2 * ((u.in_channels + 3) // 4 * 4)
         + u.out_channels) * 4
        for _, u in net.conv_units()
    )
    slices = {}
    off = header_len
    for unit_id, u in net.conv_units():
        n = (u.out_channels * u.kernel_size ** 2
             * ((u.in_channels + 3) // 4 * 4) + u.out_channels) * 4
        slices[unit_id] = (off, n)
        off += n
    return slices
