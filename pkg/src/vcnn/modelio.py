"""Binary model format, loader/validator, and raw image input.

Model files carry the network topology, a per-node output shape table,
preprocessing means, and per-convolution payloads whose kernels are stored
already reordered into the chunked-4 input-channel order, so the engine
never permutes weights at run time.  The byte-exact layout is documented
in docs/model_format.md.  Input images are binary PPM (P6).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .kernels import (
    ConvSpec,
    PlainWeightBank,
    WeightBank,
    weights_from_plain,
    weights_to_plain,
)
from .layers import FireSpec, FireWeights, PoolKind, PoolSpec
from .network import (
    ConvNode,
    FireNode,
    NetworkDef,
    Node,
    PoolNode,
    ShapeError,
    SoftmaxNode,
    shape_check,
)
from .tensor import Layout, Tensor3

MAGIC = b"VCNN"
VERSION = 1

_NODE_CONV = 1
_NODE_FIRE = 2
_NODE_POOL = 3
_NODE_SOFTMAX = 4

_POOL_MAX = 1
_POOL_AVG = 2


class ModelFormatError(ValueError):
    """Base class for malformed model files."""


class BadMagicError(ModelFormatError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class TruncatedModelError(ModelFormatError):
    pass


class TrailingDataError(ModelFormatError):
    pass


class BadNodeError(ModelFormatError):
    pass


class ShapeTableError(ModelFormatError):
    """Declared shape table disagrees with the propagated shapes."""


class ImageFormatError(ValueError):
    pass


@dataclass
class LoadedModel:
    net: NetworkDef
    weights: dict[str, Union[WeightBank, FireWeights]]
    mean_rgb: np.ndarray


def reorder_kernels_offline(plain: PlainWeightBank) -> WeightBank:
    """The offline kernel permutation: plain (out, in, K, K) kernels into
    the flat chunked-4 input-channel order the vectorized kernels read."""
    return weights_from_plain(plain)


def plain_kernels(bank: WeightBank) -> PlainWeightBank:
    """Inverse of reorder_kernels_offline (drops zero-padded channels)."""
    return weights_to_plain(bank)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.blob):
            raise TruncatedModelError(
                f"{self.path}: truncated while reading {what} "
                f"(need {n} bytes at offset {self.off}, have {len(self.blob) - self.off})"
            )
        out = self.blob[self.off:self.off + n]
        self.off += n
        return out

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def f32s(self, n: int, what: str) -> np.ndarray:
        raw = self.take(4 * n, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float32)


def _fire_is_canonical(spec: FireSpec) -> bool:
    sq, e1, e3 = spec.squeeze1x1, spec.expand1x1, spec.expand3x3
    return (
        (sq.kernel_size, sq.stride, sq.pad) == (1, 1, 0)
        and (e1.kernel_size, e1.stride, e1.pad) == (1, 1, 0)
        and (e3.kernel_size, e3.stride, e3.pad) == (3, 1, 1)
    )


def _canonical_fire_spec(in_layers: int, squeeze: int, e1: int, e3: int) -> FireSpec:
    return FireSpec(
        ConvSpec(1, 1, 0, in_layers, squeeze),
        ConvSpec(1, 1, 0, squeeze, e1),
        ConvSpec(3, 1, 1, squeeze, e3),
    )


def _bank_payload(bank: WeightBank) -> bytes:
    return bank.kernels.astype("<f4").tobytes() + bank.biases.astype("<f4").tobytes()


def save_model(
    path: str | Path,
    net: NetworkDef,
    weights: dict[str, Union[WeightBank, FireWeights]],
    mean_rgb,
) -> None:
    """Write a model file; inverse of load_model, bit-exact on round trip."""
    mean = np.asarray(mean_rgb, dtype=np.float32)
    if mean.shape != (3,):
        raise ValueError("mean_rgb must have three components")
    shapes = dict(shape_check(net))

    head = bytearray()
    head += MAGIC
    head += struct.pack("<I", VERSION)
    head += mean.astype("<f4").tobytes()
    head += struct.pack("<III", *net.input_shape)
    head += struct.pack("<I", len(net.nodes))
    payload = bytearray()
    for node in net.nodes:
        name = node.name.encode("utf-8")
        if isinstance(node, ConvNode):
            head += struct.pack("<BH", _NODE_CONV, len(name)) + name
            s = node.spec
            head += struct.pack(
                "<IIIIIB", s.kernel_size, s.stride, s.pad,
                s.in_layers, s.out_layers, 1 if node.relu else 0,
            )
            payload += _bank_payload(weights[node.name])
        elif isinstance(node, FireNode):
            if not _fire_is_canonical(node.spec):
                raise ValueError(
                    f"{node.name}: only canonical fire blocks "
                    f"(1x1 squeeze, 1x1 + 3x3/P1 expands) are serializable"
                )
            head += struct.pack("<BH", _NODE_FIRE, len(name)) + name
            s = node.spec
            head += struct.pack(
                "<IIII", s.in_layers, s.squeeze1x1.out_layers,
                s.expand1x1.out_layers, s.expand3x3.out_layers,
            )
            fw = weights[node.name]
            payload += _bank_payload(fw.squeeze1x1)
            payload += _bank_payload(fw.expand1x1)
            payload += _bank_payload(fw.expand3x3)
        elif isinstance(node, PoolNode):
            head += struct.pack("<BH", _NODE_POOL, len(name)) + name
            kind = _POOL_MAX if node.spec.kind is PoolKind.MAX else _POOL_AVG
            head += struct.pack("<IIB", node.spec.window, node.spec.stride, kind)
        elif isinstance(node, SoftmaxNode):
            head += struct.pack("<BH", _NODE_SOFTMAX, len(name)) + name
        else:
            raise ValueError(f"unserializable node type {type(node).__name__}")
        head += struct.pack("<III", *shapes[node.name])
    Path(path).write_bytes(bytes(head) + bytes(payload))


def _read_bank(r: _Reader, spec: ConvSpec, what: str) -> WeightBank:
    n_kernel = spec.out_layers * spec.kernel_size ** 2 * spec.padded_in_layers
    kernels = r.f32s(n_kernel, f"{what} kernels")
    biases = r.f32s(spec.out_layers, f"{what} biases")
    return WeightBank(spec, kernels, biases)


def load_model(path: str | Path) -> LoadedModel:
    """Load and fully validate a model file.

    Distinct diagnostics: BadMagicError, UnsupportedVersionError,
    TruncatedModelError, TrailingDataError, BadNodeError, ShapeTableError.
    """
    path = str(path)
    r = _Reader(Path(path).read_bytes(), path)
    if len(r.blob) < 4 or r.take(4, "magic") != MAGIC:
        raise BadMagicError(f"{path}: not a model file (bad magic)")
    version = r.u32("version")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    mean = r.f32s(3, "mean")
    input_shape = struct.unpack("<III", r.take(12, "input shape"))
    n_nodes = r.u32("node count")

    nodes: list[Node] = []
    declared: list[tuple[str, tuple[int, int, int]]] = []
    conv_specs: list[tuple[str, ConvSpec | FireSpec]] = []
    for idx in range(n_nodes):
        ntype = r.u8(f"node {idx} type")
        name_len = r.u16(f"node {idx} name length")
        name = r.take(name_len, f"node {idx} name").decode("utf-8", "replace")
        try:
            if ntype == _NODE_CONV:
                k, s, p, cin, cout = struct.unpack(
                    "<IIIII", r.take(20, f"{name} conv params")
                )
                has_relu = r.u8(f"{name} relu flag") != 0
                spec = ConvSpec(k, s, p, cin, cout)
                nodes.append(ConvNode(name, spec, has_relu))
                conv_specs.append((name, spec))
            elif ntype == _NODE_FIRE:
                cin, sq, e1, e3 = struct.unpack(
                    "<IIII", r.take(16, f"{name} fire params")
                )
                spec = _canonical_fire_spec(cin, sq, e1, e3)
                nodes.append(FireNode(name, spec))
                conv_specs.append((name, spec))
            elif ntype == _NODE_POOL:
                window, stride, kind = struct.unpack(
                    "<IIB", r.take(9, f"{name} pool params")
                )
                if kind not in (_POOL_MAX, _POOL_AVG):
                    raise BadNodeError(f"{path}: {name}: unknown pool kind {kind}")
                nodes.append(PoolNode(name, PoolSpec(
                    window, stride,
                    PoolKind.MAX if kind == _POOL_MAX else PoolKind.AVG,
                )))
            elif ntype == _NODE_SOFTMAX:
                nodes.append(SoftmaxNode(name))
            else:
                raise BadNodeError(f"{path}: node {idx}: unknown node type {ntype}")
        except ModelFormatError:
            raise
        except ValueError as e:
            raise BadNodeError(f"{path}: {name or idx}: {e}") from e
        declared.append((name, struct.unpack("<III", r.take(12, f"{name} shape"))))

    try:
        net = NetworkDef(tuple(input_shape), tuple(nodes))
        computed = shape_check(net)
    except (ShapeError, ValueError) as e:
        raise ShapeTableError(f"{path}: inconsistent network: {e}") from e
    if computed != declared:
        for (name, want), (_, got) in zip(declared, computed):
            if want != got:
                raise ShapeTableError(
                    f"{path}: {name}: declared shape {tuple(want)} != computed {got}"
                )
        raise ShapeTableError(f"{path}: shape table mismatch")

    weights: dict[str, Union[WeightBank, FireWeights]] = {}
    for name, spec in conv_specs:
        if isinstance(spec, ConvSpec):
            weights[name] = _read_bank(r, spec, name)
        else:
            weights[name] = FireWeights(
                _read_bank(r, spec.squeeze1x1, f"{name}.squeeze1x1"),
                _read_bank(r, spec.expand1x1, f"{name}.expand1x1"),
                _read_bank(r, spec.expand3x3, f"{name}.expand3x3"),
            )
    if r.off != len(r.blob):
        raise TrailingDataError(
            f"{path}: {len(r.blob) - r.off} unexpected bytes after payload"
        )
    return LoadedModel(net, weights, mean)


# ---------------------------------------------------------------------------
# PPM input images
# ---------------------------------------------------------------------------


def _ppm_token(blob: bytes, off: int) -> tuple[bytes, int]:
    # Skip whitespace and '#' comments, return the next token.
    n = len(blob)
    while off < n:
        c = blob[off:off + 1]
        if c == b"#":
            while off < n and blob[off:off + 1] != b"\n":
                off += 1
        elif c.isspace():
            off += 1
        else:
            break
    start = off
    while off < n and not blob[off:off + 1].isspace():
        off += 1
    if start == off:
        raise ImageFormatError("unexpected end of PPM header")
    return blob[start:off], off


def load_image(
    path: str | Path,
    mean_rgb,
    expected_size: tuple[int, int] = (224, 224),
) -> Tensor3:
    """Read a binary PPM (P6, maxval 255), subtract per-channel means, and
    return a row-major (3, H, W) tensor with layers ordered R, G, B."""
    blob = Path(path).read_bytes()
    if blob[:2] != b"P6":
        raise ImageFormatError(f"{path}: not a binary PPM (P6) file")
    off = 2
    fields = []
    for what in ("width", "height", "maxval"):
        try:
            tok, off = _ppm_token(blob, off)
        except ImageFormatError as e:
            raise ImageFormatError(f"{path}: {e}") from e
        if not tok.isdigit():
            raise ImageFormatError(f"{path}: malformed {what} field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"{path}: unsupported maxval {maxval}")
    if (height, width) != expected_size:
        raise ImageFormatError(
            f"{path}: image is {width}x{height}, expected "
            f"{expected_size[1]}x{expected_size[0]}"
        )
    off += 1  # single whitespace after maxval
    pixels = blob[off:]
    if len(pixels) != width * height * 3:
        raise ImageFormatError(
            f"{path}: pixel payload is {len(pixels)} bytes, "
            f"expected {width * height * 3}"
        )
    mean = np.asarray(mean_rgb, dtype=np.float32)
    if mean.shape != (3,):
        raise ValueError("mean_rgb must have three components")
    arr = np.frombuffer(pixels, dtype=np.uint8).reshape(height, width, 3)
    planes = arr.transpose(2, 0, 1).astype(np.float32) - mean[:, None, None]
    return Tensor3(3, height, width, Layout.ROW_MAJOR, planes.reshape(-1).astype(np.float32))
