"""Conversion driver: TorchScript file in, engine model file plus manifest out.

The manifest records the source hash, the per-node shape table, and per-unit
weight checksums both before and after the offline kernel reordering, so a
written model can be re-verified without re-running the conversion.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from .extract import ConversionError, UnsupportedOperatorError, extract_network
from .modelfile import (
    ConvDesc,
    FireDesc,
    PoolDesc,
    SoftmaxDesc,
    payload_slices,
    reorder_kernel,
    serialize,
)

DEFAULT_MEAN_RGB = (123.68, 116.779, 103.939)

__all__ = [
    "ConversionError",
    "UnsupportedOperatorError",
    "DEFAULT_MEAN_RGB",
    "convert",
    "verify_manifest",
]


def _sha256(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def _node_summary(node) -> dict:
    if isinstance(node, ConvDesc):
        u = node.unit
        return {
            "type": "conv", "name": node.name, "kernel": u.kernel_size,
            "stride": u.stride, "pad": u.pad, "in": u.in_channels,
            "out": u.out_channels, "relu": node.relu,
        }
    if isinstance(node, FireDesc):
        return {
            "type": "fire", "name": node.name,
            "in": node.squeeze1x1.in_channels,
            "squeeze": node.squeeze1x1.out_channels,
            "expand1x1": node.expand1x1.out_channels,
            "expand3x3": node.expand3x3.out_channels,
        }
    if isinstance(node, PoolDesc):
        return {
            "type": "pool", "name": node.name, "window": node.window,
            "stride": node.stride, "kind": node.kind,
        }
    if isinstance(node, SoftmaxDesc):
        return {"type": "softmax", "name": node.name}
    raise TypeError(type(node).__name__)


def load_source(path: str | Path) -> torch.jit.ScriptModule:
    try:
        return torch.jit.load(str(path), map_location="cpu")
    except Exception as e:  # torch raises several unrelated types here
        raise ConversionError(f"{path}: not a loadable TorchScript file: {e}") from e


def convert(
    source_path: str | Path,
    out_path: str | Path,
    manifest_path: str | Path | None = None,
    input_shape: tuple[int, int, int] = (3, 224, 224),
    mean_rgb=DEFAULT_MEAN_RGB,
) -> dict:
    """Convert a TorchScript model; returns the manifest dict."""
    source_blob = Path(source_path).read_bytes()
    module = load_source(source_path)
    net = extract_network(module, input_shape)
    blob = serialize(net, mean_rgb)
    Path(out_path).write_bytes(blob)

    slices = payload_slices(net, blob)
    checks = {}
    for unit_id, unit in net.conv_units():
        off, length = slices[unit_id]
        pre = (unit.kernel.astype("<f4").tobytes()
               + unit.bias.astype("<f4").tobytes())
        post = blob[off:off + length]
        assert post == (reorder_kernel(unit.kernel).astype("<f4").tobytes()
                        + unit.bias.astype("<f4").tobytes())
        checks[unit_id] = {
            "pre_reorder_sha256": _sha256(pre),
            "post_reorder_sha256": _sha256(post),
            "offset": off,
            "length": length,
        }
    manifest = {
        "source_sha256": _sha256(source_blob),
        "model_sha256": _sha256(blob),
        "input_shape": list(input_shape),
        "mean_rgb": [float(v) for v in np.asarray(mean_rgb, np.float32)],
        "nodes": [_node_summary(n) for n in net.nodes],
        "shape_table": [
            {"name": name, "shape": list(shape)}
            for name, shape in net.shape_table()
        ],
        "weights": checks,
    }
    if manifest_path is not None:
        Path(manifest_path).write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def verify_manifest(model_path: str | Path, manifest: dict | str | Path) -> None:
    """Recompute the post-reorder checksums of a written model against its
    manifest; raises ConversionError on any mismatch."""
    if not isinstance(manifest, dict):
        manifest = json.loads(Path(manifest).read_text())
    blob = Path(model_path).read_bytes()
    if _sha256(blob) != manifest["model_sha256"]:
        raise ConversionError(f"{model_path}: model hash mismatch")
    for unit_id, entry in manifest["weights"].items():
        piece = blob[entry["offset"]:entry["offset"] + entry["length"]]
        if _sha256(piece) != entry["post_reorder_sha256"]:
            raise ConversionError(f"{model_path}: checksum mismatch for {unit_id}")
