"""Conversion tests: golden byte-exactness, SqueezeNet extraction, diagnostics."""

import json

import numpy as np
import pytest
import torch

from conftest import DATA, REPO
from vcnn_convert import (
    ConversionError,
    UnsupportedOperatorError,
    convert,
    extract_network,
    verify_manifest,
)
from vcnn_convert.modelfile import (
    ConvDesc,
    FireDesc,
    PoolDesc,
    SoftmaxDesc,
    reorder_kernel,
)


def test_golden_micro_model_converts_byte_exactly(tmp_path):
    out = tmp_path / "micro.vcnn"
    manifest = convert(
        DATA / "golden_micro.pt", out,
        input_shape=(3, 1, 1), mean_rgb=(0.0, 0.0, 0.0),
    )
    golden = (REPO / "tests" / "data" / "golden_micro.vcnn").read_bytes()
    assert out.read_bytes() == golden
    assert [n["name"] for n in manifest["nodes"]] == ["conv1", "conv2", "softmax"]
    verify_manifest(out, manifest)


def test_manifest_round_trip_and_tamper_detection(tmp_path):
    out = tmp_path / "micro.vcnn"
    mpath = tmp_path / "micro.manifest.json"
    convert(DATA / "golden_micro.pt", out, manifest_path=mpath,
            input_shape=(3, 1, 1), mean_rgb=(0.0, 0.0, 0.0))
    verify_manifest(out, mpath)
    manifest = json.loads(mpath.read_text())
    blob = bytearray(out.read_bytes())
    some = next(iter(manifest["weights"].values()))
    blob[some["offset"]] ^= 0xFF
    out.write_bytes(bytes(blob))
    with pytest.raises(ConversionError, match="mismatch"):
        verify_manifest(out, mpath)


def test_squeezenet_extraction_structure(squeezenet_ts):
    net = extract_network(torch.jit.load(str(squeezenet_ts)), (3, 224, 224))
    kinds = [type(n).__name__ for n in net.nodes]
    assert kinds.count("ConvDesc") == 2
    assert kinds.count("FireDesc") == 8
    assert kinds.count("PoolDesc") == 4  # 3 max pools + global average
    assert kinds.count("SoftmaxDesc") == 1  # appended behind the logits
    names = [n.name for n in net.nodes]
    assert names[0] == "conv1" and "conv10" in names
    assert [n.name for n in net.nodes if isinstance(n, FireDesc)] == [
        f"fire{i}" for i in range(2, 10)
    ]
    table = dict(net.shape_table())
    assert table["conv1"] == (96, 111, 111)
    assert table["conv10"] == (1000, 13, 13)
    assert table["softmax"] == (1000, 1, 1)
    fire9 = next(n for n in net.nodes if n.name == "fire9")
    assert fire9.squeeze1x1.out_channels == 64
    assert fire9.expand3x3.kernel.shape == (256, 64, 3, 3)
    assert fire9.expand3x3.pad == 1


def test_squeezenet_converts_and_verifies(squeezenet_ts, tmp_path):
    out = tmp_path / "sq.vcnn"
    manifest = convert(squeezenet_ts, out, manifest_path=tmp_path / "m.json")
    assert len(manifest["nodes"]) == 15
    assert len(manifest["weights"]) == 26  # 2 convs + 8 fires x 3
    verify_manifest(out, tmp_path / "m.json")
    # deterministic: converting again yields identical bytes
    out2 = tmp_path / "sq2.vcnn"
    convert(squeezenet_ts, out2)
    assert out.read_bytes() == out2.read_bytes()


def test_reorder_kernel_layout():
    plain = np.arange(2 * 6 * 1 * 1, dtype=np.float32).reshape(2, 6, 1, 1)
    flat = reorder_kernel(plain)
    # per output channel: 6 input channels padded to 8, grouped in fours
    assert flat.tolist() == [0, 1, 2, 3, 4, 5, 0, 0, 6, 7, 8, 9, 10, 11, 0, 0]


def test_corrupt_source_diagnostic(tmp_path):
    bad = tmp_path / "bad.pt"
    bad.write_bytes(b"this is not a torchscript archive")
    with pytest.raises(ConversionError, match="TorchScript"):
        convert(bad, tmp_path / "out.vcnn")


def test_unsupported_operator_is_named(tmp_path):
    class Odd(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.c = torch.nn.Conv2d(3, 4, 1)

        def forward(self, x):
            return torch.sigmoid(self.c(x))

    with torch.no_grad():
        ts = torch.jit.trace(Odd().eval(), torch.randn(1, 3, 1, 1))
    path = tmp_path / "odd.pt"
    torch.jit.save(ts, str(path))
    with pytest.raises(UnsupportedOperatorError, match="aten::sigmoid"):
        convert(path, tmp_path / "out.vcnn", input_shape=(3, 1, 1))


def test_channel_mismatch_diagnostic(tmp_path):
    with pytest.raises(ConversionError, match="channels"):
        convert(DATA / "golden_micro.pt", tmp_path / "out.vcnn",
                input_shape=(4, 1, 1))
