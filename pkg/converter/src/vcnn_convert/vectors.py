"""Test-vector emission: PPM inputs plus reference logits from the source.

Images are seeded pseudo-random pixels; the reference logits come from
running the TorchScript source itself on the mean-subtracted pixels, which
is exactly the tensor the engine reconstructs from the PPM and the model
header.  Pairs are deterministic given the seed.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .convert import DEFAULT_MEAN_RGB
from .extract import ConversionError


def write_ppm(path: str | Path, pixels: np.ndarray) -> None:
    h, w, c = pixels.shape
    assert c == 3 and pixels.dtype == np.uint8
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(pixels.tobytes())


def emit_test_vectors(
    source_path: str | Path,
    out_dir: str | Path,
    count: int = 20,
    seed: int = 0,
    input_shape: tuple[int, int, int] = (3, 224, 224),
    mean_rgb=DEFAULT_MEAN_RGB,
) -> list[tuple[Path, Path]]:
    """Write ``count`` (input.ppm, logits.txt) pairs; returns the paths."""
    if count < 1:
        raise ValueError("count must be >= 1")
    module = torch.jit.load(str(source_path), map_location="cpu").eval()
    # The reference output must be logits: a source ending in softmax would
    # emit probabilities, which the engine's logits can't be compared to.
    frozen = torch.jit.freeze(module)
    if any(n.kind() == "aten::softmax" for n in frozen.graph.nodes()):
        raise ConversionError(
            "test vectors need a logits-producing source; this graph "
            "applies softmax itself"
        )

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mean = np.asarray(mean_rgb, np.float32)
    channels, height, width = input_shape
    rng = np.random.default_rng(seed)
    pairs = []
    with torch.no_grad():
        for i in range(count):
            pixels = rng.integers(0, 256, (height, width, channels)).astype(np.uint8)
            img_path = out / f"input_{i:03d}.ppm"
            write_ppm(img_path, pixels)
            planes = pixels.transpose(2, 0, 1).astype(np.float32) - mean[:, None, None]
            x = torch.from_numpy(planes[None])
            logits = module(x).numpy().reshape(-1)
            ref_path = out / f"logits_{i:03d}.txt"
            ref_path.write_text(
                "\n".join(repr(float(v)) for v in logits) + "\n"
            )
            pairs.append((img_path, ref_path))
    (out / "vectors.json").write_text(json.dumps({
        "count": count,
        "seed": seed,
        "input_shape": list(input_shape),
        "mean_rgb": [float(v) for v in mean],
    }, indent=2) + "\n")
    return pairs
