"""Regenerate the golden micro-model pair.

Two 1x1 convolutions over a 3x1x1 input plus a softmax head, with weights
fixed by explicit formulas.  Writes:

  converter/tests/data/golden_micro.pt    -- TorchScript source
  tests/data/golden_micro.vcnn            -- expected converter output
  tests/data/golden_micro_plain.npz       -- plain weights, for the engine's
                                             own reorder-and-save cross-check

The committed copies are authoritative; rerun this only to regenerate them
deliberately (conversion must stay byte-identical).
"""

from pathlib import Path

import numpy as np
import torch

from vcnn_convert import convert

REPO = Path(__file__).resolve().parents[2]
GOLDEN_MEAN = (0.0, 0.0, 0.0)
GOLDEN_INPUT_SHAPE = (3, 1, 1)


class Micro(torch.nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = torch.nn.Conv2d(3, 8, 1)
        self.conv2 = torch.nn.Conv2d(8, 4, 1)

    def forward(self, x):
        x = torch.relu(self.conv1(x))
        x = self.conv2(x)
        return torch.softmax(x, dim=1)


def fixed_weights():
    w1 = np.empty((8, 3, 1, 1), np.float32)
    for o in range(8):
        for i in range(3):
            w1[o, i, 0, 0] = (o - 2 * i) / 8.0
    b1 = (np.arange(8, dtype=np.float32) / 16.0) - 0.2
    w2 = np.empty((4, 8, 1, 1), np.float32)
    for o in range(4):
        for i in range(8):
            w2[o, i, 0, 0] = ((o * 8 + i) % 5 - 2) / 6.0
    b2 = (np.arange(4, dtype=np.float32) - 1.5) / 10.0
    return w1, b1, w2, b2


def main():
    w1, b1, w2, b2 = fixed_weights()
    model = Micro()
    with torch.no_grad():
        model.conv1.weight.copy_(torch.from_numpy(w1))
        model.conv1.bias.copy_(torch.from_numpy(b1))
        model.conv2.weight.copy_(torch.from_numpy(w2))
        model.conv2.bias.copy_(torch.from_numpy(b2))
    model.eval()
    with torch.no_grad():
        traced = torch.jit.trace(model, torch.ones(1, 3, 1, 1))

    src = REPO / "converter" / "tests" / "data" / "golden_micro.pt"
    src.parent.mkdir(parents=True, exist_ok=True)
    torch.jit.save(traced, str(src))

    out = REPO / "tests" / "data" / "golden_micro.vcnn"
    out.parent.mkdir(parents=True, exist_ok=True)
    convert(src, out, input_shape=GOLDEN_INPUT_SHAPE, mean_rgb=GOLDEN_MEAN)

    np.savez(
        REPO / "tests" / "data" / "golden_micro_plain.npz",
        conv1_kernel=w1, conv1_bias=b1, conv2_kernel=w2, conv2_bias=b2,
    )
    print(f"wrote {src} ({src.stat().st_size} bytes)")
    print(f"wrote {out} ({out.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
