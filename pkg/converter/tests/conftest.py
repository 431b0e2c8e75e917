from pathlib import Path

import pytest
import torch
import torchvision

DATA = Path(__file__).parent / "data"
REPO = Path(__file__).resolve().parents[2]


def build_squeezenet_fixture(path: Path, seed: int = 7) -> Path:
    """Random-weight SqueezeNet v1.0, conv1 padded by 2 so every pooling
    division is exact, traced and saved as TorchScript."""
    torch.manual_seed(seed)
    model = torchvision.models.squeezenet1_0(weights=None)
    model.features[0].padding = (2, 2)
    model.eval()
    with torch.no_grad():
        traced = torch.jit.trace(model, torch.randn(1, 3, 224, 224))
    torch.jit.save(traced, str(path))
    return path


@pytest.fixture(scope="session")
def squeezenet_ts(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("fixture") / "squeezenet_v10.pt"
    return build_squeezenet_fixture(path)
