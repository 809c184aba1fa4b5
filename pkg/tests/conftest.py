import pytest
import torch

from attrfill.fixture import generate_fixture
from attrfill.networks import NetConfig, init_bundle


@pytest.fixture(scope="session")
def fixture_dataset(tmp_path_factory):
    """24 procedural faces plus their annotation file."""
    root = tmp_path_factory.mktemp("faces")
    attr_path = generate_fixture(str(root), 24, seed=11)
    return str(root), attr_path


@pytest.fixture(scope="session")
def toy_bundle():
    cfg = NetConfig(image_size=32, patch_size=14, n_attributes=2,
                    base_channels=8, n_res_blocks=2)
    return init_bundle(cfg, seed=3)


@pytest.fixture
def rand_images():
    g = torch.Generator().manual_seed(7)
    return (torch.rand(4, 3, 32, 32, generator=g) * 2 - 1)
