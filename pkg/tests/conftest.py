import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

torch.manual_seed(0)


@pytest.fixture(scope="session")
def lpips_random():
    from rgb2thermal.perceptual import LpipsDistance

    return LpipsDistance(backbone="random", seed=0)
