import random

import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return random.Random(1234)
