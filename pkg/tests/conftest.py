import numpy as np
import pytest
import torch

import semagen as sg


@pytest.fixture(autouse=True)
def _fixed_seed():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture(scope="session")
def tiny_cfg():
    return sg.tiny_config(seed=0)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_cfg):
    return sg.build_dataset(tiny_cfg.data, seed=0)
