import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vaecast.data import mackey_glass, split_and_window
from vaecast.model import ModelConfig
from vaecast.training import TrainConfig, train


@pytest.fixture(scope="session")
def tiny_split():
    return split_and_window(mackey_glass(1200), history_size=16, horizon=8)


@pytest.fixture(scope="session")
def tiny_run(tiny_split):
    """A small but genuinely trained recurrent model on the synthetic series."""
    cfg = ModelConfig.create("rnn", 16, sample_size=4)
    tc = TrainConfig(max_steps=400, patience_steps=400, batch_size=16,
                     eval_every=100, val_num_samples=50, seed=1)
    ckpt, records = train(cfg, tiny_split, tc)
    return ckpt, records
