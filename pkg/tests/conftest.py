import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from trace_edges.tensor_io import AttentionBlock, AttentionStack


def random_stochastic(rng, n: int, dtype=np.float32) -> np.ndarray:
    """Random row-stochastic matrix with strictly positive entries."""
    raw = rng.uniform(0.05, 1.0, size=(n, n))
    raw /= raw.sum(axis=1, keepdims=True)
    return raw.astype(dtype)


def random_stack(rng, n_steps=3, widths=(2, 4)) -> AttentionStack:
    timesteps = list(range(0, 100 * n_steps, 100))
    blocks = []
    for _ in range(n_steps):
        per_t = [
            AttentionBlock(width=w, map=random_stochastic(rng, w * w))
            for w in widths
        ]
        blocks.append(per_t)
    return AttentionStack(timesteps=timesteps, blocks=blocks)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
