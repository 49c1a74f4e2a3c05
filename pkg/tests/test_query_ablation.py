"""Query-sampling ablation on a longer toy context.

The far-horizon contrast between uniform and recency-bootstrap sampling
needs room for the token stream to drift, so this module uses a 1024-token
context with a 128-step continuation.
"""

import numpy as np
import pytest

from kvsculpt.attention import ModelShape
from kvsculpt.evaluate import attn_cosine_horizons
from kvsculpt.pipeline import gen_toy_cache, model_for_cache
from kvsculpt.toymodel import ToyModelConfig

SHAPE = ModelShape(num_layers=4, num_q_heads=4, num_kv_heads=2, head_dim=16)
N, T = 1024, 128
NEAR, FAR = 32, 128


@pytest.fixture(scope="module")
def horizon_results():
    rows = []
    for seed in range(5):
        cache = gen_toy_cache(ToyModelConfig(shape=SHAPE, vocab=64, seed=seed), N, T)
        model = model_for_cache(cache)
        uniform = attn_cosine_horizons(model, cache, "uniform", NEAR, FAR, seed=seed)
        bootstrap = attn_cosine_horizons(model, cache, "bootstrap", NEAR, FAR,
                                         seed=seed)
        rows.append((uniform, bootstrap))
    return rows


def test_uniform_beats_bootstrap_at_far_horizon(horizon_results):
    wins = sum(u[1] >= b[1] for u, b in horizon_results)
    assert wins >= 4


def test_cosines_in_meaningful_range(horizon_results):
    for u, b in horizon_results:
        for value in (*u, *b):
            assert 0.5 < value <= 1.0


def test_strategies_actually_differ(horizon_results):
    diffs = [abs(u[1] - b[1]) for u, b in horizon_results]
    assert max(diffs) > 1e-4
