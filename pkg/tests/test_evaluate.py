import math

import numpy as np
import pytest

from kvsculpt.attention import ModelShape
from kvsculpt.cache import CompressedHead, CompressedModelCache
from kvsculpt.evaluate import (attn_cosine_horizons, concentration_stats,
                               evaluate_compressed, kl_report,
                               layer_error_profile)
from kvsculpt.pipeline import gen_toy_cache, model_for_cache
from kvsculpt.toymodel import ToyModelConfig

SHAPE = ModelShape(num_layers=2, num_q_heads=2, num_kv_heads=1, head_dim=8)


@pytest.fixture(scope="module")
def toy_cache():
    return gen_toy_cache(ToyModelConfig(shape=SHAPE, vocab=32, seed=11), 48, 16)


@pytest.fixture(scope="module")
def toy_model(toy_cache):
    return model_for_cache(toy_cache)


def lossless_compressed(cache, m):
    n = cache.context_len
    heads = []
    for layer in range(cache.shape.num_layers):
        row = []
        for h in range(cache.shape.num_kv_heads):
            hc = cache.heads[layer][h]
            row.append(CompressedHead(
                k_c=hc.keys[:n - m].copy(), v_c=hc.values[:n - m].copy(),
                k_ret=hc.keys[n - m:].copy(), v_ret=hc.values[n - m:].copy(),
                k=n - m, m=m))
        heads.append(row)
    return CompressedModelCache(shape=cache.shape, rope=cache.rope,
                                context_len=n, m=m, heads=heads,
                                toy_config=cache.toy_config)


class TestKlReport:
    def test_identical_logits_zero(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(6, 10))
        stats = kl_report(logits, logits)
        np.testing.assert_array_equal(stats.kl_per_token, np.zeros(6))
        assert stats.kl_mean == 0.0

    def test_row_shift_invariance(self):
        # KL is zero iff rows agree up to an additive per-row constant
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(5, 8))
        shifted = logits + rng.normal(size=(5, 1))
        stats = kl_report(shifted, logits)
        assert stats.kl_mean < 1e-13
        bumped = logits.copy()
        bumped[2, 3] += 0.5  # non-constant perturbation must register
        assert kl_report(bumped, logits).kl_per_token[2] > 1e-4

    def test_uniform_vs_onehot_closed_form(self):
        # KL(uniform || delta-ish) via direct summation: scale a one-hot
        # logit row so the compressed distribution concentrates hard
        big = 50.0
        logits_full = np.zeros((1, 4))
        logits_comp = np.array([[big, 0.0, 0.0, 0.0]])
        # direct summation oracle
        p = np.full(4, 0.25)
        logq = logits_comp[0] - (big + math.log(1 + 3 * math.exp(-big)))
        expected = float(np.sum(p * (np.log(p) - logq)))
        stats = kl_report(logits_comp, logits_full)
        assert stats.kl_per_token[0] == pytest.approx(expected, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            kl_report(np.zeros((2, 3)), np.zeros((3, 3)))


class TestConcentrationStats:
    def test_paper_spike_profile(self):
        # one spike of 7.17 over a 128-token vector with mean 0.117 and 82%
        # of the mass in the top five entries
        total = 0.117 * 128
        top5_mass = 0.82 * total
        rest4 = (top5_mass - 7.17) / 4
        tail = (total - top5_mass) / 123
        v = np.array([7.17] + [rest4] * 4 + [tail] * 123)
        ratio, top5 = concentration_stats(v)
        assert ratio == pytest.approx(7.17 / 0.117, rel=1e-6)
        assert top5 == pytest.approx(0.82, rel=1e-6)

    def test_all_zero(self):
        assert concentration_stats(np.zeros(8)) == (0.0, 0.0)

    def test_short_vector(self):
        ratio, top5 = concentration_stats(np.array([1.0, 3.0]))
        assert ratio == pytest.approx(1.5)
        assert top5 == 1.0


class TestLayerProfile:
    def test_lossless_profile_zero(self, toy_model, toy_cache):
        comp = lossless_compressed(toy_cache, 8)
        profile = layer_error_profile(toy_model, toy_cache, comp,
                                      toy_cache.ref_tokens, 8)
        np.testing.assert_allclose(profile, 0.0, atol=1e-12)

    def test_nonnegative_and_shaped(self, toy_model, toy_cache):
        comp = lossless_compressed(toy_cache, 8)
        for layer in range(2):
            comp.heads[layer][0].v_c[0, 0] += 0.05
        profile = layer_error_profile(toy_model, toy_cache, comp,
                                      toy_cache.ref_tokens, 8)
        assert profile.shape == (2,)
        assert np.all(profile >= 0)
        assert profile.max() > 0


class TestHorizons:
    def test_oracle_strategy_cosine_one(self, toy_model, toy_cache):
        near, far = attn_cosine_horizons(toy_model, toy_cache, "oracle", 4, 12)
        assert near == pytest.approx(1.0, abs=1e-12)
        assert far == pytest.approx(1.0, abs=1e-12)

    def test_cosines_bounded(self, toy_model, toy_cache):
        for strategy in ("uniform", "bootstrap", "random"):
            near, far = attn_cosine_horizons(toy_model, toy_cache, strategy, 4, 12)
            assert -1.0 <= near <= 1.0
            assert -1.0 <= far <= 1.0

    def test_horizon_validation(self, toy_model, toy_cache):
        with pytest.raises(ValueError):
            attn_cosine_horizons(toy_model, toy_cache, "uniform", 0, 8)
        with pytest.raises(ValueError):
            attn_cosine_horizons(toy_model, toy_cache, "uniform", 8, 8)
        with pytest.raises(ValueError):
            attn_cosine_horizons(toy_model, toy_cache, "uniform", 4, 999)


class TestEvaluateCompressed:
    def test_lossless_bundle(self, toy_model, toy_cache):
        comp = lossless_compressed(toy_cache, 8)
        report = evaluate_compressed(toy_model, toy_cache, comp)
        assert report.kl_mean <= 1e-10
        assert len(report.kl_per_token) == 16
        assert report.layer_mse_profile.shape == (2,)
        assert -1 <= report.attn_cos_near <= 1

    def test_json_serialization(self, toy_model, toy_cache):
        import json
        comp = lossless_compressed(toy_cache, 8)
        report = evaluate_compressed(toy_model, toy_cache, comp)
        obj = json.loads(report.to_json())
        assert set(obj) == {"kl_mean", "kl_per_token", "layer_mse_profile",
                            "kl_max_over_mean", "kl_top5_fraction",
                            "attn_cos_near", "attn_cos_far"}

    def test_shape_mismatch_rejected(self, toy_model, toy_cache):
        other_shape = ModelShape(num_layers=1, num_q_heads=2, num_kv_heads=1,
                                 head_dim=8)
        other = gen_toy_cache(ToyModelConfig(shape=other_shape, vocab=32, seed=1),
                              24, 4)
        comp = lossless_compressed(other, 4)
        with pytest.raises(ValueError):
            evaluate_compressed(toy_model, toy_cache, comp)
