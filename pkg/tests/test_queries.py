import numpy as np
import pytest

from kvsculpt.queries import (build_training_queries, sample_synthetic_queries,
                              stationarity_report)
from kvsculpt.rope import RopeConfig, rope_apply, rope_apply_rows, rope_invert

CFG = RopeConfig(head_dim=8)


def random_context(n, d=8, seed=0, heads=2):
    rng = np.random.default_rng(seed)
    return [rng.normal(size=(n, d)) for _ in range(heads)], np.arange(n)


class TestSampleSynthetic:
    def test_even_spacing_indices(self):
        # n = 8, n_s = 4: sources {0, 2, 4, 6}; verify via distinctive rows
        q = np.zeros((8, 8))
        for i in range(8):
            q[i, 0] = float(i)
        pos = np.zeros(8, dtype=int)  # position 0: rope is identity
        synth, synth_pos = sample_synthetic_queries(q, pos, 8, 4, CFG)
        recovered = [rope_invert(synth[j], int(synth_pos[j]), CFG)[0] for j in range(4)]
        np.testing.assert_allclose(recovered, [0.0, 2.0, 4.0, 6.0], atol=1e-12)
        assert list(synth_pos) == [8, 9, 10, 11]

    def test_n_s_equals_n_uses_all_in_order(self):
        q = np.zeros((5, 8))
        for i in range(5):
            q[i, 1] = float(i + 1)
        pos = np.zeros(5, dtype=int)
        synth, synth_pos = sample_synthetic_queries(q, pos, 5, 5, CFG)
        recovered = [rope_invert(synth[j], int(synth_pos[j]), CFG)[1] for j in range(5)]
        np.testing.assert_allclose(recovered, [1, 2, 3, 4, 5], atol=1e-12)

    def test_norm_preserved(self):
        heads, pos = random_context(16, seed=3)
        q = heads[0]
        synth, _ = sample_synthetic_queries(q, pos, 16, 4, CFG)
        src = q[(np.arange(4) * 16) // 4]
        np.testing.assert_allclose(np.linalg.norm(synth, axis=1),
                                   np.linalg.norm(src, axis=1), atol=1e-12)

    def test_too_many_rejected(self):
        heads, pos = random_context(4)
        with pytest.raises(ValueError, match="not enough content vectors"):
            sample_synthetic_queries(heads[0], pos, 4, 5, CFG)

    @pytest.mark.parametrize("strategy", ["bootstrap", "random", "kmeans", "farthest"])
    def test_alternative_strategies_shape_and_determinism(self, strategy):
        heads, pos = random_context(24, seed=9)
        a, pa = sample_synthetic_queries(heads[0], pos, 24, 6, CFG, strategy, seed=5)
        b, pb = sample_synthetic_queries(heads[0], pos, 24, 6, CFG, strategy, seed=5)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(pa, pb)
        assert a.shape == (6, 8)
        assert list(pa) == list(range(24, 30))

    def test_unknown_strategy(self):
        heads, pos = random_context(8)
        with pytest.raises(ValueError, match="unknown strategy"):
            sample_synthetic_queries(heads[0], pos, 8, 2, CFG, "psychic")


class TestBuildTrainingQueries:
    def test_paper_scale_counts(self):
        heads, pos = random_context(2048, seed=1, heads=1)
        qs = build_training_queries(heads, pos, 2048, 256, 128, CFG)
        assert qs.n_q == 384
        assert qs.queries[0].shape == (384, 8)
        assert list(qs.positions[:3]) == [2048 - 256, 2048 - 255, 2048 - 254]
        assert list(qs.positions[-3:]) == [2048 + 125, 2048 + 126, 2048 + 127]

    def test_zero_synth_is_retain_only(self):
        heads, pos = random_context(32, seed=2)
        qs = build_training_queries(heads, pos, 32, 8, 0, CFG)
        assert qs.n_q == 8
        np.testing.assert_array_equal(qs.queries[0], heads[0][-8:])
        np.testing.assert_array_equal(qs.queries[1], heads[1][-8:])

    def test_identical_content_composition_oracle(self):
        # every context query is the same vector rotated to its position, so
        # each synthetic query must equal apply(invert(v, p_src), p_future)
        rng = np.random.default_rng(4)
        v = rng.normal(size=8)
        n = 12
        pos = np.arange(n)
        q = rope_apply_rows(np.tile(v, (n, 1)), pos, CFG)
        qs = build_training_queries([q], pos, n, 4, 3, CFG)
        for j in range(3):
            src = (j * n) // 3
            expected = rope_apply(rope_invert(q[src], src, CFG), n + j, CFG)
            np.testing.assert_allclose(qs.queries[0][4 + j], expected, atol=1e-12)

    def test_positions_strictly_increasing(self):
        heads, pos = random_context(20, seed=5)
        qs = build_training_queries(heads, pos, 20, 6, 5, CFG)
        assert np.all(np.diff(qs.positions) > 0)

    def test_full_retain_reproduces_context_queries(self):
        # with n_s = 0 and m = N the training set IS the context query set,
        # so full-cache attention targets are reproduced exactly
        from kvsculpt.attention import attend
        from kvsculpt.cache import HeadCache, split_zones
        from kvsculpt.distill import attention_targets

        rng = np.random.default_rng(12)
        n, d = 16, 8
        heads = [rng.normal(size=(n, d))]
        pos = np.arange(n)
        qs = build_training_queries(heads, pos, n, n, 0, CFG)
        np.testing.assert_array_equal(qs.queries[0], heads[0])
        cache = HeadCache(keys=rng.normal(size=(n, d)),
                          values=rng.normal(size=(n, d)), positions=pos)
        zone = split_zones(cache, 4)
        target = attention_targets(zone, qs)
        direct = attend(heads[0], cache.keys, cache.values)
        np.testing.assert_array_equal(target.y_full[0], direct.output)
        np.testing.assert_array_equal(target.lse_full[0], direct.lse)

    def test_shared_indices_across_heads(self):
        rng = np.random.default_rng(6)
        base = rng.normal(size=(16, 8))
        heads = [base, 2.0 * base]
        pos = np.arange(16)
        qs = build_training_queries(heads, pos, 16, 4, 4, CFG)
        np.testing.assert_allclose(qs.queries[1][4:], 2.0 * qs.queries[0][4:],
                                   atol=1e-12)


class TestStationarity:
    def test_identical_queries(self):
        v = np.ones(8)
        pos = np.arange(10)
        q = rope_apply_rows(np.tile(v, (10, 1)), pos, CFG)
        rep = stationarity_report(q, pos, CFG)
        assert rep.mean_consecutive_cosine == pytest.approx(1.0, abs=1e-12)
        assert rep.effective_dim == 1

    def test_orthogonal_alternating(self):
        content = np.zeros((10, 8))
        content[0::2, 0] = 1.0
        content[1::2, 1] = 1.0
        pos = np.arange(10)
        q = rope_apply_rows(content, pos, CFG)
        rep = stationarity_report(q, pos, CFG)
        assert rep.mean_consecutive_cosine == pytest.approx(0.0, abs=1e-12)

    def test_matches_direct_recomputation(self):
        rng = np.random.default_rng(11)
        content = rng.normal(size=(40, 8)) + 3.0 * rng.normal(size=8)
        pos = np.arange(40)
        q = rope_apply_rows(content, pos, CFG)
        rep = stationarity_report(q, pos, CFG, pca_dim_threshold=0.8)

        # independent recomputation from the raw content vectors
        cos = np.mean([
            content[i] @ content[i + 1]
            / (np.linalg.norm(content[i]) * np.linalg.norm(content[i + 1]))
            for i in range(39)
        ])
        assert rep.mean_consecutive_cosine == pytest.approx(cos, abs=1e-10)

        centered = content - content.mean(axis=0)
        eigvals = np.sort(np.linalg.eigvalsh(centered.T @ centered))[::-1]
        frac = np.cumsum(eigvals) / eigvals.sum()
        expected_dim = int(np.argmax(frac >= 0.8 - 1e-12) + 1)
        assert rep.effective_dim == expected_dim
        assert rep.pca_variance_captured == pytest.approx(frac[expected_dim - 1],
                                                          abs=1e-10)

    def test_too_short(self):
        with pytest.raises(ValueError):
            stationarity_report(np.ones((1, 8)), np.arange(1), CFG)
