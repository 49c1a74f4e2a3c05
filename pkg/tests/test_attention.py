import math

import numpy as np
import pytest

from kvsculpt.attention import (AttentionOutput, ModelShape, attend,
                                combine_chunks, empty_chunk, gqa_expand)


def naive_attend(q, k, v):
    """Per-element double-loop reference, no vectorized shortcuts."""
    n_q, d = q.shape
    n_k = k.shape[0]
    out = np.zeros((n_q, v.shape[1]))
    lse = np.zeros(n_q)
    for i in range(n_q):
        scores = [sum(q[i][t] * k[j][t] for t in range(d)) / math.sqrt(d)
                  for j in range(n_k)]
        mx = max(scores)
        weights = [math.exp(s - mx) for s in scores]
        z = sum(weights)
        lse[i] = mx + math.log(z)
        for j in range(n_k):
            for c in range(v.shape[1]):
                out[i][c] += weights[j] / z * v[j][c]
    return out, lse


class TestAttend:
    def test_single_key(self):
        q = np.array([[1.0, 2.0]])
        k = np.array([[0.5, -1.0]])
        v = np.array([[3.0, 4.0]])
        res = attend(q, k, v)
        np.testing.assert_array_equal(res.output, v)
        assert res.lse[0] == pytest.approx((q @ k.T)[0, 0] / math.sqrt(2), abs=1e-14)

    def test_identical_keys_give_column_mean(self):
        rng = np.random.default_rng(0)
        k = np.tile(rng.normal(size=(1, 4)), (6, 1))
        v = rng.normal(size=(6, 4))
        res = attend(rng.normal(size=(3, 4)), k, v)
        np.testing.assert_allclose(res.output, np.tile(v.mean(axis=0), (3, 1)),
                                   atol=1e-12)

    def test_matches_naive_loop_oracle(self):
        rng = np.random.default_rng(42)
        q = rng.normal(size=(4, 8))
        k = rng.normal(size=(6, 8))
        v = rng.normal(size=(6, 8))
        res = attend(q, k, v)
        ref_out, ref_lse = naive_attend(q, k, v)
        np.testing.assert_allclose(res.output, ref_out, atol=1e-12)
        np.testing.assert_allclose(res.lse, ref_lse, atol=1e-12)

    def test_empty_cache_rejected(self):
        with pytest.raises(ValueError, match="empty cache"):
            attend(np.ones((1, 4)), np.zeros((0, 4)), np.zeros((0, 4)))

    def test_pair_permutation_invariance(self):
        rng = np.random.default_rng(3)
        q = rng.normal(size=(5, 6))
        k = rng.normal(size=(9, 6))
        v = rng.normal(size=(9, 6))
        perm = rng.permutation(9)
        a = attend(q, k, v)
        b = attend(q, k[perm], v[perm])
        np.testing.assert_allclose(a.output, b.output, atol=1e-12)
        np.testing.assert_allclose(a.lse, b.lse, atol=1e-12)

    def test_output_in_convex_hull_of_values(self):
        rng = np.random.default_rng(8)
        v = rng.normal(size=(7, 5))
        res = attend(rng.normal(size=(4, 5)), rng.normal(size=(7, 5)), v)
        lo = v.min(axis=0) - 1e-12
        hi = v.max(axis=0) + 1e-12
        assert np.all(res.output >= lo) and np.all(res.output <= hi)


class TestCombineChunks:
    def test_self_combine(self):
        rng = np.random.default_rng(1)
        x = attend(rng.normal(size=(3, 4)), rng.normal(size=(5, 4)),
                   rng.normal(size=(5, 4)))
        both = combine_chunks(x, x)
        np.testing.assert_allclose(both.output, x.output, atol=1e-12)
        np.testing.assert_allclose(both.lse, x.lse + math.log(2), atol=1e-12)

    def test_empty_chunk_is_neutral(self):
        rng = np.random.default_rng(2)
        x = attend(rng.normal(size=(3, 4)), rng.normal(size=(5, 4)),
                   rng.normal(size=(5, 4)))
        for combined in (combine_chunks(x, empty_chunk(3, 4)),
                         combine_chunks(empty_chunk(3, 4), x)):
            np.testing.assert_array_equal(combined.output, x.output)
            np.testing.assert_array_equal(combined.lse, x.lse)

    def test_monolithic_equals_chunked(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            q = rng.normal(size=(4, 8))
            k = rng.normal(size=(10, 8))
            v = rng.normal(size=(10, 8))
            cut = rng.integers(1, 10)
            whole = attend(q, k, v)
            parts = combine_chunks(attend(q, k[:cut], v[:cut]),
                                   attend(q, k[cut:], v[cut:]))
            np.testing.assert_allclose(parts.output, whole.output, atol=1e-10)
            np.testing.assert_allclose(parts.lse, whole.lse, atol=1e-10)

    def test_associative_commutative(self):
        rng = np.random.default_rng(5)
        q = rng.normal(size=(3, 4))
        chunks = [attend(q, rng.normal(size=(4, 4)), rng.normal(size=(4, 4)))
                  for _ in range(3)]
        a, b, c = chunks
        left = combine_chunks(combine_chunks(a, b), c)
        right = combine_chunks(a, combine_chunks(b, c))
        np.testing.assert_allclose(left.output, right.output, atol=1e-10)
        np.testing.assert_allclose(left.lse, right.lse, atol=1e-10)
        ab = combine_chunks(a, b)
        ba = combine_chunks(b, a)
        np.testing.assert_allclose(ab.output, ba.output, atol=1e-10)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            combine_chunks(empty_chunk(3, 4), empty_chunk(2, 4))


class TestGqaExpand:
    def test_twelve_q_two_kv(self):
        mats = [np.full((1, 2), i) for i in range(12)]
        group0 = gqa_expand(mats, 0, 6)
        group1 = gqa_expand(mats, 1, 6)
        assert [int(m[0, 0]) for m in group0] == [0, 1, 2, 3, 4, 5]
        assert [int(m[0, 0]) for m in group1] == [6, 7, 8, 9, 10, 11]

    def test_group_size_one_pass_through(self):
        mats = [np.zeros((2, 2)), np.ones((2, 2))]
        assert gqa_expand(mats, 1, 1)[0] is mats[1]

    def test_contiguous_grouping(self):
        mats = [np.full((1, 1), i) for i in range(4)]
        assert [int(m[0, 0]) for m in gqa_expand(mats, 0, 2)] == [0, 1]
        assert [int(m[0, 0]) for m in gqa_expand(mats, 1, 2)] == [2, 3]

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            gqa_expand([np.zeros((1, 1))] * 4, 2, 2)


def test_model_shape_validation():
    shape = ModelShape(num_layers=2, num_q_heads=4, num_kv_heads=2, head_dim=8)
    assert shape.group_size == 2
    with pytest.raises(ValueError):
        ModelShape(num_layers=2, num_q_heads=3, num_kv_heads=2, head_dim=8)
