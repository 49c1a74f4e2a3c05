"""Chunked attention: (output, lse) pairs merge exactly.

A cache chunk's contribution to any future decode step is fully described by
its partial attention output and log-sum-exp. Two chunks combine into the
monolithic answer, which is why matching a compressed chunk's output AND lse
is sufficient for downstream correctness.
"""

import numpy as np

from kvsculpt import attend, combine_chunks, empty_chunk

rng = np.random.default_rng(2)
queries = rng.normal(size=(3, 8))
keys = rng.normal(size=(20, 8))
values = rng.normal(size=(20, 8))

whole = attend(queries, keys, values)
for cut in (1, 7, 13):
    left = attend(queries, keys[:cut], values[:cut])
    right = attend(queries, keys[cut:], values[cut:])
    merged = combine_chunks(left, right)
    print(f"split at {cut:>2}: output err = "
          f"{np.max(np.abs(merged.output - whole.output)):.2e}, "
          f"lse err = {np.max(np.abs(merged.lse - whole.lse)):.2e}")

neutral = combine_chunks(whole, empty_chunk(3, 8))
print("\ncombining with an empty chunk is the identity:",
      np.array_equal(neutral.output, whole.output))

perm = rng.permutation(20)
shuffled = attend(queries, keys[perm], values[perm])
print("attention ignores cache row order:",
      np.max(np.abs(shuffled.output - whole.output)) < 1e-12)
print("(that order freedom is what lets distilled pairs live anywhere)")
