"""Rotary position encoding: apply, invert, and the relative-position law.

Keys and queries carry their position as a rotation. The rotation is exactly
invertible, which is what lets training queries be stripped of their
position and re-stamped at future positions.
"""

import numpy as np

from kvsculpt import RopeConfig, rope_apply, rope_invert

cfg = RopeConfig(head_dim=8)
rng = np.random.default_rng(1)
x = rng.normal(size=8)

for p in (0, 1, 500, 100_000):
    y = rope_apply(x, p, cfg)
    back = rope_invert(y, p, cfg)
    print(f"position {p:>6}: |rotated| = {np.linalg.norm(y):.12f}, "
          f"round-trip error = {np.max(np.abs(back - x)):.2e}")

print("\nrelative-position property: q.k depends only on the position gap")
q = rng.normal(size=8)
k = rng.normal(size=8)
for shift in (0, 17, 400):
    dot = rope_apply(q, 120 + shift, cfg) @ rope_apply(k, 100 + shift, cfg)
    print(f"  positions ({120 + shift}, {100 + shift}): q.k = {dot:.12f}")

print("\nre-positioning: invert at p1 then apply at p2 == apply at p1 - p2")
moved = rope_apply(rope_invert(rope_apply(x, 300, cfg), 300, cfg), 310, cfg)
direct = rope_apply(x, 310, cfg)
print("  max difference:", np.max(np.abs(moved - direct)))
