"""Pilot-guided budget allocation across layers and heads.

A short uniform-budget compression exposes which components are hard; the
square-root-dampened signal then redistributes the same total budget. The
dampening exponent trades uniformity against outlier domination.
"""

import numpy as np

from kvsculpt import (DistillConfig, ModelShape, PilotReport, ToyModelConfig,
                      allocate_heads, allocate_layers, gen_toy_cache,
                      round_budgets, run_pilot)

shape = ModelShape(num_layers=4, num_q_heads=4, num_kv_heads=2, head_dim=16)
cache = gen_toy_cache(ToyModelConfig(shape=shape, vocab=64, seed=0), 256, 32)

pilot = run_pilot(cache, ratio=0.3, m=32, pilot_steps=20,
                  config=DistillConfig(seed=0))
print("pilot MSE per (layer, kv head):")
print(np.array2string(pilot.mse, precision=5))
print("layer difficulty ratio (max/min):",
      round(float(pilot.mse.mean(axis=1).max() / pilot.mse.mean(axis=1).min()), 1))

total = pilot.uniform_k * 8
print(f"\ntotal budget {total} redistributed at different dampening exponents:")
for alpha in (0.0, 0.3, 0.5, 0.7, 1.0):
    layer_budgets = allocate_layers(pilot, total, alpha, 4, 224)
    plan = allocate_heads(pilot, layer_budgets, alpha, 4, 224)
    print(f"  alpha={alpha}: per-head k = {plan.k.ravel().tolist()} "
          f"(spread {plan.spread})")

print("\nthe rounding rule is exact and deterministic:")
print("  weights 2:1:1 over 400  ->", round_budgets([2, 1, 1], 400).tolist())
print("  weights 1:1:1 over 10   ->", round_budgets([1, 1, 1], 10).tolist())
print("  capped heavy weight     ->",
      round_budgets([1e6, 1, 1], 100, floors=1, caps=[50, 100, 100]).tolist())
