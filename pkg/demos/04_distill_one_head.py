"""Distill a single head and watch the loss fall below every eviction option.

One KV head from the seeded toy model: split into zones, build training
queries, then compare random eviction, attention-score eviction, score
eviction with refit values, and full distillation under the same budget.
"""

import numpy as np

from kvsculpt import (DistillConfig, ModelShape, ToyModelConfig,
                      attention_targets, build_training_queries, distill_head,
                      distill_loss_only, evict_attn_score, evict_random,
                      gen_toy_cache, queryset_for_group, select_and_fit,
                      split_zones)

shape = ModelShape(num_layers=4, num_q_heads=4, num_kv_heads=2, head_dim=16)
cache = gen_toy_cache(ToyModelConfig(shape=shape, vocab=64, seed=0), 256, 32)

layer, head, m, k = 1, 0, 32, 45
zone = split_zones(cache.heads[layer][head], m)
qs_all = build_training_queries(cache.queries[layer], cache.positions,
                                cache.context_len, m, 128, cache.rope, seed=0)
qs = queryset_for_group(qs_all, head, shape.group_size)
target = attention_targets(zone, qs)
config = DistillConfig(seed=0)

print(f"layer {layer} head {head}: {zone.old.size} old pairs -> {k} slots "
      f"(+{m} retained)\n")


def loss_of(compressed):
    return distill_loss_only(compressed.k_c, compressed.v_c, zone, qs, target,
                             config.lambda_lse)[0]


print(f"random eviction      loss = {loss_of(evict_random(zone, k, seed=0)):.4e}")
print(f"attention-score keep loss = {loss_of(evict_attn_score(zone, qs, k)):.4e}")
fit = select_and_fit(zone, qs, target, k, config.lambda_ridge)
print(f"select + value refit loss = {loss_of(fit):.4e}")

head_c, trace = distill_head(zone, qs, k, config)
print(f"distilled            loss = {trace.final_loss:.4e} "
      f"({trace.grad_evals} gradient evals, {trace.n_v_solves} value solves)")
print("\nloss trajectory (every 10th outer step):")
print(np.array2string(np.array(trace.losses[::10]), precision=3))
