"""Whole-model orchestration: generate, compress, pilot.

Per-(layer, head) work is independent and runs under the parallel map; each
task owns its derived seed and returns an immutable result, so outputs are
bitwise-stable across thread counts.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .allocate import BudgetPlan, PilotReport, uniform_plan
from .baselines import evict_attn_score, evict_random, select_and_fit
from .cache import (CompressedModelCache, ModelKvCache, budget_for_ratio,
                    split_zones)
from .distill import (DistillConfig, DistillTrace, attention_targets,
                      distill_head, distill_loss_only, queryset_for_group)
from .queries import build_training_queries
from .runner import parallel_map, task_seed
from .toymodel import (ToyModel, ToyModelConfig, build_toy_model,
                       decode_teacher_forced, prefill, sample_tokens,
                       snap_cache)

METHODS = ("kvsculpt", "random", "attn", "selectfit")


@dataclass
class HeadResult:
    layer: int
    head: int
    k: int
    loss: float
    output_mse: float
    lse_mse: float
    trace: DistillTrace | None


def gen_toy_cache(config: ToyModelConfig, context_len: int, cont_len: int,
                  token_seed: int | None = None) -> ModelKvCache:
    """Build the toy model, prefill a structured token stream, and attach
    teacher-forcing references. The result is f32-snapped so it survives the
    file format exactly.
    """
    if context_len < 2:
        raise ValueError("context_len must be >= 2")
    if cont_len < 1:
        raise ValueError("cont_len must be >= 1")
    model = build_toy_model(config)
    tokens = sample_tokens(config.vocab, context_len + cont_len,
                           config.seed if token_seed is None else token_seed)
    cache, _ = prefill(model, tokens[:context_len])
    cache = snap_cache(cache)
    cont = tokens[context_len:]
    ref_logits, _ = decode_teacher_forced(model, cache, cont, cont_len)
    return ModelKvCache(
        shape=cache.shape, rope=cache.rope, context_len=cache.context_len,
        heads=cache.heads, queries=cache.queries, positions=cache.positions,
        ref_logits=np.asarray(ref_logits, dtype=np.float32).astype(np.float64),
        ref_tokens=cont, context_tokens=tokens[:context_len].copy(),
        toy_config=cache.toy_config,
    )


def model_for_cache(cache: ModelKvCache) -> ToyModel:
    """Rebuild the toy model a cache was generated from (manifest seed)."""
    if cache.toy_config is None:
        raise ValueError("cache carries no toy model description")
    return build_toy_model(ToyModelConfig.from_dict(cache.toy_config))


def compress_model(cache: ModelKvCache, m: int, plan: BudgetPlan,
                   config: DistillConfig, method: str = "kvsculpt",
                   strategy: str = "uniform"):
    """Compress every (layer, KV head) under its planned budget.

    Returns (CompressedModelCache, [HeadResult]). Baselines report the same
    two-term loss as distillation so methods are directly comparable.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    shape = cache.shape
    if plan.k.shape != (shape.num_layers, shape.num_kv_heads):
        raise ValueError("plan shape does not match cache shape")
    if np.any(plan.k > cache.context_len - m):
        raise ValueError("plan exceeds old-zone size")
    g = shape.group_size
    querysets = [
        build_training_queries(cache.queries[layer], cache.positions,
                               cache.context_len, m, config.n_synth,
                               cache.rope, strategy, seed=config.seed)
        for layer in range(shape.num_layers)
    ]

    def work(task):
        layer, head = task
        zone = split_zones(cache.heads[layer][head], m)
        qs = queryset_for_group(querysets[layer], head, g)
        k = int(plan.k[layer, head])
        seed = task_seed(config.seed, layer, head)
        trace = None
        if method == "kvsculpt":
            comp, trace = distill_head(zone, qs, k, replace(config, seed=seed))
        elif method == "random":
            comp = evict_random(zone, k, seed)
        elif method == "attn":
            comp = evict_attn_score(zone, qs, k)
        else:
            target = attention_targets(zone, qs)
            comp = select_and_fit(zone, qs, target, k, config.lambda_ridge)
        target = attention_targets(zone, qs)
        loss, out_mse, lse_mse = distill_loss_only(
            comp.k_c, comp.v_c, zone, qs, target, config.lambda_lse)
        return comp, HeadResult(layer=layer, head=head, k=k, loss=loss,
                                output_mse=out_mse, lse_mse=lse_mse, trace=trace)

    tasks = [(layer, head) for layer in range(shape.num_layers)
             for head in range(shape.num_kv_heads)]
    outcomes = parallel_map(work, tasks)
    heads: list = [[None] * shape.num_kv_heads for _ in range(shape.num_layers)]
    results = []
    for (layer, head), (comp, res) in zip(tasks, outcomes):
        heads[layer][head] = comp
        results.append(res)
    compressed = CompressedModelCache(
        shape=shape, rope=cache.rope, context_len=cache.context_len, m=m,
        heads=heads, toy_config=cache.toy_config,
    )
    return compressed, results


def run_pilot(cache: ModelKvCache, ratio: float, m: int, pilot_steps: int,
              config: DistillConfig) -> PilotReport:
    """Short uniform-budget compression; the per-head output MSE is the
    difficulty signal for allocation.
    """
    if pilot_steps < 1:
        raise ValueError("pilot_steps must be >= 1")
    k_uniform = budget_for_ratio(ratio, m, cache.context_len)
    plan = uniform_plan(cache.shape.num_layers, cache.shape.num_kv_heads, k_uniform)
    cfg = replace(config, outer_steps=pilot_steps)
    _, results = compress_model(cache, m, plan, cfg, method="kvsculpt")
    mse = np.zeros((cache.shape.num_layers, cache.shape.num_kv_heads))
    for res in results:
        mse[res.layer, res.head] = res.output_mse
    return PilotReport(mse=mse, pilot_steps=pilot_steps, uniform_k=k_uniform)
