"""KV-cache distillation: compress a transformer's per-head KV cache into a
smaller set of freely optimized pairs that preserve attention behavior.

The library splits each head's cache into an old zone and a retain zone,
replaces the old zone with k optimized key-value pairs (quasi-Newton key
steps alternating with closed-form value solves against full-cache attention
targets), and redistributes per-head budgets with a pilot difficulty signal.
A seeded toy GQA transformer plus KL/profile metrics make the whole
method-vs-baseline comparison reproducible on one machine.
"""

from .allocate import (BudgetPlan, PilotReport, allocate_heads, allocate_layers,
                       round_budgets, uniform_plan)
from .attention import (AttentionOutput, ModelShape, attend, combine_chunks,
                        empty_chunk, gqa_expand)
from .baselines import evict_attn_score, evict_random, select_and_fit
from .cache import (CompressedHead, CompressedModelCache, HeadCache,
                    ModelKvCache, ZoneSplit, budget_for_ratio,
                    compression_ratio, snap_f32, split_zones)
from .distill import (AttentionTarget, AttentionWeights, DistillConfig,
                      DistillTrace, attention_importance, attention_targets,
                      attention_weights, distill_head, distill_loss_and_grad,
                      distill_loss_only, init_keys_topk, optimize_keys_firstorder,
                      optimize_keys_lbfgs, queryset_for_group, restart_oracle,
                      solve_values)
from .evaluate import (EvalReport, KlStats, attn_cosine_horizons,
                       concentration_stats, evaluate_compressed, kl_report,
                       layer_error_profile)
from .kvdfile import read_kvd, write_kvd
from .linalg import RidgeProblem, ridge_solve, softmax_lse_rows
from .optim import OptimResult, adam_minimize, lbfgs_minimize, strong_wolfe
from .pipeline import (HeadResult, compress_model, gen_toy_cache,
                       model_for_cache, run_pilot)
from .queries import (QuerySet, StationarityReport, build_training_queries,
                      sample_synthetic_queries, stationarity_report)
from .rope import RopeConfig, rope_apply, rope_apply_rows, rope_invert, rope_invert_rows
from .toymodel import (ToyModel, ToyModelConfig, build_toy_model,
                       decode_teacher_forced, forward_full, prefill,
                       sample_tokens, snap_cache)

__all__ = [name for name in dir() if not name.startswith("_")]
