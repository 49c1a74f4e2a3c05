"""Distilling one head's compress zone into k freely optimized KV pairs.

The objective matches the full-cache attention behavior on the training
queries with a two-term loss: squared error of the attention outputs plus a
weighted squared error of the per-query log-sum-exp masses, both normalized
by the query count and averaged over the query heads the KV head serves.

Keys descend this loss by quasi-Newton steps; values have a closed form
given the attention weights the current keys induce (a ridge solve against
the full-cache outputs, with the retain zone's fixed contribution moved to
the offset). The two alternate: a value solve every v_solve_every key steps.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .attention import attend
from .cache import CompressedHead, ZoneSplit
from .errors import DivergedError
from .linalg import RidgeProblem, ridge_solve, softmax_lse_rows
from .optim import adam_minimize, lbfgs_minimize
from .queries import QuerySet


@dataclass(frozen=True)
class DistillConfig:
    outer_steps: int = 100
    v_solve_every: int = 5
    lbfgs_lr: float = 0.5
    lbfgs_inner_iters: int = 10
    lbfgs_history: int = 10
    lambda_lse: float = 1.0
    lambda_ridge: float = 1e-3
    n_synth: int = 128
    seed: int = 0
    optimizer: str = "lbfgs"    # "lbfgs" or "adam"
    adam_step: float = 1e-2

    def __post_init__(self):
        if min(self.outer_steps, self.v_solve_every, self.lbfgs_inner_iters,
               self.lbfgs_history) < 1:
            raise ValueError("all iteration counts must be >= 1")
        if min(self.lbfgs_lr, self.lambda_ridge, self.adam_step) <= 0:
            raise ValueError("lbfgs_lr, lambda_ridge, adam_step must be positive")
        if self.lambda_lse < 0:
            raise ValueError("lambda_lse must be nonnegative")
        if self.optimizer not in ("lbfgs", "adam"):
            raise ValueError("optimizer must be 'lbfgs' or 'adam'")


@dataclass(frozen=True)
class AttentionTarget:
    """Full-cache outputs and lse per query head; what distillation matches."""

    y_full: list    # [q_head_in_group] -> (n_q, d)
    lse_full: list  # [q_head_in_group] -> (n_q,)


@dataclass(frozen=True)
class AttentionWeights:
    """Softmax weights over the concatenated cache, split at column k."""

    weights: list  # [q_head_in_group] -> (n_q, k + m)
    k: int

    def compressed_part(self, h: int) -> np.ndarray:
        return self.weights[h][:, :self.k]

    def retain_part(self, h: int) -> np.ndarray:
        return self.weights[h][:, self.k:]


@dataclass
class DistillTrace:
    losses: list = field(default_factory=list)   # loss after each outer step
    grad_evals: int = 0
    n_v_solves: int = 0
    stalled_steps: int = 0
    elapsed_s: float = 0.0
    optimizer: str = "lbfgs"
    final_output_mse: float = float("nan")
    final_lse_mse: float = float("nan")
    diverged: bool = False

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")

    def jsonl_records(self, layer: int, head: int) -> list[dict]:
        """One record per outer step, for the JSON-lines trace file."""
        per_step = self.grad_evals / max(len(self.losses), 1)
        per_ms = self.elapsed_s * 1000.0 / max(len(self.losses), 1)
        return [
            {"layer": layer, "head": head, "step": i + 1, "loss": loss,
             "grad_evals": int(round(per_step * (i + 1))),
             "elapsed_ms": per_ms * (i + 1)}
            for i, loss in enumerate(self.losses)
        ]


def queryset_for_group(qs: QuerySet, kv_head: int, group_size: int) -> QuerySet:
    """Restrict a whole-model QuerySet to the group one KV head serves."""
    start = kv_head * group_size
    if start + group_size > len(qs.queries):
        raise ValueError("kv head index out of range")
    return QuerySet(queries=qs.queries[start:start + group_size],
                    positions=qs.positions, n_retain=qs.n_retain, n_synth=qs.n_synth)


def attention_targets(zone: ZoneSplit, queries: QuerySet) -> AttentionTarget:
    """Attention over the full cache (old + retain), per query head."""
    keys = np.vstack([zone.old.keys, zone.retain.keys])
    values = np.vstack([zone.old.values, zone.retain.values])
    ys, lses = [], []
    for q in queries.queries:
        out = attend(q, keys, values)
        ys.append(out.output)
        lses.append(out.lse)
    return AttentionTarget(y_full=ys, lse_full=lses)


def distill_loss_and_grad(k_c, v_c, zone: ZoneSplit, queries: QuerySet,
                          target: AttentionTarget, lambda_lse: float):
    """Two-term loss and its exact gradient with respect to the keys.

    Returns (loss, grad_kc, output_mse, lse_mse) where output_mse and
    lse_mse are the two terms before weighting, each already normalized by
    the query count and averaged over query heads.
    """
    d = k_c.shape[1]
    k = k_c.shape[0]
    k_cat = np.vstack([k_c, zone.retain.keys])
    v_cat = np.vstack([v_c, zone.retain.values])
    sqrt_d = math.sqrt(d)
    g = len(queries.queries)
    grad = np.zeros_like(k_c)
    out_mse = 0.0
    lse_mse = 0.0
    for h, q in enumerate(queries.queries):
        n_q = q.shape[0]
        scores = (q @ k_cat.T) / sqrt_d
        probs, lse_hat = softmax_lse_rows(scores)
        y_hat = probs @ v_cat
        dy = y_hat - target.y_full[h]
        dl = lse_hat - target.lse_full[h]
        out_mse += float(np.sum(dy * dy)) / n_q
        lse_mse += float(np.sum(dl * dl)) / n_q
        # Backprop through softmax and lse to the scores, then to the keys.
        g_a = (2.0 / n_q) * (dy @ v_cat.T)
        row_dot = np.sum(probs * g_a, axis=1)
        d_scores = probs * (g_a - row_dot[:, None] + (2.0 * lambda_lse / n_q) * dl[:, None])
        grad += (d_scores.T @ q)[:k] / sqrt_d
    out_mse /= g
    lse_mse /= g
    grad /= g
    loss = out_mse + lambda_lse * lse_mse
    if not math.isfinite(loss):
        raise DivergedError("diverged")
    return loss, grad, out_mse, lse_mse


def distill_loss_only(k_c, v_c, zone: ZoneSplit, queries: QuerySet,
                      target: AttentionTarget, lambda_lse: float):
    """Loss components without gradient work (trace bookkeeping)."""
    k_cat = np.vstack([k_c, zone.retain.keys])
    v_cat = np.vstack([v_c, zone.retain.values])
    sqrt_d = math.sqrt(k_c.shape[1])
    out_mse = 0.0
    lse_mse = 0.0
    for h, q in enumerate(queries.queries):
        n_q = q.shape[0]
        probs, lse_hat = softmax_lse_rows((q @ k_cat.T) / sqrt_d)
        dy = probs @ v_cat - target.y_full[h]
        dl = lse_hat - target.lse_full[h]
        out_mse += float(np.sum(dy * dy)) / n_q
        lse_mse += float(np.sum(dl * dl)) / n_q
    g = len(queries.queries)
    out_mse /= g
    lse_mse /= g
    return out_mse + lambda_lse * lse_mse, out_mse, lse_mse


def attention_weights(k_c, zone: ZoneSplit, queries: QuerySet) -> AttentionWeights:
    """Softmax weights the current keys induce on the training queries."""
    k_cat = np.vstack([k_c, zone.retain.keys])
    sqrt_d = math.sqrt(k_c.shape[1])
    mats = [softmax_lse_rows((q @ k_cat.T) / sqrt_d)[0] for q in queries.queries]
    return AttentionWeights(weights=mats, k=k_c.shape[0])


def solve_values(weights: AttentionWeights, v_ret, target: AttentionTarget,
                 lambda_ridge: float) -> np.ndarray:
    """Closed-form value update given fixed attention weights.

    Stacks the query heads of the group into one ridge problem whose offset
    carries the retain zone's fixed contribution.
    """
    design = np.vstack([weights.compressed_part(h) for h in range(len(weights.weights))])
    offset = np.vstack([weights.retain_part(h) @ v_ret for h in range(len(weights.weights))])
    targets = np.vstack(target.y_full)
    return ridge_solve(RidgeProblem(design=design, targets=targets,
                                    offset=offset, lambda_r=lambda_ridge))


def attention_importance(zone: ZoneSplit, queries: QuerySet) -> np.ndarray:
    """Summed full-cache softmax weight on each old-zone position."""
    keys = np.vstack([zone.old.keys, zone.retain.keys])
    sqrt_d = math.sqrt(keys.shape[1])
    n_old = zone.old.size
    importance = np.zeros(n_old)
    for q in queries.queries:
        probs, _ = softmax_lse_rows((q @ keys.T) / sqrt_d)
        importance += probs[:, :n_old].sum(axis=0)
    return importance


def select_topk_positions(importance: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k highest scores; ties go to the larger position.

    Selected indices come back in ascending position order.
    """
    n = importance.shape[0]
    if k > n:
        raise ValueError("budget exceeds zone")
    order = np.lexsort((-np.arange(n), -importance))
    return np.sort(order[:k])


def init_keys_topk(zone: ZoneSplit, queries: QuerySet, k: int):
    """Warm start: the k old-zone pairs with highest attention importance."""
    if k > zone.old.size:
        raise ValueError("budget exceeds zone")
    idx = select_topk_positions(attention_importance(zone, queries), k)
    return zone.old.keys[idx].copy(), zone.old.values[idx].copy()


def optimize_keys_lbfgs(k_c, v_c, zone: ZoneSplit, queries: QuerySet,
                        target: AttentionTarget, config: DistillConfig):
    """One outer block of quasi-Newton key iterations with values frozen."""
    shape = k_c.shape

    def fun_grad(flat):
        loss, grad, _, _ = distill_loss_and_grad(
            flat.reshape(shape), v_c, zone, queries, target, config.lambda_lse)
        return loss, grad.ravel()

    res = lbfgs_minimize(fun_grad, k_c.ravel(), iters=config.lbfgs_inner_iters,
                         init_step=config.lbfgs_lr, history=config.lbfgs_history)
    return res.x.reshape(shape), res


def optimize_keys_firstorder(k_c, v_c, zone: ZoneSplit, queries: QuerySet,
                             target: AttentionTarget, config: DistillConfig):
    """First-order comparison block: same objective, adaptive-moment steps."""
    shape = k_c.shape

    def fun_grad(flat):
        loss, grad, _, _ = distill_loss_and_grad(
            flat.reshape(shape), v_c, zone, queries, target, config.lambda_lse)
        return loss, grad.ravel()

    res = adam_minimize(fun_grad, k_c.ravel(), iters=config.lbfgs_inner_iters,
                        step=config.adam_step)
    return res.x.reshape(shape), res


def distill_head(zone: ZoneSplit, queries: QuerySet, k: int,
                 config: DistillConfig, init=None):
    """Distill one head: warm start, alternate key steps and value solves.

    init overrides the top-k warm start with explicit (k_c, v_c) matrices.
    Value solves happen on outer steps divisible by v_solve_every; there is
    no extra terminal solve. Deterministic given identical inputs.
    """
    if k < 1:
        raise ValueError("budget must be >= 1")
    started = time.perf_counter()
    if init is None:
        k_c, v_c = init_keys_topk(zone, queries, k)
    else:
        k_c, v_c = np.array(init[0], dtype=np.float64), np.array(init[1], dtype=np.float64)
        if k_c.shape[0] != k:
            raise ValueError("init size does not match budget")
    target = attention_targets(zone, queries)
    trace = DistillTrace(optimizer=config.optimizer)
    step_fn = optimize_keys_lbfgs if config.optimizer == "lbfgs" else optimize_keys_firstorder
    for step in range(1, config.outer_steps + 1):
        k_c, res = step_fn(k_c, v_c, zone, queries, target, config)
        trace.grad_evals += res.grad_evals
        if res.stalled:
            trace.stalled_steps += 1
        loss = res.loss
        if step % config.v_solve_every == 0:
            weights = attention_weights(k_c, zone, queries)
            v_c = solve_values(weights, zone.retain.values, target, config.lambda_ridge)
            trace.n_v_solves += 1
            loss, out_mse, lse_mse = distill_loss_only(
                k_c, v_c, zone, queries, target, config.lambda_lse)
        trace.losses.append(loss)
        if res.diverged:
            trace.diverged = True
            break
    final_loss, out_mse, lse_mse = distill_loss_only(
        k_c, v_c, zone, queries, target, config.lambda_lse)
    trace.losses[-1] = final_loss
    trace.final_output_mse = out_mse
    trace.final_lse_mse = lse_mse
    trace.elapsed_s = time.perf_counter() - started
    head = CompressedHead(k_c=k_c, v_c=v_c, k_ret=zone.retain.keys.copy(),
                          v_ret=zone.retain.values.copy(), k=k, m=zone.m)
    return head, trace


def restart_oracle(zone: ZoneSplit, queries: QuerySet, k: int,
                   config: DistillConfig, restarts: int):
    """Best-of-R distillation: restart 0 is the warm start, the rest are
    seeded random old-zone subsets. Returns (best head, all traces).
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    best_head = None
    best_loss = math.inf
    traces = []
    for r in range(restarts):
        if r == 0:
            init = None
        else:
            rng = np.random.default_rng(np.random.SeedSequence((config.seed, r)))
            idx = np.sort(rng.choice(zone.old.size, size=k, replace=False))
            init = (zone.old.keys[idx], zone.old.values[idx])
        head, trace = distill_head(zone, queries, k, config, init=init)
        traces.append(trace)
        if trace.final_loss < best_loss:
            best_loss = trace.final_loss
            best_head = head
    return best_head, traces
