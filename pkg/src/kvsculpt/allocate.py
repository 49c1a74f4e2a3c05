"""Difficulty-weighted budget allocation across layers and KV heads.

A short pilot compression at uniform budgets yields a per-(layer, head)
residual MSE. Budgets are then redistributed proportional to MSE ** alpha,
first across layers, then across the heads inside each layer. The exponent
dampens outliers; alpha = 0 reproduces uniform allocation exactly.

Rounding uses largest-remainder apportionment with floors and caps: exact
sum preservation, deterministic lowest-index tie-breaks, and monotone in
the weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PilotReport:
    """Per-(layer, kv_head) output MSE from a short uniform-budget run."""

    mse: np.ndarray     # (L, h_kv)
    pilot_steps: int
    uniform_k: int

    def __post_init__(self):
        m = np.asarray(self.mse, dtype=np.float64)
        if m.ndim != 2:
            raise ValueError("mse must be (layers, kv_heads)")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValueError("mse entries must be finite and nonnegative")
        object.__setattr__(self, "mse", m)

    def to_json(self) -> str:
        return json.dumps({
            "pilot_steps": self.pilot_steps,
            "uniform_k": self.uniform_k,
            "mse": self.mse.tolist(),
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PilotReport":
        obj = json.loads(text)
        return cls(mse=np.asarray(obj["mse"], dtype=np.float64),
                   pilot_steps=int(obj["pilot_steps"]),
                   uniform_k=int(obj["uniform_k"]))


@dataclass(frozen=True)
class BudgetPlan:
    """Integer distilled-pair budgets per (layer, kv_head), summing to total."""

    k: np.ndarray   # (L, h_kv) ints
    total: int
    alpha: float
    k_min_floor: int

    def __post_init__(self):
        k = np.asarray(self.k, dtype=np.int64)
        object.__setattr__(self, "k", k)
        if int(k.sum()) != self.total:
            raise ValueError("budget plan does not sum to total")
        if np.any(k < self.k_min_floor):
            raise ValueError("budget plan violates floor")

    @property
    def spread(self) -> int:
        return int(self.k.max() - self.k.min())

    def to_json(self) -> str:
        return json.dumps({
            "total": self.total,
            "alpha": self.alpha,
            "k_min_floor": self.k_min_floor,
            "k": self.k.tolist(),
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "BudgetPlan":
        obj = json.loads(text)
        return cls(k=np.asarray(obj["k"], dtype=np.int64), total=int(obj["total"]),
                   alpha=float(obj["alpha"]), k_min_floor=int(obj["k_min_floor"]))


def _as_bound(value, n: int) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(value, dtype=np.int64), (n,)).copy()
    return arr


def round_budgets(weights, total: int, floors=0, caps=None) -> np.ndarray:
    """Apportion an integer total proportional to weights.

    Largest-remainder rounding clamped to [floor, cap] per item; clamped
    surplus is re-apportioned among the rest. The output always sums to
    total exactly. Ties in the remainder go to the lowest index.
    """
    w = np.asarray(weights, dtype=np.float64)
    n = w.shape[0]
    if n == 0:
        raise ValueError("no items to apportion")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    lo = _as_bound(floors, n)
    hi = _as_bound(caps if caps is not None else total, n)
    if np.any(lo > hi):
        raise ValueError("infeasible bounds")
    if int(lo.sum()) > total or int(hi.sum()) < total:
        raise ValueError("infeasible bounds")

    if w.sum() == 0:
        w = np.ones(n)

    # Waterfill: find lam with sum(clip(lam*w, lo, hi)) == total. Zero-weight
    # items stay pinned at their floor.
    def reach(lam: float) -> float:
        return float(np.clip(lam * w, lo, hi).sum())

    lam_hi = 1.0
    while reach(lam_hi) < total and lam_hi < 1e30:
        lam_hi *= 2.0
    lam_lo = 0.0
    for _ in range(80):
        mid = 0.5 * (lam_lo + lam_hi)
        if mid == lam_lo or mid == lam_hi:
            break
        if reach(mid) < total:
            lam_lo = mid
        else:
            lam_hi = mid
    shares = np.clip(lam_hi * w, lo, hi)

    base = np.minimum(np.maximum(np.floor(shares).astype(np.int64), lo), hi)
    out = base.copy()
    remainder = total - int(base.sum())
    fracs = shares - base
    order = sorted(range(n), key=lambda j: (-fracs[j], j))
    for j in order:
        if remainder == 0:
            break
        if out[j] < hi[j]:
            out[j] += 1
            remainder -= 1
    for j in range(n):
        # a cap on a high-remainder item can push leftovers down the line
        while remainder > 0 and out[j] < hi[j]:
            out[j] += 1
            remainder -= 1
    if remainder != 0:
        raise ValueError("infeasible bounds")
    return out


def allocate_layers(pilot: PilotReport, total: int, alpha: float,
                    k_min_floor: int, head_cap: int) -> np.ndarray:
    """Per-layer budgets proportional to (mean head MSE) ** alpha."""
    n_layers, n_heads = pilot.mse.shape
    if total < n_layers * n_heads * k_min_floor:
        raise ValueError("budget too small")
    weights = pilot.mse.mean(axis=1) ** alpha
    return round_budgets(weights, total,
                         floors=n_heads * k_min_floor,
                         caps=n_heads * head_cap)


def allocate_heads(pilot: PilotReport, layer_budgets, alpha: float,
                   k_min_floor: int, head_cap: int) -> BudgetPlan:
    """Redistribute each layer's budget across its KV heads by MSE ** alpha."""
    n_layers, n_heads = pilot.mse.shape
    layer_budgets = np.asarray(layer_budgets, dtype=np.int64)
    if layer_budgets.shape != (n_layers,):
        raise ValueError("one budget per layer required")
    k = np.zeros((n_layers, n_heads), dtype=np.int64)
    for layer in range(n_layers):
        weights = pilot.mse[layer] ** alpha
        k[layer] = round_budgets(weights, int(layer_budgets[layer]),
                                 floors=k_min_floor, caps=head_cap)
    return BudgetPlan(k=k, total=int(layer_budgets.sum()), alpha=alpha,
                      k_min_floor=k_min_floor)


def uniform_plan(n_layers: int, n_heads: int, k_per_head: int) -> BudgetPlan:
    k = np.full((n_layers, n_heads), k_per_head, dtype=np.int64)
    return BudgetPlan(k=k, total=int(k.sum()), alpha=0.0, k_min_floor=min(k_per_head, 1))
