"""Training-query construction and content-vector stationarity diagnostics.

Future decode queries are unavailable at compression time, so each query
head trains against two blocks: the m most recent real queries at their
original positions, and n_s synthetic queries built by stripping the rotary
encoding off context queries (recovering near-stationary content vectors)
and re-encoding them at the future positions N .. N+n_s-1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rope import RopeConfig, rope_apply_rows, rope_invert_rows

STRATEGIES = ("uniform", "bootstrap", "random", "kmeans", "farthest")


def bootstrap_window(n: int) -> int:
    """Recent-token window for the bootstrap sampler: 1/16 of the context
    (128 tokens at a 2048-token context), never below 8."""
    return max(min(n, 8), n // 16)


@dataclass(frozen=True)
class QuerySet:
    """Per-query-head training queries: m retain rows then n_s synthetic rows."""

    queries: list           # [q_head] -> (m + n_s, d)
    positions: np.ndarray   # shared across heads, strictly increasing
    n_retain: int
    n_synth: int

    @property
    def n_q(self) -> int:
        return self.n_retain + self.n_synth


@dataclass(frozen=True)
class StationarityReport:
    mean_consecutive_cosine: float
    pca_variance_captured: float
    effective_dim: int


def _even_indices(n: int, n_s: int) -> np.ndarray:
    return (np.arange(n_s) * n) // n_s


def _content_vectors(context_queries: np.ndarray, positions, rope: RopeConfig) -> np.ndarray:
    return rope_invert_rows(context_queries, positions, rope)


def _kmeans(content: np.ndarray, n_s: int, rng: np.random.Generator) -> np.ndarray:
    """Plain Lloyd iterations, fixed count, seeded start."""
    start = rng.choice(content.shape[0], size=n_s, replace=False)
    centroids = content[start].copy()
    for _ in range(25):
        d2 = ((content[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(d2, axis=1)
        for c in range(n_s):
            members = content[assign == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
    return centroids


def _farthest_point(content: np.ndarray, n_s: int) -> np.ndarray:
    """Greedy max-min selection, seeded at index 0. Returns indices."""
    chosen = [0]
    d2 = ((content - content[0]) ** 2).sum(axis=1)
    while len(chosen) < n_s:
        nxt = int(np.argmax(d2))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((content - content[nxt]) ** 2).sum(axis=1))
    return np.array(chosen)


def sample_synthetic_queries(context_queries, positions, n: int, n_s: int,
                             rope: RopeConfig, strategy: str = "uniform",
                             seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Build n_s synthetic queries at positions n .. n+n_s-1.

    Each source query is de-rotated at its own position and re-rotated at its
    assigned future position. The default strategy picks evenly spaced source
    indices floor(j * n / n_s); the alternatives exist for the sampling
    ablation and take an explicit seed where they randomize.

    Returns (queries, positions).
    """
    q = np.asarray(context_queries, dtype=np.float64)
    pos = np.asarray(positions)
    if n_s < 1:
        raise ValueError("n_s must be >= 1")
    if n_s > n:
        raise ValueError("not enough content vectors")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    future = np.arange(n, n + n_s)
    rng = np.random.default_rng(seed)
    if strategy == "kmeans":
        content = _content_vectors(q, pos, rope)
        picked = _kmeans(content, n_s, rng)
    else:
        if strategy == "uniform":
            idx = _even_indices(n, n_s)
        elif strategy == "bootstrap":
            window = bootstrap_window(n)
            idx = rng.integers(n - window, n, size=n_s)
        elif strategy == "random":
            idx = np.sort(rng.choice(n, size=n_s, replace=False))
        else:  # farthest
            content_all = _content_vectors(q, pos, rope)
            idx = _farthest_point(content_all, n_s)
        picked = rope_invert_rows(q[idx], pos[idx], rope)
    return rope_apply_rows(picked, future, rope), future


def build_training_queries(context_queries_by_head, positions, n: int, m: int,
                           n_s: int, rope: RopeConfig, strategy: str = "uniform",
                           seed: int = 0) -> QuerySet:
    """Assemble the per-head training set: retain block plus synthetic block.

    The retain block is the last m context queries, unchanged. Synthetic
    source indices are shared across heads so the blocks stay aligned within
    a query group. With n_s == 0 the set is exactly the retain queries; with
    m == n it reproduces the full set of context queries.
    """
    pos = np.asarray(positions)
    if m > n or m < 0:
        raise ValueError("retain size out of range")
    if n_s > n:
        raise ValueError("not enough content vectors")
    out = []
    retain_pos = pos[n - m:]
    synth_pos = np.arange(n, n + n_s)
    for q in context_queries_by_head:
        q = np.asarray(q, dtype=np.float64)
        retain = q[n - m:]
        if n_s > 0:
            synth, _ = sample_synthetic_queries(q, pos, n, n_s, rope, strategy, seed)
            out.append(np.vstack([retain, synth]))
        else:
            out.append(retain.copy())
    return QuerySet(
        queries=out,
        positions=np.concatenate([retain_pos, synth_pos]),
        n_retain=m,
        n_synth=n_s,
    )


def stationarity_report(context_queries, positions, rope: RopeConfig,
                        pca_dim_threshold: float = 0.9) -> StationarityReport:
    """How stationary one head's content vectors are across positions.

    Reports the mean cosine between consecutive de-rotated queries and the
    smallest PCA dimensionality capturing pca_dim_threshold of their
    variance.
    """
    q = np.asarray(context_queries, dtype=np.float64)
    if q.shape[0] < 2:
        raise ValueError("need at least two queries")
    content = _content_vectors(q, positions, rope)
    a, b = content[:-1], content[1:]
    norms = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    norms = np.where(norms == 0, 1.0, norms)
    mean_cos = float(np.mean(np.sum(a * b, axis=1) / norms))

    centered = content - content.mean(axis=0)
    svals = np.linalg.svd(centered, compute_uv=False)
    var = svals ** 2
    total = var.sum()
    # variance at float-noise level relative to the vectors themselves is zero
    if total <= 1e-24 * max(1.0, float(np.sum(content * content))):
        return StationarityReport(mean_cos, 1.0, 1)
    frac = np.cumsum(var) / total
    eff = int(np.searchsorted(frac, pca_dim_threshold - 1e-12) + 1)
    eff = min(eff, len(frac))
    return StationarityReport(mean_cos, float(frac[eff - 1]), eff)
