"""Rotary position embeddings: apply and exactly invert per-pair rotations.

A position p rotates dimension pair i of a head vector by angle p * theta_i
with theta_i = theta_base ** (-2i / d). Two pairing layouts are supported:

* ``adjacent`` pairs (2i, 2i+1) - used by the built-in toy model.
* ``half``     pairs (i, i + d/2) - the layout of most open rotary models.

Cache files record which layout their keys were encoded with, so the two
sides of the interchange never have to guess.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PAIRINGS = ("adjacent", "half")


@dataclass(frozen=True)
class RopeConfig:
    head_dim: int
    theta_base: float = 10000.0
    pairing: str = "adjacent"

    def __post_init__(self):
        if self.head_dim <= 0 or self.head_dim % 2 != 0:
            raise ValueError("head_dim must be a positive even integer")
        if self.theta_base <= 0:
            raise ValueError("theta_base must be positive")
        if self.pairing not in PAIRINGS:
            raise ValueError(f"pairing must be one of {PAIRINGS}")

    def frequencies(self) -> np.ndarray:
        """theta_i for i in [0, d/2)."""
        half = self.head_dim // 2
        return self.theta_base ** (-2.0 * np.arange(half) / self.head_dim)


def _split(x: np.ndarray, pairing: str) -> tuple[np.ndarray, np.ndarray]:
    half = x.shape[-1] // 2
    if pairing == "adjacent":
        return x[..., 0::2], x[..., 1::2]
    return x[..., :half], x[..., half:]


def _merge(a: np.ndarray, b: np.ndarray, pairing: str) -> np.ndarray:
    out = np.empty(a.shape[:-1] + (2 * a.shape[-1],), dtype=np.float64)
    if pairing == "adjacent":
        out[..., 0::2] = a
        out[..., 1::2] = b
    else:
        out[..., : a.shape[-1]] = a
        out[..., a.shape[-1]:] = b
    return out


def _rotate(x: np.ndarray, angles: np.ndarray, config: RopeConfig) -> np.ndarray:
    a, b = _split(x, config.pairing)
    cos = np.cos(angles)
    sin = np.sin(angles)
    return _merge(a * cos - b * sin, a * sin + b * cos, config.pairing)


def rope_apply(x, position: int, config: RopeConfig) -> np.ndarray:
    """Rotate vector x to position. Norm-preserving."""
    v = np.asarray(x, dtype=np.float64)
    if v.shape[-1] != config.head_dim:
        raise ValueError(f"expected dim {config.head_dim}, got {v.shape[-1]}")
    if position < 0:
        raise ValueError("position must be nonnegative")
    return _rotate(v, position * config.frequencies(), config)


def rope_invert(x, position: int, config: RopeConfig) -> np.ndarray:
    """Undo rope_apply at the same position: the exact inverse rotation."""
    v = np.asarray(x, dtype=np.float64)
    if v.shape[-1] != config.head_dim:
        raise ValueError(f"expected dim {config.head_dim}, got {v.shape[-1]}")
    if position < 0:
        raise ValueError("position must be nonnegative")
    return _rotate(v, -position * config.frequencies(), config)


def rope_apply_rows(x, positions, config: RopeConfig) -> np.ndarray:
    """Rotate each row of x to its own position (vectorized rope_apply)."""
    v = np.asarray(x, dtype=np.float64)
    pos = np.asarray(positions, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != config.head_dim:
        raise ValueError(f"expected (n, {config.head_dim}) matrix")
    if pos.shape != (v.shape[0],):
        raise ValueError("positions length must match row count")
    angles = pos[:, None] * config.frequencies()[None, :]
    return _rotate(v, angles, config)


def rope_invert_rows(x, positions, config: RopeConfig) -> np.ndarray:
    """Undo rope_apply_rows at the same positions."""
    return rope_apply_rows(x, -np.asarray(positions, dtype=np.float64), config)
