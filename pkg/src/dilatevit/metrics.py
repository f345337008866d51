"""Locality and sparsity statistics of attention maps.

An attention map is a row-stochastic [H*W, H*W] matrix over a query grid:
row q holds the weights query q puts on every key position. Maps can come
from this library's attention ops or be ingested from DFT1 files produced
elsewhere.

Metrics:

* ``locality_mass(map, radius)`` — fraction of each query's weight on keys
  within Chebyshev distance <= radius of the query, and the mean over queries.
* ``sparsity_profile(map, threshold)`` — mean count of keys above a weight
  threshold, participation ratio 1 / sum(a^2) (an effective key count), and
  Shannon entropy in nats, all averaged over queries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

ROW_SUM_TOL = 1e-4


@dataclass(frozen=True)
class AttentionMap:
    height: int
    width: int
    weights: np.ndarray  # [H*W, H*W], rows sum to 1

    def __post_init__(self):
        n = self.height * self.width
        if self.weights.shape != (n, n):
            raise ValidationError(
                f"attention matrix shape {self.weights.shape} does not match "
                f"{self.height}x{self.width} grid (expected {(n, n)})"
            )
        if np.any(self.weights < 0):
            raise ValidationError("attention weights must be nonnegative")
        sums = self.weights.sum(axis=1)
        worst = np.abs(sums - 1.0).max()
        if worst > ROW_SUM_TOL:
            raise ValidationError(
                f"rows must sum to 1 within {ROW_SUM_TOL}, worst deviation {worst:.3e}"
            )

    @property
    def n_keys(self) -> int:
        return self.height * self.width


def _chebyshev_table(h: int, w: int) -> np.ndarray:
    """[H*W, H*W] Chebyshev distances between grid positions."""
    qi = np.repeat(np.arange(h), w)
    qj = np.tile(np.arange(w), h)
    di = np.abs(qi[:, None] - qi[None, :])
    dj = np.abs(qj[:, None] - qj[None, :])
    return np.maximum(di, dj)


def locality_mass(amap: AttentionMap, radius: int) -> tuple[np.ndarray, float]:
    """Per-query and mean attention mass within Chebyshev radius of the query."""
    if radius < 0:
        raise ValidationError(f"radius must be >= 0, got {radius}")
    dist = _chebyshev_table(amap.height, amap.width)
    per_query = np.sum(np.where(dist <= radius, amap.weights, 0.0), axis=1)
    return per_query, float(per_query.mean())


@dataclass(frozen=True)
class SparsityStats:
    mean_active_keys: float
    participation_ratio: float
    entropy_nats: float


def sparsity_profile(amap: AttentionMap, threshold: float = 0.01) -> SparsityStats:
    """Active-key count above threshold, participation ratio, entropy per row."""
    if not (0.0 < threshold < 1.0):
        raise ValidationError(f"threshold must lie in (0, 1), got {threshold}")
    w = amap.weights
    active = np.sum(w > threshold, axis=1)
    pr = 1.0 / np.sum(w * w, axis=1)
    logs = np.where(w > 0, np.log(np.where(w > 0, w, 1.0)), 0.0)
    entropy = -np.sum(w * logs, axis=1)
    return SparsityStats(
        mean_active_keys=float(active.mean()),
        participation_ratio=float(pr.mean()),
        entropy_nats=float(entropy.mean()),
    )


def from_dense(weights: np.ndarray, height: int, width: int) -> AttentionMap:
    return AttentionMap(height=height, width=width, weights=np.asarray(weights))


def from_swda_weights(weights, cfg, renormalize: bool | None = None) -> AttentionMap:
    """Build a map from tap-order windowed-attention weights [H, W, w*w].

    Zero-pad-mode weights lose the mass of their padded taps when expanded to
    real key positions, so they are renormalized by default; masked-mode
    weights are already row-stochastic.
    """
    from .swda import attention_to_dense

    h, w = weights.shape[0], weights.shape[1]
    if renormalize is None:
        renormalize = cfg.edge_mode == "zero_pad"
    dense = attention_to_dense(np.asarray(weights), cfg, renormalize=renormalize)
    return AttentionMap(height=h, width=w, weights=dense)
