"""Point subsampling strategies: random, D-FPS, F-FPS, relation-aware, hybrid.

All samplers are deterministic given their inputs (and an explicit rng for
the stochastic ones): ties always break toward the lowest index, and asking
for more points than exist falls back to selecting everything and padding
round-robin, with the padding recorded on the result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SampleSelection:
    """Ordered source-point indices chosen by one sampler."""

    indices: np.ndarray
    method: str
    padded: bool = False

    def __post_init__(self):
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=np.int64))

    @property
    def k(self) -> int:
        return self.indices.shape[0]


def _pad_round_robin(indices: np.ndarray, k: int) -> np.ndarray:
    """Extend a full selection to length k by cycling through it again."""
    n = indices.shape[0]
    reps = -(-k // n)  # ceil
    return np.tile(indices, reps)[:k]


def sample_random(n: int, k: int, rng: np.random.Generator) -> SampleSelection:
    """k distinct uniform indices out of n (padded round-robin when k > n)."""
    if n < 1:
        raise ValueError("need at least one point")
    perm = rng.permutation(n).astype(np.int64)
    if k <= n:
        return SampleSelection(perm[:k], "random")
    return SampleSelection(_pad_round_robin(perm, k), "random", padded=True)


def _greedy_farthest(points: np.ndarray, k: int, start_index: int, method: str) -> SampleSelection:
    n = points.shape[0]
    if n < 1:
        raise ValueError("need at least one point")
    if not 0 <= start_index < n:
        raise ValueError(f"start_index {start_index} out of range for {n} points")
    take = min(k, n)
    chosen = np.empty(take, dtype=np.int64)
    chosen[0] = start_index
    min_d2 = np.sum((points - points[start_index]) ** 2, axis=1)
    min_d2[start_index] = -1.0  # already selected; never a candidate again
    for i in range(1, take):
        # argmax returns the first maximum, which is the lowest-index tie.
        nxt = int(np.argmax(min_d2))
        chosen[i] = nxt
        np.minimum(min_d2, np.sum((points - points[nxt]) ** 2, axis=1), out=min_d2)
        min_d2[nxt] = -1.0
    if k <= n:
        return SampleSelection(chosen, method)
    return SampleSelection(_pad_round_robin(chosen, k), method, padded=True)


def sample_dfps(coords: np.ndarray, k: int, start_index: int = 0) -> SampleSelection:
    """Greedy farthest-point selection in Euclidean coordinate space."""
    return _greedy_farthest(np.asarray(coords, dtype=np.float64), k, start_index, "dfps")


def sample_ffps(features: np.ndarray, k: int, start_index: int = 0) -> SampleSelection:
    """Greedy farthest-point selection measured in feature space."""
    return _greedy_farthest(np.asarray(features, dtype=np.float64), k, start_index, "ffps")


def ras_scores(search_feats: np.ndarray, template_feats: np.ndarray) -> np.ndarray:
    """Per-search-point distance to the nearest template feature row.

    Builds the full pairwise L2 matrix and takes the row-wise minimum.
    """
    s = np.asarray(search_feats, dtype=np.float64)
    t = np.asarray(template_feats, dtype=np.float64)
    if t.shape[0] == 0:
        raise ValueError("template feature set is empty")
    if s.shape[1] != t.shape[1]:
        raise ValueError(f"feature widths differ: {s.shape[1]} vs {t.shape[1]}")
    d2 = np.sum(s * s, axis=1)[:, None] + np.sum(t * t, axis=1)[None, :] - 2.0 * (s @ t.T)
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2.min(axis=1))


def sample_ras(search_feats: np.ndarray, template_feats: np.ndarray, k: int) -> SampleSelection:
    """The k search points most feature-similar to the template."""
    v = ras_scores(search_feats, template_feats)
    order = np.argsort(v, kind="stable").astype(np.int64)
    n = order.shape[0]
    if k <= n:
        return SampleSelection(order[:k], "ras")
    return SampleSelection(_pad_round_robin(order, k), "ras", padded=True)


def sample_hybrid(search_feats: np.ndarray, template_feats: np.ndarray, k: int,
                  rng: np.random.Generator) -> SampleSelection:
    """Half the budget by relation score, the other half uniform from the rest."""
    if k % 2 != 0:
        raise ValueError(f"hybrid sampling needs an even k, got {k}")
    n = np.asarray(search_feats).shape[0]
    if k >= n:
        full = sample_ras(search_feats, template_feats, k)
        return SampleSelection(full.indices, "hybrid", padded=full.padded)
    half = k // 2
    ras_half = sample_ras(search_feats, template_feats, half).indices
    mask = np.ones(n, dtype=bool)
    mask[ras_half] = False
    complement = np.flatnonzero(mask)
    random_half = rng.choice(complement, size=half, replace=False).astype(np.int64)
    return SampleSelection(np.concatenate([ras_half, random_half]), "hybrid")
