"""Shared test oracles: slow, obviously-correct reference implementations."""

from __future__ import annotations

import numpy as np

from pctrack.geometry import Box3D, points_in_box


def random_box(rng: np.random.Generator, center_span: float = 3.0) -> Box3D:
    center = rng.uniform(-center_span, center_span, size=3)
    size = rng.uniform(0.5, 4.0, size=3)
    yaw = rng.uniform(-np.pi, np.pi)
    return Box3D(center, size, yaw)


def mc_box_iou(a: Box3D, b: Box3D, n_samples: int, rng: np.random.Generator) -> float:
    """Monte-Carlo IoU: uniform samples over the joint AABB, membership counting."""
    corners = []
    for box in (a, b):
        bev = box.corners_bev()
        z0 = box.center[2] - box.size[2] / 2.0
        z1 = box.center[2] + box.size[2] / 2.0
        for x, y in bev:
            corners.append([x, y, z0])
            corners.append([x, y, z1])
    corners = np.asarray(corners)
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    pts = rng.uniform(lo, hi, size=(n_samples, 3))
    in_a = points_in_box(pts, a)
    in_b = points_in_box(pts, b)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 0.0
    return np.count_nonzero(in_a & in_b) / union


def brute_ball_query(queries: np.ndarray, cloud: np.ndarray, radius: float, max_k: int):
    """O(QN) reference for fixed-radius neighbor search."""
    out = []
    for q in np.atleast_2d(queries):
        hits = [i for i, p in enumerate(np.atleast_2d(cloud)) if np.linalg.norm(q - p) <= radius]
        out.append(np.asarray(hits[:max_k], dtype=np.int64))
    return out


def greedy_fps_oracle(points: np.ndarray, k: int, start: int = 0) -> list[int]:
    """Plain-python greedy farthest-point reference, lowest index on ties."""
    n = len(points)
    chosen = [start]
    while len(chosen) < min(k, n):
        best_i, best_d = None, -1.0
        for i in range(n):
            if i in chosen:
                continue
            d = min(float(np.linalg.norm(points[i] - points[j])) for j in chosen)
            if d > best_d + 1e-15:
                best_i, best_d = i, d
        chosen.append(best_i)
    return chosen


def ras_sort_oracle(search_feats: np.ndarray, template_feats: np.ndarray, k: int) -> list[int]:
    """Full pairwise-distance sort reference for relation-aware selection."""
    v = [
        min(float(np.linalg.norm(s - t)) for t in template_feats)
        for s in search_feats
    ]
    return sorted(range(len(v)), key=lambda i: (v[i], i))[:k]


def foreground_fixture(rng: np.random.Generator, n_search: int = 160, fg_frac: float = 0.2):
    """Search scene with a small on-object cluster amid spread-out clutter.

    Features are the raw coordinates, so relation scores against the template
    directly measure closeness to the object. Returns (search_feats,
    template_feats, fg_mask).
    """
    n_fg = int(round(n_search * fg_frac))
    fg = rng.normal(scale=0.4, size=(n_fg, 3))
    bg = rng.uniform(-8.0, 8.0, size=(n_search - n_fg, 3))
    bg = bg[np.linalg.norm(bg, axis=1) > 2.0]  # keep clutter off the object
    while len(bg) < n_search - n_fg:
        extra = rng.uniform(-8.0, 8.0, size=(n_search, 3))
        bg = np.vstack([bg, extra[np.linalg.norm(extra, axis=1) > 2.0]])
    bg = bg[: n_search - n_fg]
    search = np.vstack([fg, bg])
    order = rng.permutation(n_search)
    search = search[order]
    fg_mask = order < n_fg
    template = rng.normal(scale=0.4, size=(48, 3))
    return search, template, fg_mask
