"""Oriented-box and point-set primitives.

Boxes are gravity-aligned: a center, per-axis extents (length, width,
height) and a single yaw rotation about z. All angles are radians, all
distances meters. Everything here is a pure function over immutable
inputs; random number generators are always passed explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


class Point3(NamedTuple):
    """A single 3D point in meters."""

    x: float
    y: float
    z: float


def wrap_angle(angle: float) -> float:
    """Normalize an angle to the half-open interval (-pi, pi]."""
    a = (angle + math.pi) % TWO_PI - math.pi
    if a <= -math.pi:
        a += TWO_PI
    return a


def _as_xyz(points) -> np.ndarray:
    """Coerce a PointCloud, array or sequence of Point3 to an (N, 3) array."""
    if isinstance(points, PointCloud):
        return points.coords
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or (arr.size and arr.shape[1] != 3):
        raise ValueError(f"expected (N, 3) coordinates, got shape {arr.shape}")
    return arr.reshape(-1, 3)


@dataclass(frozen=True)
class PointCloud:
    """N points with optional per-point feature rows.

    coords: (N, 3) float array of xyz positions.
    features: optional (N, C) float array aligned row-for-row with coords.
    """

    coords: np.ndarray
    features: np.ndarray | None = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "coords", coords)
        if not np.isfinite(coords).all():
            raise ValueError("point coordinates must be finite")
        if self.features is not None:
            feats = np.asarray(self.features, dtype=np.float64)
            if feats.ndim != 2 or feats.shape[0] != coords.shape[0]:
                raise ValueError(
                    f"features shape {feats.shape} does not match {coords.shape[0]} points"
                )
            object.__setattr__(self, "features", feats)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    def subset(self, indices) -> "PointCloud":
        idx = np.asarray(indices, dtype=np.int64)
        feats = self.features[idx] if self.features is not None else None
        return PointCloud(self.coords[idx], feats)


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D bounding box: center, (length, width, height), yaw about z.

    Yaw is normalized to (-pi, pi] on construction; sizes must be positive.
    """

    center: np.ndarray
    size: np.ndarray
    yaw: float = 0.0

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64).reshape(3)
        size = np.asarray(self.size, dtype=np.float64).reshape(3)
        if not (np.isfinite(center).all() and np.isfinite(size).all()):
            raise ValueError("box center and size must be finite")
        if (size <= 0).any():
            raise ValueError(f"box size components must be positive, got {size}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def volume(self) -> float:
        return float(self.size.prod())

    def as_array7(self) -> np.ndarray:
        """Serialize as (cx, cy, cz, l, w, h, yaw)."""
        return np.concatenate([self.center, self.size, [self.yaw]])

    @staticmethod
    def from_array7(values: Sequence[float]) -> "Box3D":
        v = np.asarray(values, dtype=np.float64).reshape(7)
        return Box3D(center=v[:3], size=v[3:6], yaw=float(v[6]))

    def corners_bev(self) -> np.ndarray:
        """(4, 2) footprint corners in world xy, counter-clockwise."""
        hl, hw = self.size[0] / 2.0, self.size[1] / 2.0
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + self.center[:2]


def to_box_frame(points, box: Box3D) -> np.ndarray:
    """Transform world points into the box frame (translate -center, rotate -yaw)."""
    xyz = _as_xyz(points)
    p = xyz - box.center
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    out = np.empty_like(p)
    out[:, 0] = c * p[:, 0] + s * p[:, 1]
    out[:, 1] = -s * p[:, 0] + c * p[:, 1]
    out[:, 2] = p[:, 2]
    return out


def from_box_frame(points, box: Box3D) -> np.ndarray:
    """Inverse of to_box_frame: box-frame points back to world coordinates."""
    xyz = _as_xyz(points)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    out = np.empty_like(xyz)
    out[:, 0] = c * xyz[:, 0] - s * xyz[:, 1]
    out[:, 1] = s * xyz[:, 0] + c * xyz[:, 1]
    out[:, 2] = xyz[:, 2]
    return out + box.center


def box_to_frame(box: Box3D, ref: Box3D) -> Box3D:
    """Express ``box`` in the canonical frame of ``ref``."""
    center = to_box_frame(box.center.reshape(1, 3), ref)[0]
    return Box3D(center, box.size, wrap_angle(box.yaw - ref.yaw))


def box_from_frame(box: Box3D, ref: Box3D) -> Box3D:
    """Map a box expressed in ``ref``'s canonical frame back to world."""
    center = from_box_frame(box.center.reshape(1, 3), ref)[0]
    return Box3D(center, box.size, wrap_angle(box.yaw + ref.yaw))


def points_in_box(cloud, box: Box3D) -> np.ndarray:
    """Boolean mask of points inside the box; boundary points count as inside."""
    xyz = _as_xyz(cloud)
    if xyz.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    local = to_box_frame(xyz, box)
    half = box.size / 2.0
    return (np.abs(local) <= half).all(axis=1)


def crop_template(cloud: PointCloud, box: Box3D, extend_ratio: float = 0.0) -> PointCloud:
    """Points inside the box with its size scaled by (1 + extend_ratio).

    The extension keeps a margin of background context around the object.
    May return an empty cloud; callers decide how to handle that.
    """
    if extend_ratio < 0:
        raise ValueError("extend_ratio must be >= 0")
    scaled = Box3D(box.center, box.size * (1.0 + extend_ratio), box.yaw)
    mask = points_in_box(cloud, scaled)
    return cloud.subset(np.flatnonzero(mask))


def enlarge_box(box: Box3D, margin_m: float) -> Box3D:
    """Grow the box by margin_m on every side (size grows by 2*margin_m per axis)."""
    if margin_m < 0:
        raise ValueError("margin_m must be >= 0")
    return Box3D(box.center, box.size + 2.0 * margin_m, box.yaw)


def distort_box(box: Box3D, range_m: float, rng: np.random.Generator) -> Box3D:
    """Shift the center by independent uniform offsets in [-range_m, range_m]."""
    if range_m < 0:
        raise ValueError("range_m must be >= 0")
    offset = rng.uniform(-range_m, range_m, size=3)
    return Box3D(box.center + offset, box.size, box.yaw)


# ---------------------------------------------------------------------------
# Rotated-box IoU via convex polygon clipping in the BEV plane.
# ---------------------------------------------------------------------------


def _polygon_area(poly: np.ndarray) -> float:
    """Shoelace area of a simple polygon given as an (K, 2) vertex array."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex subject polygon by a convex CCW clip polygon."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        points = output
        output = []
        px, py = points[-1]
        prev_side = ex * (py - ay) - ey * (px - ax)
        for cx, cy in points:
            side = ex * (cy - ay) - ey * (cx - ax)
            if (side >= 0.0) != (prev_side >= 0.0):
                t = prev_side / (prev_side - side)
                output.append((px + t * (cx - px), py + t * (cy - py)))
            if side >= 0.0:
                output.append((cx, cy))
            px, py, prev_side = cx, cy, side
    return np.asarray(output, dtype=np.float64).reshape(-1, 2)


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    """Intersection area of the two yaw-rotated box footprints."""
    clipped = _clip_convex(a.corners_bev(), b.corners_bev())
    return _polygon_area(clipped)


def box_iou_3d(a: Box3D, b: Box3D) -> float:
    """3D IoU: BEV polygon-clipped footprint overlap times z-extent overlap.

    Arguments are ordered canonically before clipping so the result is
    exactly symmetric despite the clip itself not being.
    """
    if tuple(b.as_array7()) < tuple(a.as_array7()):
        a, b = b, a
    inter_area = bev_intersection_area(a, b)
    if inter_area <= 0.0:
        return 0.0
    za0, za1 = a.center[2] - a.size[2] / 2.0, a.center[2] + a.size[2] / 2.0
    zb0, zb1 = b.center[2] - b.size[2] / 2.0, b.center[2] + b.size[2] / 2.0
    z_overlap = max(0.0, min(za1, zb1) - max(za0, zb0))
    inter = inter_area * z_overlap
    union = a.volume + b.volume - inter
    if union <= 0.0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


# ---------------------------------------------------------------------------
# Fixed-radius neighbor queries (brute force; desk scale keeps N small).
# ---------------------------------------------------------------------------


def ball_query(queries, cloud, radius: float, max_k: int) -> list[np.ndarray]:
    """Per-query indices of up to max_k cloud points within ``radius``.

    Indices are returned in ascending order; when more than max_k points
    qualify the lowest-index ones win. Empty neighborhoods yield empty lists.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if max_k < 1:
        raise ValueError("max_k must be >= 1")
    q = _as_xyz(queries)
    c = _as_xyz(cloud)
    if c.shape[0] == 0 or q.shape[0] == 0:
        return [np.zeros(0, dtype=np.int64) for _ in range(q.shape[0])]
    d2 = np.sum((q[:, None, :] - c[None, :, :]) ** 2, axis=2)
    mask = d2 <= radius * radius
    return [np.flatnonzero(row)[:max_k] for row in mask]


def ball_query_padded(
    queries_xyz: np.ndarray,
    cloud_xyz: np.ndarray,
    radius: float,
    max_k: int,
    fill_idx: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ball query returning a dense (M, max_k) index matrix.

    Rows are ascending in-radius indices; short rows are padded by repeating
    the row's first neighbor so downstream max-pools are unaffected. Rows
    with no neighbors at all are padded with ``fill_idx`` (per query) when
    given, else index 0; ``counts`` records the true neighborhood sizes.
    """
    q = np.asarray(queries_xyz, dtype=np.float64)
    c = np.asarray(cloud_xyz, dtype=np.float64)
    m, n = q.shape[0], c.shape[0]
    if n == 0:
        raise ValueError("cloud must be non-empty")
    # Norms expansion instead of an (M, N, 3) broadcast: one BLAS call and a
    # fraction of the memory traffic.
    d2 = (np.sum(q * q, axis=1)[:, None] + np.sum(c * c, axis=1)[None, :]
          - 2.0 * (q @ c.T))
    mask = d2 <= radius * radius
    counts = np.minimum(mask.sum(axis=1), max_k)
    # Column indices keyed so in-radius ones come first (ascending), sentinel
    # n after; partitioning beats a full row sort when max_k is small.
    keyed = np.where(mask, np.arange(n, dtype=np.int64)[None, :], n)
    if max_k < n:
        idx = np.sort(np.partition(keyed, max_k - 1, axis=1)[:, :max_k], axis=1)
    else:
        idx = np.sort(keyed, axis=1)[:, :max_k]
    invalid = idx >= n
    first = idx[:, 0].copy()
    empty = first >= n
    if empty.any():
        if fill_idx is not None:
            first[empty] = np.asarray(fill_idx, dtype=np.int64)[empty]
        else:
            first[empty] = 0
    idx = np.where(invalid, first[:, None], idx)
    return idx, counts
