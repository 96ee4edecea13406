"""Cross-modal pair construction: IoU positives and KNN negatives.

Positive pairs match LiDAR boxes to camera boxes one-to-one by greedy
argmax IoU (LiDAR index order, ties to the lower camera index), thresholded
at tau_iou.  Negatives are the K nearest camera instances around each
positive pair's anchor, found with a balanced KD-tree whose answers are
exact: neighbors are ordered by (squared distance, index), so any tie
resolves to the lower index, matching a brute-force distance sort.

IoU is axis-aligned throughout; proposal yaw never enters the box geometry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class EmptyInputError(ValueError):
    """KD-tree build requires at least one point."""


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned BEV box: center (cx, cy) with extents w (x) and h (y)."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if self.w < 0 or self.h < 0:
            raise ValueError("box extents must be non-negative")

    @property
    def area(self) -> float:
        return self.w * self.h


def iou(a: Box2D, b: Box2D) -> float:
    """Intersection over union of two axis-aligned boxes; 0 when disjoint
    or when both are degenerate.

    Areas are computed from the same rounded corner coordinates as the
    intersection, which keeps the result in [0, 1] and makes iou(a, a)
    exactly 1 even when w/2 is inexact in binary."""
    ax0, ax1 = a.cx - a.w / 2, a.cx + a.w / 2
    ay0, ay1 = a.cy - a.h / 2, a.cy + a.h / 2
    bx0, bx1 = b.cx - b.w / 2, b.cx + b.w / 2
    by0, by1 = b.cy - b.h / 2, b.cy + b.h / 2
    ix = min(ax1, bx1) - max(ax0, bx0)
    iy = min(ay1, by1) - max(ay0, by0)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def positive_pairs(
    boxes_lidar: list[Box2D], boxes_camera: list[Box2D], tau_iou: float
) -> list[tuple[int, int]]:
    """Greedy one-to-one matching: for each LiDAR index in order, claim the
    still-free camera box with the highest IoU >= tau_iou (ties to the lower
    camera index).  Each camera box serves at most one LiDAR box."""
    if not 0.0 < tau_iou <= 1.0:
        raise ValueError(f"tau_iou must be in (0, 1], got {tau_iou}")
    taken: set[int] = set()
    pairs: list[tuple[int, int]] = []
    for i, bl in enumerate(boxes_lidar):
        best_j = -1
        best = 0.0
        for j, bc in enumerate(boxes_camera):
            if j in taken:
                continue
            v = iou(bl, bc)
            if v >= tau_iou and v > best:
                best = v
                best_j = j
        if best_j >= 0:
            pairs.append((i, best_j))
            taken.add(best_j)
    return pairs


class KdIndex:
    """Balanced 2-D KD-tree over a fixed point set.

    Built by median splits on alternating axes.  k-nearest queries rank
    candidates by (squared distance, index) so results are identical to a
    brute-force sort under the lower-index tie rule.
    """

    __slots__ = ("points", "_node", "_left", "_right", "_axis", "_n_nodes")

    def __init__(self, points: np.ndarray | list[tuple[float, float]]):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"points must be (N, 2), got shape {pts.shape}")
        if pts.shape[0] == 0:
            raise EmptyInputError("cannot index an empty point set")
        if not np.isfinite(pts).all():
            raise ValueError("points must be finite")
        self.points = pts
        n = pts.shape[0]
        # flat tree storage: node id -> point index, children, split axis
        self._node = np.empty(n, dtype=np.int64)
        self._left = np.full(n, -1, dtype=np.int64)
        self._right = np.full(n, -1, dtype=np.int64)
        self._axis = np.empty(n, dtype=np.int64)
        self._n_nodes = 0
        self._build(np.arange(n), 0)

    def _build(self, indices: np.ndarray, depth: int) -> int:
        if indices.size == 0:
            return -1
        axis = depth % 2
        mid = indices.size // 2
        order = np.argpartition(self.points[indices, axis], mid)
        indices = indices[order]
        node = self._n_nodes
        self._n_nodes += 1
        self._node[node] = indices[mid]
        self._axis[node] = axis
        left = self._build(indices[:mid], depth + 1)
        right = self._build(indices[mid + 1 :], depth + 1)
        self._left[node] = left
        self._right[node] = right
        return node

    def query(self, point: tuple[float, float], k: int) -> list[int]:
        """Indices of the k nearest points to `point`, ordered by ascending
        distance with ties to the lower index.  Returns all points if k
        exceeds the set size."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        q = np.asarray(point, dtype=np.float64)
        k = min(k, self.points.shape[0])
        # best: ascending (d2, idx); worst kept last
        best: list[tuple[float, int]] = []
        self._search(0, q, k, best)
        return [idx for _, idx in best]

    def _search(self, node: int, q: np.ndarray, k: int, best: list[tuple[float, int]]) -> None:
        if node < 0:
            return
        idx = int(self._node[node])
        p = self.points[idx]
        dx = q[0] - p[0]
        dy = q[1] - p[1]
        cand = (dx * dx + dy * dy, idx)
        if len(best) < k:
            _insort(best, cand)
        elif cand < best[-1]:
            best.pop()
            _insort(best, cand)
        axis = int(self._axis[node])
        delta = q[axis] - p[axis]
        near, far = (self._left[node], self._right[node]) if delta < 0 else (
            self._right[node],
            self._left[node],
        )
        self._search(int(near), q, k, best)
        # descend the far side unless the splitting plane is strictly farther
        # than the current worst; at equality a lower-index tie may hide there
        if len(best) < k or delta * delta <= best[-1][0]:
            self._search(int(far), q, k, best)


def _insort(best: list[tuple[float, int]], cand: tuple[float, int]) -> None:
    lo, hi = 0, len(best)
    while lo < hi:
        mid = (lo + hi) // 2
        if best[mid] < cand:
            lo = mid + 1
        else:
            hi = mid
    best.insert(lo, cand)


def build_kd(centers: np.ndarray | list[tuple[float, float]]) -> KdIndex:
    return KdIndex(centers)


def knn_negatives(
    pair: tuple[int, int],
    boxes_camera: list[Box2D],
    index: KdIndex,
    k: int,
    anchor: tuple[float, float] | None = None,
) -> list[int]:
    """K camera indices nearest the positive pair's anchor (the matched
    camera center unless an explicit anchor is given), excluding the paired
    camera index itself, ordered by ascending distance."""
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    _, j = pair
    if anchor is None:
        anchor = (boxes_camera[j].cx, boxes_camera[j].cy)
    # query one extra so dropping j still leaves k candidates when possible
    got = index.query(anchor, min(k + 1, len(boxes_camera)))
    out = [idx for idx in got if idx != j]
    return out[:k]


@dataclass(frozen=True)
class PairConfig:
    """Knobs for pair construction.

    anchor selects where KNN negatives are centered: "camera" (the matched
    camera box, noise-free anchor) or "lidar" (the LiDAR box center).
    """

    tau_iou: float = 0.1
    k_negatives: int = 8
    anchor: str = "camera"

    def __post_init__(self) -> None:
        if not 0.0 < self.tau_iou <= 1.0:
            raise ValueError(f"tau_iou must be in (0, 1], got {self.tau_iou}")
        if self.k_negatives < 1:
            raise ValueError(f"k_negatives must be >= 1, got {self.k_negatives}")
        if self.anchor not in ("camera", "lidar"):
            raise ValueError(f"anchor must be 'camera' or 'lidar', got {self.anchor!r}")


@dataclass(frozen=True)
class PairSet:
    """Positive index pairs and their per-pair negative camera indices.

    positives[p] = (lidar_idx, camera_idx); negatives[p] lists min(K, N-1)
    distinct camera indices, never containing positives[p][1].
    """

    tau_iou: float
    k_negatives: int
    positives: tuple[tuple[int, int], ...]
    negatives: tuple[tuple[int, ...], ...] = field(default=())

    def __post_init__(self) -> None:
        if len(self.negatives) not in (0, len(self.positives)):
            raise ValueError("negatives must parallel positives")
        for (_, j), negs in zip(self.positives, self.negatives):
            if j in negs:
                raise ValueError("negative list contains the paired camera index")
            if len(set(negs)) != len(negs):
                raise ValueError("negative list contains duplicates")

    def to_dict(self) -> dict:
        return {
            "tau_iou": self.tau_iou,
            "K": self.k_negatives,
            "positives": [list(p) for p in self.positives],
            "negatives": [list(n) for n in self.negatives],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PairSet":
        return cls(
            tau_iou=d["tau_iou"],
            k_negatives=d["K"],
            positives=tuple((int(i), int(j)) for i, j in d["positives"]),
            negatives=tuple(tuple(int(k) for k in n) for n in d["negatives"]),
        )


def build_pairs(
    boxes_lidar: list[Box2D], boxes_camera: list[Box2D], cfg: PairConfig
) -> PairSet:
    """Positive pairs by IoU plus per-pair KNN negatives over camera centers."""
    pos = positive_pairs(boxes_lidar, boxes_camera, cfg.tau_iou)
    if not pos:
        return PairSet(cfg.tau_iou, cfg.k_negatives, ())
    index = build_kd([(b.cx, b.cy) for b in boxes_camera])
    negs = []
    for i, j in pos:
        anchor = None if cfg.anchor == "camera" else (boxes_lidar[i].cx, boxes_lidar[i].cy)
        negs.append(tuple(knn_negatives((i, j), boxes_camera, index, cfg.k_negatives, anchor)))
    return PairSet(cfg.tau_iou, cfg.k_negatives, tuple(pos), tuple(negs))
