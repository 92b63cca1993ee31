"""k-nearest-neighbour search over a :class:`~lidarkd.kdtree.KdTree`.

Distances are squared Euclidean everywhere. Results are ordered by
``(sqdist, index)``, so equal distances resolve to the lower point index and
the tree search returns exactly what the exhaustive scan returns.
"""

from __future__ import annotations

import heapq
import math
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .cloud import Aabb, PointCloud
from .errors import EmptyTree
from .kdtree import KdTree, Rule

__all__ = ["Neighbor", "KnnQueue", "knn", "brute_force_knn", "min_sqdist_point_cell"]


class Neighbor(NamedTuple):
    index: int
    sqdist: float

    @property
    def distance(self) -> float:
        return math.sqrt(self.sqdist)


class KnnQueue:
    """Bounded max-heap holding the best ``k`` (sqdist, index) pairs seen."""

    __slots__ = ("k", "_heap")

    def __init__(self, k: int):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        self.k = k
        # Entries are (-sqdist, -index): the heap top is the worst candidate
        # under the (sqdist, index) order.
        self._heap: list[tuple[float, int]] = []

    def __len__(self) -> int:
        return len(self._heap)

    @property
    def full(self) -> bool:
        return len(self._heap) >= self.k

    @property
    def worst(self) -> float:
        """Squared radius of the search ball; infinite until ``k`` are held."""
        if len(self._heap) < self.k:
            return math.inf
        return -self._heap[0][0]

    def push(self, sqdist: float, index: int) -> bool:
        entry = (-sqdist, -index)
        heap = self._heap
        if len(heap) < self.k:
            heapq.heappush(heap, entry)
            return True
        if entry > heap[0]:
            heapq.heapreplace(heap, entry)
            return True
        return False

    def push_many(self, sqdists: np.ndarray, indices: np.ndarray) -> None:
        if len(self._heap) >= self.k:
            keep = sqdists <= self.worst
            sqdists = sqdists[keep]
            indices = indices[keep]
        if sqdists.shape[0] > self.k:
            # Only the k smallest distances (plus anything tied with the
            # k-th) can survive; drop the rest before the Python loop.
            kth = np.partition(sqdists, self.k - 1)[self.k - 1]
            keep = sqdists <= kth
            sqdists = sqdists[keep]
            indices = indices[keep]
        push = self.push
        for d, i in zip(sqdists.tolist(), indices.tolist()):
            push(d, i)

    def result(self) -> list[Neighbor]:
        return [Neighbor(-i, -d) for d, i in sorted(self._heap, reverse=True)]


def _check_query(q: Sequence[float]) -> tuple[float, float, float]:
    if len(q) != 3:
        raise ValueError(f"query point must have 3 coordinates, got {len(q)}")
    qx, qy, qz = (float(v) for v in q)
    if not (math.isfinite(qx) and math.isfinite(qy) and math.isfinite(qz)):
        raise ValueError("query point must be finite")
    return qx, qy, qz


def _sqdists(xs: np.ndarray, ys: np.ndarray, zs: np.ndarray, q) -> np.ndarray:
    # Evaluated as (dx*dx + dy*dy) + dz*dz; the cell bound below uses the same
    # association so a point's distance is never below its cell's bound.
    d = xs - q[0]
    out = d * d
    d = ys - q[1]
    out += d * d
    d = zs - q[2]
    out += d * d
    return out


def min_sqdist_point_cell(q: Sequence[float], cell: Aabb) -> float:
    """Squared distance from ``q`` to the closest point of the closed box."""
    acc = 0.0
    for v, a, b in zip(q, cell.lo, cell.hi):
        t = max(a - v, 0.0, v - b)
        acc += t * t
    return acc


def brute_force_knn(
    cloud: PointCloud,
    q: Sequence[float],
    k: int,
    indices: Optional[np.ndarray] = None,
) -> list[Neighbor]:
    """Exhaustive k-NN over the whole cloud, or over ``indices`` only."""
    q = _check_query(q)
    queue = KnnQueue(k)
    if indices is None:
        idx = np.arange(cloud.n, dtype=np.int64)
        d = _sqdists(cloud.xs, cloud.ys, cloud.zs, q)
    else:
        idx = np.asarray(indices, dtype=np.int64)
        d = _sqdists(cloud.xs[idx], cloud.ys[idx], cloud.zs[idx], q)
    queue.push_many(d, idx)
    return queue.result()


def knn(
    tree: KdTree,
    cloud: PointCloud,
    q: Sequence[float],
    k: int,
    pruned: Optional[list] = None,
) -> list[Neighbor]:
    """The ``min(k, n)`` nearest points to ``q``, sorted by (sqdist, index).

    Depth-first descent visiting the child on ``q``'s side of each plane
    first. A subtree is skipped when the queue is full and its cell lies
    strictly farther than the current k-th candidate; cells at exactly that
    distance are still visited because they may hold an equally distant
    point with a lower index.

    If ``pruned`` is a list, the ids of skipped subtrees are appended to it.
    """
    if tree.n == 0:
        raise EmptyTree("tree holds no points")
    if cloud.n != tree.n:
        raise ValueError(f"tree was built over {tree.n} points, cloud has {cloud.n}")
    qx, qy, qz = q = _check_query(q)
    queue = KnnQueue(k)
    left, right, dim, value, rule, begin, end, lo, hi = tree._lists
    px, py, pz = tree.coords
    perm = tree.perm
    le = int(Rule.LE)

    stack = [(tree.root, 0.0)]
    while stack:
        node, bound = stack.pop()
        if bound > queue.worst:
            if pruned is not None:
                pruned.append(node)
            continue
        r = rule[node]
        if r == 0:
            b, e = begin[node], end[node]
            queue.push_many(_sqdists(px[b:e], py[b:e], pz[b:e], q), perm[b:e])
            continue
        d = dim[node]
        qd = q[d]
        v = value[node]
        near_left = qd <= v if r == le else qd < v
        near, far = (left[node], right[node]) if near_left else (right[node], left[node])
        flo, fhi = lo[far], hi[far]
        t0 = max(flo[0] - qx, 0.0, qx - fhi[0])
        t1 = max(flo[1] - qy, 0.0, qy - fhi[1])
        t2 = max(flo[2] - qz, 0.0, qz - fhi[2])
        far_bound = t0 * t0 + t1 * t1 + t2 * t2
        if far_bound <= queue.worst:
            stack.append((far, far_bound))
        elif pruned is not None:
            pruned.append(far)
        # The near cell keeps the parent's extent on q's side of the plane, so
        # its bound equals the parent's.
        stack.append((near, bound))
    return queue.result()
