"""Parallel construction over a binary worker topology.

Workers are arranged as a complete binary tree. Leaf slots are dealt
round-robin over the workers in descending capacity order, and every
internal (virtual) slot is taken by the most capable worker found among
the leaves below it, so one real worker can serve on several levels.

Construction starts at the topology root. While a kd node sits above the
cutoff depth (the topology height), its two halves are handed to the left
and right topology children as separate tasks; from the cutoff on, the
assigned worker finishes its subtree sequentially. Tasks write only their
own disjoint slice of the shared permutation and return private node
arenas, which the parent concatenates in pre-order. The split at every
node depends on the data alone, so the result is identical to
:func:`lidarkd.kdtree.build` whatever the worker count or timing.
"""

from __future__ import annotations

import hashlib
import math
import struct
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .cloud import PointCloud
from .errors import NoWorkers
from .kdtree import (
    BuildConfig,
    KdTree,
    Rule,
    _Arena,
    _build_range,
    _clip,
    _columns,
    _root_box,
    _split_in_place,
)

__all__ = [
    "WorkerDescriptor",
    "TopologyNode",
    "ParallelPlan",
    "TaskRecord",
    "build_topology",
    "plan_for_workers",
    "par_build",
    "canonical_bytes",
    "structural_hash",
]


@dataclass(frozen=True)
class WorkerDescriptor:
    worker_id: int
    capacity_score: float = 1.0

    def __post_init__(self):
        if not self.capacity_score >= 0:
            raise ValueError(f"capacity_score must be non-negative, got {self.capacity_score}")


@dataclass(frozen=True)
class TopologyNode:
    elected_worker: int
    level: int
    capacity: float
    left: Optional["TopologyNode"] = None
    right: Optional["TopologyNode"] = None

    def __post_init__(self):
        if (self.left is None) != (self.right is None):
            raise ValueError("a topology node has either zero or two children")

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def height(self) -> int:
        return self.level

    def walk(self) -> Iterator["TopologyNode"]:
        yield self
        if self.left is not None:
            yield from self.left.walk()
            yield from self.right.walk()

    def leaf_workers(self) -> list[int]:
        return [t.elected_worker for t in self.walk() if t.is_leaf]


def _elect(a: TopologyNode, b: TopologyNode) -> tuple[int, float]:
    # Highest capacity wins; equal capacities go to the lower worker id.
    best = min((a.capacity, a.elected_worker), (b.capacity, b.elected_worker),
               key=lambda cw: (-cw[0], cw[1]))
    return best[1], best[0]


def build_topology(workers: Sequence[WorkerDescriptor], height: int) -> TopologyNode:
    """Complete binary topology of the given height over ``workers``."""
    if not workers:
        raise NoWorkers("at least one worker is required")
    if height < 0:
        raise ValueError(f"height must be non-negative, got {height}")
    ids = [w.worker_id for w in workers]
    if len(set(ids)) != len(ids):
        raise ValueError("worker ids must be unique")
    ranked = sorted(workers, key=lambda w: (-w.capacity_score, w.worker_id))
    level = [
        TopologyNode(elected_worker=w.worker_id, level=0, capacity=w.capacity_score)
        for w in (ranked[i % len(ranked)] for i in range(2 ** height))
    ]
    for lvl in range(1, height + 1):
        parents = []
        for a, b in zip(level[0::2], level[1::2]):
            worker, capacity = _elect(a, b)
            parents.append(TopologyNode(worker, lvl, capacity, left=a, right=b))
        level = parents
    return level[0]


@dataclass(frozen=True)
class ParallelPlan:
    topology: TopologyNode
    cutoff_depth: int = -1

    def __post_init__(self):
        if self.cutoff_depth == -1:
            object.__setattr__(self, "cutoff_depth", self.topology.level)
        if self.cutoff_depth != self.topology.level:
            raise ValueError("cutoff_depth must equal the topology height")

    @property
    def n_tasks(self) -> int:
        return 2 ** (self.cutoff_depth + 1) - 1


def plan_for_workers(n_workers: int, capacities: Optional[Sequence[float]] = None) -> ParallelPlan:
    """Plan with the smallest topology giving every worker a leaf slot."""
    if n_workers < 1:
        raise NoWorkers("at least one worker is required")
    if capacities is None:
        capacities = [1.0] * n_workers
    if len(capacities) != n_workers:
        raise ValueError(f"{len(capacities)} capacity scores for {n_workers} workers")
    workers = [WorkerDescriptor(i, float(c)) for i, c in enumerate(capacities)]
    height = math.ceil(math.log2(n_workers)) if n_workers > 1 else 0
    return ParallelPlan(build_topology(workers, height))


@dataclass(frozen=True)
class TaskRecord:
    """Which worker handled which permutation slice, and at what kd depth."""

    worker: int
    level: int
    depth: int
    begin: int
    end: int
    sequential: bool
    thread: str


def par_build(
    cloud: PointCloud,
    cfg: BuildConfig,
    plan: ParallelPlan,
    trace: Optional[list[TaskRecord]] = None,
) -> KdTree:
    """Build the same tree as :func:`~lidarkd.kdtree.build`, fork-join style.

    ``trace``, when given, receives one :class:`TaskRecord` per task.
    """
    lo, hi = _root_box(cloud)
    cols = _columns(cloud)
    perm = np.arange(cloud.n, dtype=np.int64)
    leaf_size = cfg.leaf_size
    lock = threading.Lock()

    def record(topo, depth, b, e, sequential):
        if trace is not None:
            with lock:
                trace.append(TaskRecord(topo.elected_worker, topo.level, depth, b, e,
                                        sequential, threading.current_thread().name))

    def task(b, e, lo, hi, topo: TopologyNode, depth: int) -> _Arena:
        if e - b <= leaf_size or topo.is_leaf:
            record(topo, depth, b, e, True)
            return _build_range(cols, perm, b, e, lo, hi, leaf_size)
        record(topo, depth, b, e, False)
        dim, value, rule, mid = _split_in_place(cols, perm, b, e, lo, hi)
        root = _Arena()
        root.add(b, e, lo, hi, dim, value, rule)
        left_hi, right_lo = _clip(lo, hi, dim, value)
        fl = pool.submit(task, b, mid, lo, left_hi, topo.left, depth + 1)
        fr = pool.submit(task, mid, e, right_lo, hi, topo.right, depth + 1)
        return _Arena.join(root, fl.result(), fr.result())

    # One thread per topology slot: a waiting parent never starves its children.
    with ThreadPoolExecutor(max_workers=plan.n_tasks, thread_name_prefix="kd-worker") as pool:
        arena = pool.submit(task, 0, cloud.n, lo, hi, plan.topology, 0).result()
    return KdTree._from_arena(arena, perm, cols, leaf_size)


_NODE_HEAD = struct.Struct("<BbdQQ")


def canonical_bytes(tree: KdTree) -> bytes:
    """Pre-order serialization of every node.

    Per node: rule tag (0 = leaf), split dim, split value bits, range begin
    and end; each leaf is followed by its bucket's point indices as int64.
    """
    parts = [struct.pack("<QQ", tree.leaf_size, tree.n)]
    perm = np.ascontiguousarray(tree.perm, dtype="<i8")
    for i in range(tree.n_nodes):
        rule = int(tree.rule[i])
        b, e = int(tree.begin[i]), int(tree.end[i])
        if rule == Rule.LEAF:
            parts.append(_NODE_HEAD.pack(rule, -1, 0.0, b, e))
            parts.append(perm[b:e].tobytes())
        else:
            parts.append(_NODE_HEAD.pack(rule, int(tree.dim[i]), float(tree.value[i]), b, e))
    return b"".join(parts)


def structural_hash(tree: KdTree) -> int:
    """64-bit BLAKE2b digest of :func:`canonical_bytes`."""
    digest = hashlib.blake2b(canonical_bytes(tree), digest_size=8).digest()
    return int.from_bytes(digest, "little")
