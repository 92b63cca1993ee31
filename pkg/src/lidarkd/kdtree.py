"""Bucketed 3-d tree built with the sliding-midpoint split rule.

Layout
------
The tree is an arena of nodes numbered in pre-order (root = 0, a node's left
child is always ``id + 1``). Every node, internal or leaf, owns the
contiguous range ``perm[begin:end]`` of a global index permutation; a leaf's
range is its bucket. Cells are inherited from the root bounding box and
clipped at every split, never shrunk to the points they contain, so the
midpoint of a cell can fall outside the points and trigger a slide.

Partition rules
---------------
Each internal node records the rule that was applied to its points:

``LT``     left = {x[dim] < value}, right = {x[dim] >= value}
``LE``     left = {x[dim] <= value}, right = {x[dim] > value}
           (used after sliding the plane down onto the smallest coordinate)
``COUNT``  every point of the node is identical; the first ceil(n/2) go left
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from typing import Optional

import numpy as np

from .cloud import Aabb, PointCloud
from .errors import Degenerate, EmptyCloud

__all__ = [
    "Rule",
    "SplitPlane",
    "BuildConfig",
    "KdTree",
    "TreeStats",
    "Violation",
    "ValidationReport",
    "build",
    "choose_split",
    "partition",
    "validate",
    "stats",
]


class Rule(IntEnum):
    LEAF = 0
    LT = 1
    LE = 2
    COUNT = 3


@dataclass(frozen=True)
class SplitPlane:
    dim: int
    value: float


@dataclass(frozen=True)
class BuildConfig:
    leaf_size: int = 10_000

    def __post_init__(self):
        if int(self.leaf_size) != self.leaf_size or self.leaf_size < 1:
            raise ValueError(f"leaf_size must be a positive integer, got {self.leaf_size!r}")


def _columns(cloud: PointCloud) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return cloud.xs, cloud.ys, cloud.zs


def _split_segment(cols, seg: np.ndarray, lo, hi):
    """Choose the plane for ``seg`` and compute its left-membership mask.

    Returns ``(dim, value, rule, mask)``; ``mask`` is None for a COUNT split.
    Dimensions are tried from the longest cell side down (ties to the lower
    axis) so a side along which every point shares one coordinate is skipped.
    """
    order = sorted(range(3), key=lambda d: (-(hi[d] - lo[d]), d))
    for d in order:
        c = cols[d][seg]
        cmin = c.min()
        cmax = c.max()
        if cmin == cmax:
            continue
        mid = 0.5 * (lo[d] + hi[d])
        if cmin >= mid:
            return d, float(cmin), Rule.LE, c <= cmin
        if cmax < mid:
            return d, float(cmax), Rule.LT, c < cmax
        return d, mid, Rule.LT, c < mid
    d = order[0]
    return d, float(cols[d][seg[0]]), Rule.COUNT, None


def choose_split(indices, cell: Aabb, cloud: PointCloud) -> tuple[SplitPlane, Rule]:
    """Sliding-midpoint plane for the points ``indices`` inside ``cell``.

    The plane cuts the longest side of the cell at its midpoint. If every
    point lies on the upper side, the plane slides down to the smallest
    coordinate and the rule becomes ``LE`` so that point moves left; if every
    point lies below, it slides up to the largest coordinate under ``LT``.

    Raises :class:`Degenerate` when all points coincide.
    """
    seg = np.asarray(indices, dtype=np.int64)
    if seg.size < 2:
        raise ValueError("choose_split needs at least two points")
    dim, value, rule, _ = _split_segment(_columns(cloud), seg, cell.lo, cell.hi)
    if rule is Rule.COUNT:
        raise Degenerate(f"{seg.size} points are identical; no coordinate split exists")
    return SplitPlane(dim, value), rule


def _left_mask(c: np.ndarray, value: float, rule: Rule) -> np.ndarray:
    if rule is Rule.LE:
        return c <= value
    return c < value


def partition(segment: np.ndarray, plane: SplitPlane, rule: Rule, cloud: PointCloud):
    """Stable in-place partition of a permutation segment.

    ``segment`` is modified so left-side indices precede right-side ones;
    the two views are returned. A ``COUNT`` rule keeps the order and cuts
    after ``ceil(n / 2)`` entries.
    """
    n = segment.shape[0]
    if rule is Rule.COUNT:
        nl = (n + 1) // 2
    else:
        c = _columns(cloud)[plane.dim][segment]
        mask = _left_mask(c, plane.value, rule)
        nl = _apply_mask(segment, mask)
    return segment[:nl], segment[nl:]


def _apply_mask(segment: np.ndarray, mask: np.ndarray) -> int:
    left = segment[mask]
    right = segment[~mask]
    nl = left.shape[0]
    segment[:nl] = left
    segment[nl:] = right
    return nl


class _Arena:
    """Growable pre-order node store used while building."""

    __slots__ = ("dim", "value", "rule", "left", "right", "begin", "end", "lo", "hi")

    def __init__(self):
        for name in self.__slots__:
            setattr(self, name, [])

    def __len__(self):
        return len(self.rule)

    def add(self, begin, end, lo, hi, dim=-1, value=0.0, rule=Rule.LEAF) -> int:
        self.dim.append(dim)
        self.value.append(value)
        self.rule.append(int(rule))
        self.left.append(-1)
        self.right.append(-1)
        self.begin.append(begin)
        self.end.append(end)
        self.lo.append(lo)
        self.hi.append(hi)
        return len(self.rule) - 1

    @classmethod
    def join(cls, root: "_Arena", left: "_Arena", right: "_Arena") -> "_Arena":
        """Concatenate a one-node arena with its two subtree arenas in pre-order."""
        out = cls()
        lshift = 1
        rshift = 1 + len(left)
        for name in ("dim", "value", "rule", "begin", "end", "lo", "hi"):
            setattr(out, name, getattr(root, name) + getattr(left, name) + getattr(right, name))
        out.left = [lshift] + [c + lshift if c >= 0 else -1 for c in left.left] + [
            c + rshift if c >= 0 else -1 for c in right.left]
        out.right = [rshift] + [c + lshift if c >= 0 else -1 for c in left.right] + [
            c + rshift if c >= 0 else -1 for c in right.right]
        return out


def _clip(lo, hi, dim, value):
    left_hi = list(hi)
    left_hi[dim] = value
    right_lo = list(lo)
    right_lo[dim] = value
    return tuple(left_hi), tuple(right_lo)


def _split_in_place(cols, perm, begin, end, lo, hi):
    """Split ``perm[begin:end]`` in place; returns (dim, value, rule, mid)."""
    seg = perm[begin:end]
    dim, value, rule, mask = _split_segment(cols, seg, lo, hi)
    if rule is Rule.COUNT:
        nl = (end - begin + 1) // 2
    else:
        nl = _apply_mask(seg, mask)
    return dim, value, rule, begin + nl


def _build_range(cols, perm, begin, end, lo, hi, leaf_size) -> _Arena:
    """Sequential construction of the subtree over ``perm[begin:end]``."""
    arena = _Arena()
    stack = [(begin, end, lo, hi, -1, False)]
    while stack:
        b, e, lo, hi, parent, is_right = stack.pop()
        if e - b <= leaf_size:
            nid = arena.add(b, e, lo, hi)
        else:
            dim, value, rule, mid = _split_in_place(cols, perm, b, e, lo, hi)
            nid = arena.add(b, e, lo, hi, dim, value, rule)
            left_hi, right_lo = _clip(lo, hi, dim, value)
            stack.append((mid, e, right_lo, hi, nid, True))
            stack.append((b, mid, lo, left_hi, nid, False))
        if parent >= 0:
            (arena.right if is_right else arena.left)[parent] = nid
    return arena


@dataclass(frozen=True, eq=False)
class KdTree:
    """Immutable bucketed 3-d tree over one :class:`PointCloud`.

    ``coords`` is a ``(3, n)`` copy of the cloud coordinates in ``perm``
    order so each bucket is a contiguous slice for leaf scans.
    """

    leaf_size: int
    perm: np.ndarray
    left: np.ndarray
    right: np.ndarray
    dim: np.ndarray
    value: np.ndarray
    rule: np.ndarray
    begin: np.ndarray
    end: np.ndarray
    cell_lo: np.ndarray
    cell_hi: np.ndarray
    coords: np.ndarray = field(repr=False)
    root: int = 0
    dims: int = 3

    @property
    def n(self) -> int:
        return self.perm.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.rule.shape[0]

    @property
    def root_cell(self) -> Aabb:
        return self.cell(self.root)

    def cell(self, node: int) -> Aabb:
        return Aabb(tuple(self.cell_lo[node]), tuple(self.cell_hi[node]))

    def is_leaf(self, node: int) -> bool:
        return self.rule[node] == Rule.LEAF

    def split(self, node: int) -> Optional[SplitPlane]:
        if self.is_leaf(node):
            return None
        return SplitPlane(int(self.dim[node]), float(self.value[node]))

    def bucket(self, node: int) -> np.ndarray:
        return self.perm[self.begin[node]:self.end[node]]

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.rule == Rule.LEAF)

    @cached_property
    def _lists(self):
        # Plain Python lists make per-node access in the query loop cheap.
        return (
            self.left.tolist(), self.right.tolist(), self.dim.tolist(),
            self.value.tolist(), self.rule.tolist(), self.begin.tolist(),
            self.end.tolist(), self.cell_lo.tolist(), self.cell_hi.tolist(),
        )

    @classmethod
    def _from_arena(cls, arena: _Arena, perm: np.ndarray, cols, leaf_size: int) -> "KdTree":
        def frozen(a):
            a.flags.writeable = False
            return a

        coords = np.empty((3, perm.shape[0]), dtype=np.float64)
        for d in range(3):
            np.take(cols[d], perm, out=coords[d])
        return cls(
            leaf_size=int(leaf_size),
            perm=frozen(perm),
            left=frozen(np.array(arena.left, dtype=np.int64)),
            right=frozen(np.array(arena.right, dtype=np.int64)),
            dim=frozen(np.array(arena.dim, dtype=np.int8)),
            value=frozen(np.array(arena.value, dtype=np.float64)),
            rule=frozen(np.array(arena.rule, dtype=np.int8)),
            begin=frozen(np.array(arena.begin, dtype=np.int64)),
            end=frozen(np.array(arena.end, dtype=np.int64)),
            cell_lo=frozen(np.array(arena.lo, dtype=np.float64).reshape(-1, 3)),
            cell_hi=frozen(np.array(arena.hi, dtype=np.float64).reshape(-1, 3)),
            coords=frozen(coords),
        )


def _root_box(cloud: PointCloud):
    if cloud.n == 0:
        raise EmptyCloud("cannot build a tree over an empty point cloud")
    box = cloud.bbox
    return box.lo, box.hi


def build(cloud: PointCloud, cfg: BuildConfig = BuildConfig()) -> KdTree:
    """Build the tree sequentially.

    A node becomes a leaf once it holds at most ``cfg.leaf_size`` points;
    otherwise its points are split by :func:`choose_split` and both halves
    are built recursively (with an explicit stack, so deep trees over
    adversarial inputs do not hit the interpreter's recursion limit).
    """
    lo, hi = _root_box(cloud)
    cols = _columns(cloud)
    perm = np.arange(cloud.n, dtype=np.int64)
    arena = _build_range(cols, perm, 0, cloud.n, lo, hi, cfg.leaf_size)
    return KdTree._from_arena(arena, perm, cols, cfg.leaf_size)


@dataclass(frozen=True)
class TreeStats:
    depth: int
    n_internal: int
    n_leaves: int
    min_bucket: int
    mean_bucket: float
    max_bucket: int
    memory_bytes: int


def node_depths(tree: KdTree) -> np.ndarray:
    depth = np.zeros(tree.n_nodes, dtype=np.int64)
    left, right = tree.left, tree.right
    for i in np.flatnonzero(tree.rule != Rule.LEAF).tolist():
        depth[left[i]] = depth[i] + 1
        depth[right[i]] = depth[i] + 1
    return depth


def stats(tree: KdTree) -> TreeStats:
    leaves = tree.leaves()
    sizes = tree.end[leaves] - tree.begin[leaves]
    memory = sum(
        a.nbytes for a in (
            tree.perm, tree.left, tree.right, tree.dim, tree.value, tree.rule,
            tree.begin, tree.end, tree.cell_lo, tree.cell_hi, tree.coords,
        )
    )
    return TreeStats(
        depth=int(node_depths(tree).max()),
        n_internal=int(tree.n_nodes - leaves.size),
        n_leaves=int(leaves.size),
        min_bucket=int(sizes.min()),
        mean_bucket=float(sizes.mean()),
        max_bucket=int(sizes.max()),
        memory_bytes=int(memory),
    )


@dataclass(frozen=True)
class Violation:
    node: int
    kind: str
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def add(self, node: int, kind: str, detail: str) -> None:
        self.violations.append(Violation(int(node), kind, detail))


def validate(tree: KdTree, cloud: PointCloud) -> ValidationReport:
    """Check every structural invariant of ``tree`` against ``cloud``.

    Violation kinds: ``covering`` (perm is not a permutation, or buckets do
    not tile ``[0, n)``), ``capacity``, ``structure`` (bad child links or
    ranges, empty children, splits of nodes that fit in a bucket),
    ``side`` (a point on the wrong side of its node's plane), ``cell``
    (child cell not the clipped parent cell, split value outside the cell,
    or a point outside its leaf cell).
    """
    report = ValidationReport()
    n = cloud.n
    m = tree.n_nodes
    perm = np.asarray(tree.perm)

    if perm.shape[0] != n:
        report.add(tree.root, "covering", f"perm has {perm.shape[0]} entries for {n} points")
    in_range = (perm >= 0) & (perm < n)
    if not in_range.all():
        report.add(tree.root, "covering", f"{int((~in_range).sum())} perm entries out of range")
    counts = np.bincount(perm[in_range], minlength=n)
    if (counts != 1).any():
        dup = int((counts > 1).sum())
        miss = int((counts == 0).sum())
        report.add(tree.root, "covering", f"{dup} indices repeated, {miss} missing from perm")

    begin, end = tree.begin, tree.end
    if m == 0:
        report.add(0, "structure", "tree has no nodes")
        return report
    if begin[tree.root] != 0 or end[tree.root] != perm.shape[0]:
        report.add(tree.root, "covering", "root range does not span the permutation")

    leaves = tree.leaves()
    lb, le = begin[leaves], end[leaves]
    order = np.argsort(lb, kind="stable")
    lb, le, leaves_sorted = lb[order], le[order], leaves[order]
    if lb.size and (lb[0] != 0 or le[-1] != perm.shape[0] or (lb[1:] != le[:-1]).any()):
        report.add(tree.root, "covering", "leaf buckets overlap or leave gaps")
    for leaf in leaves_sorted[(le - lb) > tree.leaf_size].tolist():
        report.add(leaf, "capacity", f"bucket holds {int(end[leaf] - begin[leaf])} > {tree.leaf_size} points")
    for leaf in leaves_sorted[(le - lb) < 1].tolist():
        report.add(leaf, "structure", "empty bucket")

    coords = (cloud.xs, cloud.ys, cloud.zs)
    lo, hi = tree.cell_lo, tree.cell_hi
    root_box = cloud.bbox
    if root_box is not None and (tuple(lo[0]) != root_box.lo or tuple(hi[0]) != root_box.hi):
        report.add(tree.root, "cell", "root cell differs from the cloud bounding box")

    safe_perm = np.where(in_range, perm, 0)
    for i in np.flatnonzero(tree.rule != Rule.LEAF).tolist():
        l, r = int(tree.left[i]), int(tree.right[i])
        if not (0 < l < m and 0 < r < m):
            report.add(i, "structure", f"child ids ({l}, {r}) out of range")
            continue
        if begin[l] != begin[i] or end[l] != begin[r] or end[r] != end[i]:
            report.add(i, "structure", "child ranges do not split the parent range")
            continue
        if end[l] - begin[l] < 1 or end[r] - begin[r] < 1:
            report.add(i, "structure", "internal node with an empty child")
        if end[i] - begin[i] <= tree.leaf_size:
            report.add(i, "structure", "node split although it fits in one bucket")

        d = int(tree.dim[i])
        v = float(tree.value[i])
        rule = Rule(int(tree.rule[i]))
        if not (lo[i, d] <= v <= hi[i, d]):
            report.add(i, "cell", f"split value {v} outside cell extent along dim {d}")
        left_hi, right_lo = _clip(tuple(lo[i]), tuple(hi[i]), d, v)
        if tuple(lo[l]) != tuple(lo[i]) or tuple(hi[l]) != left_hi:
            report.add(i, "cell", "left cell is not the parent cell clipped at the plane")
        if tuple(lo[r]) != right_lo or tuple(hi[r]) != tuple(hi[i]):
            report.add(i, "cell", "right cell is not the parent cell clipped at the plane")

        cl = coords[d][safe_perm[begin[l]:end[l]]]
        cr = coords[d][safe_perm[begin[r]:end[r]]]
        if rule is Rule.LT:
            bad = int((cl >= v).sum() + (cr < v).sum())
        elif rule is Rule.LE:
            bad = int((cl > v).sum() + (cr <= v).sum())
        elif rule is Rule.COUNT:
            seg = safe_perm[begin[i]:end[i]]
            bad = int((cl != v).sum() + (cr != v).sum())
            if any(np.ptp(c[seg]) != 0 for c in coords):
                report.add(i, "side", "count split over points that are not all identical")
            if end[l] - begin[l] != (end[i] - begin[i] + 1) // 2:
                report.add(i, "side", "count split does not put ceil(n/2) points left")
        else:
            report.add(i, "structure", f"unknown rule tag {int(tree.rule[i])}")
            continue
        if bad:
            report.add(i, "side", f"{bad} points on the wrong side of ({d}, {v}, {rule.name})")

    # Every point lies in its leaf cell; nesting extends that to all ancestors.
    sizes = np.clip(le - lb, 0, None)
    if sizes.sum() == perm.shape[0]:
        owner = np.repeat(leaves_sorted, sizes)
        pts = np.stack([c[safe_perm] for c in coords], axis=1)
        outside = ((pts < lo[owner]) | (pts > hi[owner])).any(axis=1)
        for leaf in np.unique(owner[outside]).tolist():
            report.add(leaf, "cell", "bucket point outside the leaf cell")

    if not np.array_equal(tree.coords, np.stack([c[safe_perm] for c in coords])):
        report.add(tree.root, "covering", "packed coordinates disagree with perm order")
    return report
