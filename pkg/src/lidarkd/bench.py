"""Synthetic clouds and the leaf-size sweep (build time vs. query time).

Generation is fully specified so any implementation can reproduce a cloud
bit for bit:

* Random stream: splitmix64 seeded with ``seed``; the i-th output
  (i = 1, 2, ...) is ``mix(seed + i * 0x9E3779B97F4A7C15 mod 2**64)``.
* Unit uniforms: ``(v >> 11) * 2**-53``, in [0, 1).
* ``uniform`` mode: point i takes outputs 3i+1, 3i+2, 3i+3 for x, y, z,
  each mapped as ``lo + u * (hi - lo)``.
* ``clustered`` mode: the first ``3 * clusters`` outputs place the cluster
  centres uniformly in the box (same map). Point i belongs to cluster
  ``i % clusters`` and consumes the next four uniforms u1..u4:
  ``r = sqrt(-2 ln(1 - u1))``, ``dx = r cos(2 pi u2)``, ``dy = r sin(2 pi u2)``,
  ``s = sqrt(-2 ln(1 - u3))``, ``dz = s cos(2 pi u4)``, and lies at
  ``centre + sigma * (dx, dy, dz)``.
"""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence, TextIO

import numpy as np

from .cloud import Aabb, PointCloud
from .errors import DataError, InvalidSpec
from .kdtree import BuildConfig, build
from .knn import knn
from .parallel import par_build, plan_for_workers

__all__ = [
    "GenSpec",
    "BenchRecord",
    "SweepMismatch",
    "splitmix64",
    "uniforms",
    "generate",
    "query_points",
    "sweep",
    "write_csv",
    "read_csv",
    "DEFAULT_LEAF_SIZES",
    "CSV_HEADER",
]

DEFAULT_LEAF_SIZES = (1_000, 5_000, 10_000, 50_000, 100_000, 200_000, 500_000, 1_000_000)
CSV_HEADER = "n_points,leaf_size,build_ms,avg_query_us,k,n_queries,seed,workers"

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1
UNIT_BOX = Aabb((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))

# Queries use a stream distinct from the cloud's when both derive from one seed.
QUERY_SEED_SALT = 0x5DEECE66D


def splitmix64(seed: int, count: int, start: int = 0) -> np.ndarray:
    """Outputs ``start + 1 .. start + count`` of the splitmix64 stream."""
    i = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    z = np.uint64(seed & _MASK64) + i * _GAMMA
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def uniforms(seed: int, count: int, start: int = 0) -> np.ndarray:
    return (splitmix64(seed, count, start) >> np.uint64(11)).astype(np.float64) * 2.0**-53


@dataclass(frozen=True)
class GenSpec:
    n: int
    mode: str = "uniform"
    bbox: Aabb = UNIT_BOX
    clusters: int = 8
    sigma: float = 0.01
    seed: int = 0

    def validate(self) -> None:
        if self.n < 1:
            raise InvalidSpec(f"n must be >= 1, got {self.n}")
        if self.mode not in ("uniform", "clustered"):
            raise InvalidSpec(f"mode must be 'uniform' or 'clustered', got {self.mode!r}")
        if not 0 <= self.seed <= _MASK64:
            raise InvalidSpec("seed must fit in an unsigned 64-bit integer")
        if self.mode == "clustered":
            if self.clusters < 1:
                raise InvalidSpec(f"clusters must be >= 1, got {self.clusters}")
            if not self.sigma > 0:
                raise InvalidSpec(f"sigma must be > 0, got {self.sigma}")


def _into_box(u: np.ndarray, box: Aabb) -> np.ndarray:
    lo = np.asarray(box.lo)
    hi = np.asarray(box.hi)
    return lo + u.reshape(-1, 3) * (hi - lo)


def cluster_centres(spec: GenSpec) -> np.ndarray:
    return _into_box(uniforms(spec.seed, 3 * spec.clusters), spec.bbox)


def generate(spec: GenSpec) -> PointCloud:
    spec.validate()
    if spec.mode == "uniform":
        return PointCloud.from_xyz(_into_box(uniforms(spec.seed, 3 * spec.n), spec.bbox))

    centres = cluster_centres(spec)
    u = uniforms(spec.seed, 4 * spec.n, start=3 * spec.clusters).reshape(-1, 4)
    r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    s = np.sqrt(-2.0 * np.log1p(-u[:, 2]))
    a = 2.0 * np.pi * u[:, 1]
    b = 2.0 * np.pi * u[:, 3]
    offsets = np.column_stack((r * np.cos(a), r * np.sin(a), s * np.cos(b)))
    owner = np.arange(spec.n) % spec.clusters
    return PointCloud.from_xyz(centres[owner] + spec.sigma * offsets)


def query_points(box: Aabb, n_queries: int, seed: int) -> np.ndarray:
    """``n_queries`` points drawn uniformly in ``box`` (shape ``(n, 3)``)."""
    return _into_box(uniforms(seed, 3 * n_queries), box)


@dataclass(frozen=True)
class BenchRecord:
    n_points: int
    leaf_size: int
    build_ms: float
    avg_query_us: float
    k: int
    n_queries: int
    seed: int
    workers: int


class SweepMismatch(DataError):
    """kNN answers differed between two leaf sizes of one sweep."""


def sweep(
    cloud: PointCloud,
    leaf_sizes: Sequence[int] = DEFAULT_LEAF_SIZES,
    k: int = 50,
    n_queries: int = 10,
    query_seed: int = 0,
    workers: int = 1,
    seed: Optional[int] = None,
    capacities: Optional[Sequence[float]] = None,
    results: Optional[dict] = None,
) -> list[BenchRecord]:
    """Time one build and ``n_queries`` k-NN queries per leaf size.

    The same query points (uniform in the cloud's box, from ``query_seed``)
    are used for every leaf size, and the answers must agree across leaf
    sizes; a disagreement raises :class:`SweepMismatch`. ``seed`` is only
    recorded in the output rows (default: ``query_seed``). When ``results``
    is a dict it receives ``leaf_size -> list of neighbour lists``.
    """
    if not leaf_sizes:
        raise ValueError("leaf_sizes must not be empty")
    plan = plan_for_workers(workers, capacities) if workers > 1 else None

    def make(leaf_size):
        cfg = BuildConfig(leaf_size)
        return build(cloud, cfg) if plan is None else par_build(cloud, cfg, plan)

    queries = [tuple(q) for q in query_points(cloud.bbox, n_queries, query_seed).tolist()]
    make(min(leaf_sizes))  # warm-up, untimed

    records = []
    reference = None
    for leaf_size in leaf_sizes:
        t0 = time.perf_counter()
        tree = make(leaf_size)
        build_s = time.perf_counter() - t0

        answers = []
        t0 = time.perf_counter()
        for q in queries:
            answers.append(knn(tree, cloud, q, k))
        query_s = time.perf_counter() - t0
        del tree

        if reference is None:
            reference = (leaf_size, answers)
        elif answers != reference[1]:
            bad = next(i for i, (a, b) in enumerate(zip(answers, reference[1])) if a != b)
            raise SweepMismatch(
                f"query {bad} answered differently at leaf_size={leaf_size} "
                f"and leaf_size={reference[0]}"
            )
        if results is not None:
            results[leaf_size] = answers
        records.append(BenchRecord(
            n_points=cloud.n,
            leaf_size=int(leaf_size),
            build_ms=build_s * 1e3,
            avg_query_us=query_s * 1e6 / n_queries if n_queries else 0.0,
            k=k,
            n_queries=n_queries,
            seed=query_seed if seed is None else seed,
            workers=workers,
        ))
    return records


def write_csv(records: Sequence[BenchRecord], sink: TextIO) -> int:
    """Write the CSV table; returns the number of bytes written (UTF-8)."""
    lines = [CSV_HEADER]
    for r in records:
        lines.append(",".join(
            repr(v) if isinstance(v, float) else str(v) for v in asdict(r).values()
        ))
    text = "\n".join(lines) + "\n"
    sink.write(text)
    return len(text.encode("utf-8"))


def read_csv(source: TextIO) -> list[BenchRecord]:
    reader = csv.reader(source)
    header = next(reader)
    if ",".join(header) != CSV_HEADER:
        raise DataError(f"unexpected CSV header {header!r}")
    kinds = [f.type for f in fields(BenchRecord)]
    out = []
    for row in reader:
        if not row:
            continue
        out.append(BenchRecord(*(float(v) if t in (float, "float") else int(v) for v, t in zip(row, kinds))))
    return out
