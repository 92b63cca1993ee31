import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_cloud
from lidarkd.cloud import PointCloud
from lidarkd.errors import NoWorkers
from lidarkd.kdtree import BuildConfig, build
from lidarkd.parallel import (
    ParallelPlan,
    WorkerDescriptor,
    build_topology,
    canonical_bytes,
    par_build,
    plan_for_workers,
    structural_hash,
)


def workers(*caps):
    return [WorkerDescriptor(i, c) for i, c in enumerate(caps)]


class TestTopology:
    def test_single_worker(self):
        topo = build_topology(workers(1.0), 0)
        assert topo.is_leaf and topo.elected_worker == 0 and topo.height == 0

    def test_four_equal_workers(self):
        topo = build_topology(workers(1, 1, 1, 1), 2)
        assert topo.leaf_workers() == [0, 1, 2, 3]
        assert topo.elected_worker == 0
        assert topo.left.elected_worker == 0 and topo.right.elected_worker == 2

    def test_capacity_wins_election(self):
        topo = build_topology(workers(1.0, 9.0), 1)
        assert topo.elected_worker == 1
        assert topo.leaf_workers() == [1, 0]

    def test_fewer_workers_than_slots(self):
        topo = build_topology(workers(1.0, 2.0, 3.0), 2)
        assert topo.leaf_workers() == [2, 1, 0, 2]
        assert topo.elected_worker == 2

    def test_no_workers(self):
        with pytest.raises(NoWorkers):
            build_topology([], 1)
        with pytest.raises(NoWorkers):
            plan_for_workers(0)

    def test_duplicate_ids(self):
        with pytest.raises(ValueError):
            build_topology([WorkerDescriptor(1), WorkerDescriptor(1)], 1)

    def test_plan_heights(self):
        assert [plan_for_workers(n).cutoff_depth for n in (1, 2, 3, 4, 5, 8)] == [0, 1, 2, 2, 3, 3]
        assert plan_for_workers(4).n_tasks == 7

    def test_cutoff_must_match_height(self):
        with pytest.raises(ValueError):
            ParallelPlan(build_topology(workers(1, 1), 1), cutoff_depth=3)


@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=9), st.integers(0, 4))
@settings(max_examples=200, deadline=None)
def test_elected_worker_is_most_capable_leaf_below(caps, height):
    topo = build_topology(workers(*caps), height)
    for node in topo.walk():
        below = node.leaf_workers()
        best = min(below, key=lambda w: (-caps[w], w))
        assert node.elected_worker == best
        assert node.capacity == caps[best]


class TestParBuild:
    def test_height_zero_identical_bytes(self, rng):
        cloud = random_cloud(rng, 5_000)
        cfg = BuildConfig(50)
        plan = ParallelPlan(build_topology(workers(1.0), 0))
        assert canonical_bytes(par_build(cloud, cfg, plan)) == canonical_bytes(build(cloud, cfg))

    def test_four_workers_same_hash(self, rng):
        cloud = random_cloud(rng, 100_000, "clustered")
        cfg = BuildConfig(1_000)
        seq = build(cloud, cfg)
        par = par_build(cloud, cfg, plan_for_workers(4))
        assert structural_hash(par) == structural_hash(seq)
        assert np.array_equal(par.perm, seq.perm)
        assert np.array_equal(par.cell_lo, seq.cell_lo)

    def test_hash_stable_and_sensitive(self, rng):
        cloud = random_cloud(rng, 10_000)
        a = structural_hash(build(cloud, BuildConfig(100)))
        assert a == structural_hash(build(cloud, BuildConfig(100)))
        assert a != structural_hash(build(cloud, BuildConfig(1_000)))

    def test_trace_covers_permutation(self, rng):
        cloud = random_cloud(rng, 20_000)
        trace = []
        par_build(cloud, BuildConfig(100), plan_for_workers(4, [4.0, 1.0, 1.0, 2.0]), trace=trace)
        seq = sorted((t.begin, t.end) for t in trace if t.sequential)
        assert seq[0][0] == 0 and seq[-1][1] == cloud.n
        assert all(a[1] == b[0] for a, b in zip(seq, seq[1:]))
        assert {t.worker for t in trace if t.sequential} == {0, 1, 2, 3}

    def test_small_cloud_stops_early(self):
        cloud = PointCloud.from_xyz([[0, 0, 0], [1, 1, 1], [2, 2, 2]])
        trace = []
        tree = par_build(cloud, BuildConfig(10), plan_for_workers(8), trace=trace)
        assert tree.n_nodes == 1 and len(trace) == 1

    def test_duplicates(self):
        cloud = PointCloud.from_xyz(np.zeros((1_000, 3)))
        cfg = BuildConfig(7)
        assert structural_hash(par_build(cloud, cfg, plan_for_workers(3))) == structural_hash(build(cloud, cfg))
