import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import full_sort_knn, random_cloud
from lidarkd.cloud import Aabb, PointCloud
from lidarkd.errors import EmptyTree
from lidarkd.kdtree import BuildConfig, build
from lidarkd.knn import KnnQueue, Neighbor, brute_force_knn, knn, min_sqdist_point_cell


def pairs(result):
    return [(n.index, n.sqdist) for n in result]


class TestCellBound:
    box = Aabb((0, 0, 0), (1, 1, 1))

    def test_inside(self):
        assert min_sqdist_point_cell((0.5, 0.5, 0.5), self.box) == 0.0

    def test_face(self):
        assert min_sqdist_point_cell((3, 0, 0), self.box) == 4.0

    def test_edge(self):
        assert min_sqdist_point_cell((2, 2, 0), self.box) == 2.0

    def test_corner(self):
        assert min_sqdist_point_cell((-1, -1, -1), self.box) == 3.0


class TestQueue:
    def test_keeps_best_k(self):
        q = KnnQueue(2)
        for d, i in [(5.0, 0), (1.0, 1), (3.0, 2), (0.5, 3)]:
            q.push(d, i)
        assert q.result() == [Neighbor(3, 0.5), Neighbor(1, 1.0)]
        assert q.worst == 1.0 and q.full

    def test_tie_prefers_lower_index(self):
        q = KnnQueue(1)
        q.push(1.0, 7)
        assert q.push(1.0, 3)
        assert not q.push(1.0, 9)
        assert q.result() == [Neighbor(3, 1.0)]

    def test_worst_infinite_until_full(self):
        q = KnnQueue(3)
        q.push(1.0, 0)
        assert q.worst == math.inf and not q.full

    def test_push_many_matches_push(self, rng):
        d = rng.integers(0, 5, 200).astype(float)
        idx = rng.permutation(200)
        a, b = KnnQueue(17), KnnQueue(17)
        a.push_many(d, idx)
        for x, i in zip(d.tolist(), idx.tolist()):
            b.push(x, i)
        assert a.result() == b.result()

    def test_bad_k(self):
        with pytest.raises(ValueError):
            KnnQueue(0)


class TestKnn:
    def test_self_query(self, rng):
        cloud = random_cloud(rng, 2_000)
        tree = build(cloud, BuildConfig(16))
        for i in (0, 999, 1999):
            assert knn(tree, cloud, cloud.point(i), 1) == [Neighbor(i, 0.0)]

    def test_equidistant_pair(self):
        cloud = PointCloud.from_xyz([[0, 0, 0], [1, 0, 0], [3, 0, 0], [10, 0, 0]])
        tree = build(cloud, BuildConfig(1))
        assert pairs(knn(tree, cloud, (2, 0, 0), 2)) == [(1, 1.0), (2, 1.0)]

    def test_k_larger_than_n(self):
        cloud = PointCloud.from_xyz([[0, 0, 0], [1, 0, 0], [3, 0, 0]])
        tree = build(cloud, BuildConfig(1))
        assert [n.index for n in knn(tree, cloud, (0, 0, 0), 10)] == [0, 1, 2]

    def test_cube_corners_ordered_by_index(self):
        corners = list(itertools.product((0.0, 1.0), repeat=3))
        cloud = PointCloud.from_xyz(corners)
        tree = build(cloud, BuildConfig(1))
        got = knn(tree, cloud, (0.5, 0.5, 0.5), 8)
        assert pairs(got) == [(i, 0.75) for i in range(8)]

    def test_distance_property(self):
        assert Neighbor(0, 4.0).distance == 2.0

    @pytest.mark.parametrize("mode", ["uniform", "clustered"])
    def test_matches_full_sort(self, rng, mode):
        cloud = random_cloud(rng, 1_000, mode)
        tree = build(cloud, BuildConfig(10))
        for q in rng.random((100, 3)).tolist():
            for k in (1, 10):
                assert pairs(knn(tree, cloud, q, k)) == full_sort_knn(cloud, q, k)

    def test_brute_force_matches_full_sort(self, rng):
        cloud = random_cloud(rng, 500)
        for q in rng.random((20, 3)).tolist():
            assert pairs(brute_force_knn(cloud, q, 7)) == full_sort_knn(cloud, q, 7)

    def test_queries_far_outside(self, rng):
        cloud = random_cloud(rng, 800)
        tree = build(cloud, BuildConfig(5))
        for q in [(50, -3, 2), (-10, -10, -10), (0.5, 0.5, 99)]:
            assert pairs(knn(tree, cloud, q, 5)) == full_sort_knn(cloud, q, 5)

    def test_pruned_subtrees_hold_no_answers(self, rng):
        cloud = random_cloud(rng, 3_000, "clustered")
        tree = build(cloud, BuildConfig(8))
        seen_pruning = False
        for q in rng.random((30, 3)).tolist():
            pruned = []
            got = knn(tree, cloud, q, 20, pruned=pruned)
            seen_pruning |= bool(pruned)
            answer = {n.index for n in got}
            for node in pruned:
                members = set(tree.perm[tree.begin[node]:tree.end[node]].tolist())
                assert not members & answer
        assert seen_pruning

    def test_empty_tree(self, rng):
        cloud = random_cloud(rng, 10)
        tree = build(cloud, BuildConfig(4))
        import dataclasses
        empty = dataclasses.replace(tree, perm=tree.perm[:0])
        with pytest.raises(EmptyTree):
            knn(empty, cloud, (0, 0, 0), 1)

    def test_cloud_size_mismatch(self, rng):
        tree = build(random_cloud(rng, 10), BuildConfig(4))
        with pytest.raises(ValueError):
            knn(tree, random_cloud(rng, 11), (0, 0, 0), 1)

    @pytest.mark.parametrize("q", [(0, 0), (0, 0, float("nan"))])
    def test_bad_query(self, rng, q):
        cloud = random_cloud(rng, 10)
        with pytest.raises(ValueError):
            knn(build(cloud, BuildConfig(4)), cloud, q, 1)

    @pytest.mark.slow
    def test_million_points_k50(self):
        rng = np.random.default_rng(7)
        cloud = PointCloud.from_xyz(rng.random((1_000_000, 3)))
        tree = build(cloud, BuildConfig(10_000))
        for q in rng.random((10, 3)).tolist():
            assert knn(tree, cloud, q, 50) == brute_force_knn(cloud, q, 50)


grid = st.lists(
    st.tuples(st.integers(0, 3), st.integers(0, 3), st.integers(0, 3)),
    min_size=1, max_size=60,
)
query = st.tuples(*[st.integers(-1, 4).map(lambda v: v * 0.5)] * 3)


@given(grid, st.integers(1, 9), query, st.integers(1, 20))
@settings(max_examples=300, deadline=None)
def test_tree_equals_oracle_with_ties(pts, leaf_size, q, k):
    cloud = PointCloud.from_xyz(np.array(pts, dtype=float))
    tree = build(cloud, BuildConfig(leaf_size))
    assert pairs(knn(tree, cloud, q, k)) == full_sort_knn(cloud, q, k)


@given(grid, query, st.integers(1, 10))
@settings(max_examples=150, deadline=None)
def test_answers_agree_across_leaf_sizes(pts, q, k):
    cloud = PointCloud.from_xyz(np.array(pts, dtype=float))
    answers = {tuple(knn(build(cloud, BuildConfig(ls)), cloud, q, k)) for ls in (1, 3, len(pts))}
    assert len(answers) == 1


@given(grid, query, st.integers(1, 10), st.integers(1, 10))
@settings(max_examples=150, deadline=None)
def test_smaller_k_is_prefix(pts, q, a, b):
    cloud = PointCloud.from_xyz(np.array(pts, dtype=float))
    tree = build(cloud, BuildConfig(2))
    small, large = sorted((a, b))
    big = knn(tree, cloud, q, large)
    assert knn(tree, cloud, q, small) == big[:small]
    keys = [(n.sqdist, n.index) for n in big]
    assert keys == sorted(keys) and len(big) == min(large, len(pts))
