import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_partition
from gpgraph import numerics as nx
from gpgraph.errors import PartitionError
from gpgraph.hierarchy import (
    group_graph,
    group_pool,
    group_positions,
    group_unpool,
    inverse_distance_weights,
    member_graph,
    normalize_adjacency,
    ped_graph,
)
from gpgraph.partition import GroupPartition


def positions(rng, n, t=8):
    return rng.normal(0, 3, size=(n, t, 2))


class TestPedGraph:
    def test_single_node(self):
        g = ped_graph(np.zeros((1, 8, 2)))
        np.testing.assert_array_equal(g.adjacency, np.ones((8, 1, 1)))

    def test_inverse_distance(self):
        obs = np.zeros((2, 1, 2))
        obs[1, 0] = [2.0, 0.0]
        np.testing.assert_array_equal(ped_graph(obs).weights[0], [[0, 0.5], [0.5, 0]])

    def test_coincident_weight_zero(self):
        assert not inverse_distance_weights(np.zeros((3, 2, 2))).any()

    def test_normalization_by_hand(self):
        w = np.array([[[0.0, 0.5], [0.5, 0.0]]])
        # W + I has degree 1.5 on both rows
        expected = np.array([[1.0, 0.5], [0.5, 1.0]]) / 1.5
        np.testing.assert_allclose(normalize_adjacency(w)[0], expected, atol=1e-15)

    def test_random_symmetric_and_finite(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            g = ped_graph(positions(rng, 4))
            assert np.all(np.isfinite(g.adjacency))
            np.testing.assert_allclose(g.adjacency, g.adjacency.transpose(0, 2, 1), atol=1e-15)
            assert g.node_count == 4


class TestMemberGraph:
    def test_all_singletons_diagonal(self):
        g = member_graph(ped_graph(positions(np.random.default_rng(1), 4)), GroupPartition.singletons(4))
        np.testing.assert_allclose(g.adjacency, np.broadcast_to(np.eye(4), (8, 4, 4)))

    def test_one_group_is_ped_graph(self):
        g_ped = ped_graph(positions(np.random.default_rng(2), 4))
        g = member_graph(g_ped, GroupPartition([[0, 1, 2, 3]]))
        np.testing.assert_array_equal(g.adjacency, g_ped.adjacency)

    def test_elementwise_mask(self):
        g_ped = ped_graph(positions(np.random.default_rng(3), 3))
        g = member_graph(g_ped, GroupPartition([[0, 1], [2]]))
        assert not g.weights[:, 0, 2].any() and not g.weights[:, 1, 2].any()
        np.testing.assert_array_equal(g.weights[:, 0, 1], g_ped.weights[:, 0, 1])

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(1, 8), seed=st.integers(0, 2**31))
    def test_weights_dominated(self, n, seed):
        rng = np.random.default_rng(seed)
        g_ped = ped_graph(positions(rng, n))
        part = random_partition(rng, n)
        g = member_graph(g_ped, part)
        assert np.all(g.weights <= g_ped.weights)
        cross = ~part.same_group()
        assert not g.weights[:, cross].any()

    def test_size_mismatch(self):
        with pytest.raises(PartitionError):
            member_graph(ped_graph(np.zeros((3, 8, 2))), GroupPartition.singletons(2))


class TestPooling:
    def test_singletons_identity(self):
        x = np.random.default_rng(4).normal(size=(3, 8, 2))
        part = GroupPartition.singletons(3)
        np.testing.assert_array_equal(group_pool(x, part).data, x)
        np.testing.assert_array_equal(group_unpool(x, part).data, x)

    def test_mean(self):
        np.testing.assert_array_equal(group_pool(np.array([[2.0], [4.0]]), GroupPartition([[0, 1]])).data, [[3.0]])

    def test_members_identical_after_unpool(self):
        part = GroupPartition([[0, 2], [1]])
        z = np.random.default_rng(5).normal(size=(2, 4, 3))
        out = group_unpool(z, part).data
        np.testing.assert_array_equal(out[0], out[2])
        np.testing.assert_array_equal(out[1], z[1])

    def test_unpool_k_mismatch(self):
        with pytest.raises(PartitionError):
            group_unpool(np.zeros((3, 2)), GroupPartition([[0, 1]]))

    @settings(max_examples=100, deadline=None)
    @given(n=st.integers(1, 10), seed=st.integers(0, 2**31))
    def test_projection(self, n, seed):
        rng = np.random.default_rng(seed)
        part = random_partition(rng, n)
        x = rng.normal(size=(n, 5, 3))
        once = group_unpool(group_pool(x, part), part).data
        twice = group_unpool(group_pool(once, part), part).data
        assert np.abs(twice - once).max() <= 1e-12
        # group-constant input is a fixed point
        const = group_unpool(rng.normal(size=(part.k, 5, 3)), part).data
        np.testing.assert_array_equal(group_unpool(group_pool(const, part), part).data, const)
        assert part.k <= n and (part.k == n) == all(len(g) == 1 for g in part.groups)
        if any(len(g) > 1 for g in part.groups):
            assert part.k < n

    def test_pool_gradient(self):
        part = GroupPartition([[0, 2], [1, 3, 4]])
        x = nx.Tensor(np.random.default_rng(6).normal(size=(5, 4, 2)), requires_grad=True)
        w = np.random.default_rng(7).normal(size=(5, 4, 2))
        assert nx.grad_check(lambda: nx.sum(nx.mul(group_unpool(group_pool(x, part), part), w)), [x]) <= 1e-6


class TestGroupGraph:
    def test_one_group(self):
        obs = positions(np.random.default_rng(8), 3)
        part = GroupPartition([[0, 1, 2]])
        np.testing.assert_array_equal(group_graph(group_positions(obs, part), part).adjacency, np.ones((8, 1, 1)))

    def test_singletons_match_ped_graph(self):
        obs = positions(np.random.default_rng(9), 2)
        part = GroupPartition.singletons(2)
        np.testing.assert_array_equal(group_graph(group_positions(obs, part), part).adjacency, ped_graph(obs).adjacency)

    def test_six_in_two_groups(self):
        obs = positions(np.random.default_rng(10), 6)
        part = GroupPartition([[0, 1, 2], [3, 4, 5]])
        z = group_positions(obs, part)
        g = group_graph(z, part)
        assert g.adjacency.shape == (8, 2, 2)
        centres = np.stack([obs[:3].mean(axis=0), obs[3:].mean(axis=0)])
        np.testing.assert_allclose(z, centres, atol=1e-14)
        dist = np.linalg.norm(centres[0] - centres[1], axis=-1)
        np.testing.assert_allclose(g.weights[:, 0, 1], 1.0 / dist, rtol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(2, 8), seed=st.integers(0, 2**31))
    def test_permutation_equivariance(self, n, seed):
        rng = np.random.default_rng(seed)
        obs, perm = positions(rng, n), rng.permutation(n)
        a = ped_graph(obs).adjacency
        b = ped_graph(obs[perm]).adjacency
        np.testing.assert_allclose(b, a[:, perm][:, :, perm], atol=1e-14)
