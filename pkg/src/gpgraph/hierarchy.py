"""The three interaction graphs and group pooling/unpooling.

Adjacency is built per observed timestep from inverse Euclidean distance,
then self-loops are added and the matrix is symmetrically degree-normalized:
``D^-1/2 (W + I) D^-1/2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import PartitionError
from .partition import GroupPartition


@dataclass
class InteractionGraph:
    """Raw edge weights and normalized adjacency, both (T, n, n)."""

    weights: np.ndarray
    adjacency: np.ndarray
    node_features: object = None

    @property
    def node_count(self) -> int:
        return self.weights.shape[1]


def inverse_distance_weights(pos: np.ndarray) -> np.ndarray:
    """(n, T, 2) positions -> (T, n, n) weights 1/dist, zero for coincident points."""
    pos = np.asarray(pos, dtype=np.float64).transpose(1, 0, 2)
    diff = pos[:, :, None, :] - pos[:, None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    with np.errstate(divide="ignore"):
        w = np.where(dist > 0, 1.0 / np.where(dist > 0, dist, 1.0), 0.0)
    return w


def normalize_adjacency(weights: np.ndarray) -> np.ndarray:
    t, n, _ = weights.shape
    a_hat = weights + np.eye(n)[None]
    inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=2))
    return inv_sqrt[:, :, None] * a_hat * inv_sqrt[:, None, :]


def ped_graph(obs, features=None) -> InteractionGraph:
    """Complete agent graph over all pedestrians."""
    w = inverse_distance_weights(obs)
    return InteractionGraph(w, normalize_adjacency(w), features)


def member_graph(g_ped: InteractionGraph, part: GroupPartition, features=None) -> InteractionGraph:
    """Agent graph with every edge between different groups removed."""
    if part.n != g_ped.node_count:
        raise PartitionError(f"partition covers {part.n} nodes but the graph has {g_ped.node_count}")
    w = g_ped.weights * part.same_group()[None]
    return InteractionGraph(w, normalize_adjacency(w), g_ped.node_features if features is None else features)


def group_pool(x, part: GroupPartition):
    """Average member features into one node per group. (N, ...) -> (K, ...)."""
    x = nx.as_tensor(x)
    if part.n != x.shape[0]:
        raise PartitionError(f"partition covers {part.n} pedestrians, features have {x.shape[0]} rows")
    return nx.segment_mean(x, part)


def group_unpool(z, part: GroupPartition):
    """Copy each group's features back to all of its members. (K, ...) -> (N, ...)."""
    z = nx.as_tensor(z)
    if z.shape[0] != part.k:
        raise PartitionError(f"got {z.shape[0]} group rows for a partition with {part.k} groups")
    return nx.take_rows(z, part.member_of)


def group_positions(obs, part: GroupPartition) -> np.ndarray:
    """Member-mean positions, (K, T, 2)."""
    return group_pool(nx.Tensor(obs), part).data


def group_graph(z, part: GroupPartition, features=None) -> InteractionGraph:
    """Complete graph over group nodes, weighted by distance between group-mean positions.

    ``z`` holds pooled positions, (K, T, 2).
    """
    z = z.data if isinstance(z, nx.Tensor) else np.asarray(z, dtype=np.float64)
    if z.shape[0] != part.k:
        raise PartitionError(f"got {z.shape[0]} group rows for a partition with {part.k} groups")
    return ped_graph(z, features)
