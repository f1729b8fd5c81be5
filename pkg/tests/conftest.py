import numpy as np
import pytest

from gpgraph.partition import GroupPartition
from gpgraph.synth import SynthSpec, generate
from gpgraph.trajectories import make_windows, window_labels


def random_partition(rng, n, max_size=None):
    """Random partition of range(n) via random labels."""
    labels = rng.integers(0, max(1, n if max_size is None else max_size), size=n)
    return GroupPartition.from_labels(labels)


def bfs_components(adj):
    """Connected components of a boolean adjacency matrix by breadth-first search."""
    n = adj.shape[0]
    seen, comps = [False] * n, []
    for s in range(n):
        if seen[s]:
            continue
        comp, queue = [], [s]
        seen[s] = True
        while queue:
            u = queue.pop(0)
            comp.append(u)
            for v in range(n):
                if adj[u, v] and not seen[v]:
                    seen[v] = True
                    queue.append(v)
        comps.append(tuple(sorted(comp)))
    return sorted(comps)


def random_distance_matrix(rng, n, scale=2.0):
    pts = rng.normal(0.0, scale, size=(n, 3))
    return np.linalg.norm(pts[:, None] - pts[None], axis=-1)


@pytest.fixture
def scene_window():
    scene, groups = generate(SynthSpec(group_count=2, min_size=2, max_size=2, noise=0.01, seed=7))
    w = make_windows(scene)[0]
    return w, window_labels(groups, w)
