"""Group assignment: trajectory embedding, pairwise distances, hard groups and
the straight-through relaxation that lets the loss reach the grouper.

Forward passes use the hard partition produced by :func:`assign_groups`.
Gradients for the embedding network and the threshold flow through
:func:`st_features`, whose output equals its input numerically but whose
adjoint is routed through the soft assignment matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import AlignmentError, ConfigurationError, DimensionError
from .numerics import Tensor
from .partition import GroupPartition

PI_INIT = 1.0
TAU = 0.1


@dataclass
class GroupParams:
    """Weights of the embedding network plus the grouping threshold.

    ``phi`` holds (kernel, bias) for each temporal conv layer, ``pi`` is the
    learnable distance threshold and ``tau`` the fixed sigmoid temperature.
    """

    phi: list
    pi: Tensor
    tau: float = TAU
    slope: float = 0.25

    @classmethod
    def init(cls, in_channels=2, hidden=16, kernel_size=3, layers=2, pi=PI_INIT, tau=TAU, rng=None):
        if tau <= 0:
            raise ConfigurationError(f"tau must be positive, got {tau}")
        if kernel_size % 2 == 0:
            raise ConfigurationError(f"kernel size must be odd, got {kernel_size}")
        rng = np.random.default_rng(rng)
        phi, c_in = [], in_channels
        for _ in range(layers):
            scale = 1.0 / math.sqrt(kernel_size * c_in)
            phi.append(
                (
                    Tensor(rng.normal(0.0, scale, (kernel_size, c_in, hidden)), requires_grad=True),
                    Tensor(np.zeros(hidden), requires_grad=True),
                )
            )
            c_in = hidden
        return cls(phi=phi, pi=Tensor(np.float64(pi), requires_grad=True), tau=float(tau))

    def named_parameters(self):
        out = {}
        for i, (k, b) in enumerate(self.phi):
            out[f"phi.{i}.kernel"] = k
            out[f"phi.{i}.bias"] = b
        out["pi"] = self.pi
        return out


def embed(features, params: GroupParams) -> Tensor:
    """Per-pedestrian embedding: temporal convs, then mean over time. (N, T, C) -> (N, F)."""
    h = nx.as_tensor(features)
    last = len(params.phi) - 1
    for i, (kernel, bias) in enumerate(params.phi):
        h = nx.temporal_conv(h, kernel, bias)
        if i < last:
            h = nx.leaky_relu(h, params.slope)
    return nx.mean(h, axis=1)


def pairwise_distance(e) -> Tensor:
    """Euclidean distance between embedding rows; exactly symmetric with zero diagonal."""
    e = nx.as_tensor(e)
    n, f = e.shape
    diff = nx.reshape(e, (n, 1, f)) - nx.reshape(e, (1, n, f))
    return nx.sqrt(nx.sum(nx.square(diff), axis=2))


def _values(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, i):
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True


def colleague_pairs(d, pi) -> list:
    """Unordered pairs (i, j), i < j, whose distance is at most ``pi``."""
    d = _values(d)
    i, j = np.nonzero(np.triu(d <= float(_values(pi)), k=1))
    return list(zip(i.tolist(), j.tolist()))


def assign_groups(d, pi) -> GroupPartition:
    """Connected components of the colleague relation ``d[i, j] <= pi``.

    Pedestrians with no colleague become singleton groups.
    """
    d = _values(d)
    n = d.shape[0]
    uf = _UnionFind(n)
    for i, j in colleague_pairs(d, pi):
        uf.union(i, j)
    groups: dict = {}
    for i in range(n):
        groups.setdefault(uf.find(i), []).append(i)
    return GroupPartition(groups.values(), n)


def fixed_ratio_threshold(d, ratio=0.5) -> float:
    """Threshold that merges the closest pairs until the node count drops by ``ratio``.

    Single-linkage merging in order of distance; returns the distance of the
    last merge (or -inf when no merge is needed).
    """
    d = _values(d)
    n = d.shape[0]
    target = max(1, math.ceil(n * (1.0 - ratio)))
    if n <= target:
        return -math.inf
    iu, ju = np.triu_indices(n, k=1)
    order = np.argsort(d[iu, ju], kind="stable")
    uf, k = _UnionFind(n), n
    for idx in order:
        if uf.union(int(iu[idx]), int(ju[idx])):
            k -= 1
            if k <= target:
                return float(d[iu[idx], ju[idx]])
    return float(d.max())


def _logits(d, pi, tau):
    return nx.mul(nx.sub(pi, d), 1.0 / tau)


def soft_assignment(d, pi, tau=TAU) -> Tensor:
    """Column-normalized same-group probabilities.

    a[i, j] = s[i, j] / sum_i s[i, j] with s = sigmoid((pi - d) / tau). Computed
    as a column softmax of log-sigmoids, which is the same quantity but stays
    finite when every sigmoid in a column underflows.
    """
    if tau <= 0:
        raise ConfigurationError(f"tau must be positive, got {tau}")
    log_s = nx.neg(nx.softplus(nx.neg(_logits(d, pi, tau))))
    return nx.col_softmax(log_s)


def st_features(x, a) -> Tensor:
    """Straight-through group features: value of ``x``, gradient of ``A^T x``.

    Rows of ``x`` are pedestrians. Row j of ``A^T x`` is the soft average of
    the features of j's likely colleagues.
    """
    x, a = nx.as_tensor(x), nx.as_tensor(a)
    n = x.shape[0]
    if a.shape != (n, n):
        raise DimensionError(f"st_features: assignment {a.shape} does not match {n} feature rows")
    flat = nx.reshape(x, (n, -1)) if x.ndim != 2 else x
    mixed = nx.matmul(nx.transpose(a), flat)
    out = nx.add(nx.stop_gradient(nx.sub(flat, mixed)), mixed)
    return nx.reshape(out, x.shape) if x.ndim != 2 else out


def supervised_group_loss(d, pi, tau, labels: GroupPartition) -> Tensor:
    """Mean binary cross-entropy between sigmoid((pi - d) / tau) and same-group labels.

    Averaged over unordered pairs i < j; zero when there are no pairs.
    """
    d = nx.as_tensor(d)
    n = d.shape[0]
    if labels.n != n:
        raise AlignmentError(f"labels cover {labels.n} pedestrians but the window has {n}")
    if n < 2:
        return Tensor(0.0)
    z = _logits(d, pi, tau)
    y = labels.same_group().astype(np.float64)
    # BCE with logits: y * softplus(-z) + (1 - y) * softplus(z)
    per_pair = nx.add(nx.mul(y, nx.softplus(nx.neg(z))), nx.mul(1.0 - y, nx.softplus(z)))
    upper = np.triu(np.ones((n, n)), k=1)
    return nx.mul(nx.sum(nx.mul(per_pair, upper)), 1.0 / upper.sum())


@dataclass
class GroupingResult:
    embedding: Tensor
    distance: Tensor
    partition: GroupPartition
    assignment: Tensor = field(default=None)
