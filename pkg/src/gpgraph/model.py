"""End-to-end forward pass: grouping, group hierarchy, integration, loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import ConfigurationError
from .grouping import (
    GroupParams,
    assign_groups,
    embed,
    fixed_ratio_threshold,
    pairwise_distance,
    soft_assignment,
    st_features,
    supervised_group_loss,
)
from .hierarchy import group_graph, group_pool, group_positions, group_unpool, member_graph, ped_graph
from .partition import GroupPartition
from .predictor import GaussianField, PredictorWeights, encode, integrate, nll_loss
from .trajectories import future_displacements, to_relative

GRAPHS = ("agent", "member", "group")
GROUP_FEATURES = ("motion", "motion+position")


def grouping_input(obs: np.ndarray, kind: str = "motion+position") -> np.ndarray:
    """Input channels of the grouping embedding, (N, T, 2 or 4).

    ``motion`` uses per-step displacements only; ``motion+position`` appends
    positions relative to the scene centroid at the last observed step, which
    keeps the embedding translation invariant.
    """
    rel = to_relative(obs)
    if kind == "motion":
        return rel
    if kind != "motion+position":
        raise ConfigurationError(f"unknown grouping features {kind!r}")
    centre = obs[:, -1].mean(axis=0)
    return np.concatenate([rel, obs - centre], axis=2)


@dataclass
class ForwardResult:
    field: GaussianField
    partition: GroupPartition
    distance: nx.Tensor
    assignment: nx.Tensor
    threshold: float
    loss: nx.Tensor = None
    nll: nx.Tensor = None
    group_loss: nx.Tensor = None
    extras: dict = field(default_factory=dict)


class GPGraphModel:
    """All learnable state plus the switches that define one architecture variant."""

    def __init__(
        self,
        hidden=16,
        t_obs=8,
        t_pred=12,
        pi_init=1.0,
        tau=0.1,
        graphs=GRAPHS,
        share_weights=True,
        fixed_ratio=False,
        group_features="motion+position",
        seed=0,
    ):
        graphs = tuple(graphs)
        if not graphs or any(g not in GRAPHS for g in graphs):
            raise ConfigurationError(f"graphs must be a nonempty subset of {GRAPHS}, got {graphs}")
        self.graphs = tuple(g for g in GRAPHS if g in graphs)
        self.t_obs, self.t_pred = t_obs, t_pred
        self.fixed_ratio = fixed_ratio
        self.group_features = group_features
        rng = np.random.default_rng(seed)
        in_channels = 2 if group_features == "motion" else 4
        self.group_params = GroupParams.init(in_channels=in_channels, hidden=hidden, pi=pi_init, tau=tau, rng=rng)
        self.weights = PredictorWeights.init(
            rng, in_channels=2, hidden=hidden, t_obs=t_obs, t_pred=t_pred, branches=len(self.graphs), share=share_weights
        )

    @property
    def tau(self) -> float:
        return self.group_params.tau

    def named_parameters(self) -> dict:
        params = {"group." + k: v for k, v in self.group_params.named_parameters().items()}
        params.update(self.weights.named_parameters())
        return params

    def group(self, obs):
        """Embedding distances, threshold in use and the hard partition."""
        gin = grouping_input(obs, self.group_features)
        d = pairwise_distance(embed(gin, self.group_params))
        if self.fixed_ratio:
            threshold = nx.structural(lambda: fixed_ratio_threshold(d.data))
            pi = nx.Tensor(threshold)
        else:
            pi = self.group_params.pi
            threshold = float(pi.data)
        part = nx.structural(lambda: assign_groups(d.data, threshold))
        return d, pi, threshold, part

    def forward(self, window, labels: GroupPartition | None = None, group_loss_weight=0.0) -> ForwardResult:
        obs = np.asarray(window.obs, dtype=np.float64)
        rel = to_relative(obs)
        d, pi, threshold, part = self.group(obs)
        a = soft_assignment(d, pi, self.tau)
        x = nx.Tensor(rel)

        branches = []
        g_ped = ped_graph(obs)
        for i, name in enumerate(self.graphs):
            theta = self.weights.encoder(i)
            if name == "agent":
                branches.append(encode(g_ped, x, theta))
            elif name == "member":
                branches.append(encode(member_graph(g_ped, part), x, theta))
            else:
                pooled = group_pool(st_features(x, a), part)
                graph = group_graph(group_positions(obs, part), part)
                branches.append(group_unpool(encode(graph, pooled, theta), part))
        fld = integrate(branches, self.weights.psi)
        result = ForwardResult(fld, part, d, a, threshold)

        fut = getattr(window, "fut", None)
        if fut is not None:
            result.nll = nll_loss(fld, future_displacements(window))
            result.loss = result.nll
            if labels is not None and group_loss_weight:
                result.group_loss = supervised_group_loss(d, pi, self.tau, labels)
                result.loss = nx.add(result.loss, nx.mul(group_loss_weight, result.group_loss))
        return result
