"""Weight-shared graph encoder, group integration network and the bivariate
Gaussian output with its three noise-sharing sampling modes."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import AlignmentError, ConfigurationError, UsageError
from .numerics import Tensor
from .partition import GroupPartition

SIGMA_FLOOR = 1e-6
LOG_2PI = math.log(2.0 * math.pi)
LEAK = 0.25


class SamplingMode(str, enum.Enum):
    SCENE = "scene"
    PEDESTRIAN = "pedestrian"
    GROUP = "group"


def _kaiming(rng, shape, fan_in, gain=1.0):
    std = gain * math.sqrt(2.0 / ((1.0 + LEAK**2) * fan_in))
    return Tensor(rng.normal(0.0, std, shape), requires_grad=True)


def _zeros(*shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def _slope():
    return Tensor(np.float64(LEAK), requires_grad=True)


def init_theta(rng, in_channels=2, hidden=16, kernel_size=3) -> dict:
    """One graph-conv layer (with residual path) followed by two temporal convs."""
    return {
        "gc.kernel": _kaiming(rng, (1, in_channels, hidden), in_channels),
        "gc.bias": _zeros(hidden),
        "gc.slope": _slope(),
        "res.kernel": _kaiming(rng, (1, in_channels, hidden), in_channels),
        "res.bias": _zeros(hidden),
        "tc1.kernel": _kaiming(rng, (kernel_size, hidden, hidden), kernel_size * hidden),
        "tc1.bias": _zeros(hidden),
        "tc1.slope": _slope(),
        "tc2.kernel": _kaiming(rng, (kernel_size, hidden, hidden), kernel_size * hidden),
        "tc2.bias": _zeros(hidden),
        "tc2.slope": _slope(),
    }


def init_psi(rng, branches=3, hidden=16, t_obs=8, t_pred=12, kernel_size=3) -> dict:
    """1x1 fusion, time projection T_obs -> T_pred, two temporal convs, 5-channel head."""
    return {
        "fuse.kernel": _kaiming(rng, (1, branches * hidden, hidden), branches * hidden),
        "fuse.bias": _zeros(hidden),
        "fuse.slope": _slope(),
        "time.weight": _kaiming(rng, (t_pred, t_obs), t_obs),
        "time.bias": _zeros(t_pred),
        "time.slope": _slope(),
        "tc1.kernel": _kaiming(rng, (kernel_size, hidden, hidden), kernel_size * hidden),
        "tc1.bias": _zeros(hidden),
        "tc1.slope": _slope(),
        "tc2.kernel": _kaiming(rng, (kernel_size, hidden, hidden), kernel_size * hidden),
        "tc2.bias": _zeros(hidden),
        "tc2.slope": _slope(),
        "head.kernel": _kaiming(rng, (1, hidden, 5), hidden, gain=0.01),
        "head.bias": _zeros(5),
    }


@dataclass
class PredictorWeights:
    """``theta`` is a list of encoder parameter sets; with weight sharing it has
    exactly one entry, reused for every graph."""

    theta: list
    psi: dict

    @classmethod
    def init(cls, rng=None, in_channels=2, hidden=16, t_obs=8, t_pred=12, branches=3, share=True):
        if branches < 1:
            raise ConfigurationError("at least one interaction graph must feed the integration network")
        rng = np.random.default_rng(rng)
        n_theta = 1 if share else branches
        theta = [init_theta(rng, in_channels, hidden) for _ in range(n_theta)]
        psi = init_psi(rng, branches, hidden, t_obs, t_pred)
        return cls(theta=theta, psi=psi)

    def encoder(self, branch: int) -> dict:
        return self.theta[0] if len(self.theta) == 1 else self.theta[branch]

    def named_parameters(self):
        out = {}
        for i, theta in enumerate(self.theta):
            prefix = "theta." if len(self.theta) == 1 else f"theta{i}."
            out.update({prefix + k: v for k, v in theta.items()})
        out.update({"psi." + k: v for k, v in self.psi.items()})
        return out


def encode(adjacency, x, theta: dict) -> Tensor:
    """Graph convolution then two residual temporal convs: (n, T, C) -> (n, T, H).

    A 1x1 residual path from the input bypasses the neighbour aggregation.
    """
    adjacency = getattr(adjacency, "adjacency", adjacency)
    h = nx.graph_conv(adjacency, nx.temporal_conv(x, theta["gc.kernel"], theta["gc.bias"]))
    h = nx.prelu(nx.add(h, nx.temporal_conv(x, theta["res.kernel"], theta["res.bias"])), theta["gc.slope"])
    h = nx.add(h, nx.prelu(nx.temporal_conv(h, theta["tc1.kernel"], theta["tc1.bias"]), theta["tc1.slope"]))
    h = nx.add(h, nx.prelu(nx.temporal_conv(h, theta["tc2.kernel"], theta["tc2.bias"]), theta["tc2.slope"]))
    return h


@dataclass
class GaussianField:
    """Raw per-step parameters (mu_x, mu_y, log sigma_x, log sigma_y, pre-tanh rho)."""

    params: Tensor

    @property
    def mu(self) -> np.ndarray:
        return self.params.data[..., 0:2]

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.params.data[..., 2:4])

    @property
    def rho(self) -> np.ndarray:
        return np.tanh(self.params.data[..., 4])


def integrate(branches, psi: dict) -> GaussianField:
    """Fuse per-agent branch features and extrapolate to the prediction horizon."""
    rows = {b.shape[0] for b in branches}
    if len(rows) != 1:
        raise AlignmentError(f"branch features disagree on pedestrian count: {sorted(rows)}")
    h = nx.concat(list(branches), axis=2) if len(branches) > 1 else branches[0]
    if h.shape[2] != psi["fuse.kernel"].shape[1]:
        raise AlignmentError(
            f"fusion expects {psi['fuse.kernel'].shape[1]} channels, branches provide {h.shape[2]}"
        )
    h = nx.prelu(nx.temporal_conv(h, psi["fuse.kernel"], psi["fuse.bias"]), psi["fuse.slope"])
    h = nx.prelu(nx.time_linear(h, psi["time.weight"], psi["time.bias"]), psi["time.slope"])
    h = nx.add(h, nx.prelu(nx.temporal_conv(h, psi["tc1.kernel"], psi["tc1.bias"]), psi["tc1.slope"]))
    h = nx.add(h, nx.prelu(nx.temporal_conv(h, psi["tc2.kernel"], psi["tc2.bias"]), psi["tc2.slope"]))
    return GaussianField(nx.temporal_conv(h, psi["head.kernel"], psi["head.bias"]))


def nll_loss(field: GaussianField, fut_rel) -> Tensor:
    """Mean negative log density of the target displacements, (N, T, 2)."""
    p = field.params
    target = np.asarray(fut_rel, dtype=np.float64)
    if target.shape != p.shape[:2] + (2,):
        raise AlignmentError(f"target {target.shape} does not match field {p.shape}")
    mx, my, lx, ly, r = (nx.channel(p, i) for i in range(5))
    zx = nx.mul(nx.sub(target[..., 0], mx), nx.exp(nx.neg(lx)))
    zy = nx.mul(nx.sub(target[..., 1], my), nx.exp(nx.neg(ly)))
    rho = nx.tanh(r)
    # log(1 - tanh(r)^2) = 2 log 2 - 2 r - 2 softplus(-2 r)
    log_1mr2 = nx.sub(2.0 * math.log(2.0), nx.mul(2.0, nx.add(r, nx.softplus(nx.mul(-2.0, r)))))
    quad = nx.sub(nx.add(nx.square(zx), nx.square(zy)), nx.mul(2.0, nx.mul(rho, nx.mul(zx, zy))))
    per_point = nx.add(
        nx.add(nx.add(lx, ly), nx.mul(0.5, log_1mr2)),
        nx.mul(0.5, nx.mul(quad, nx.exp(nx.neg(log_1mr2)))),
    )
    return nx.add(nx.mean(per_point), LOG_2PI)


def draw_noise(mode, n, part=None, rng=None, count=20, t_pred=12) -> np.ndarray:
    """Standardized noise, (count, n, t_pred, 2), shared according to ``mode``."""
    mode = SamplingMode(mode)
    rng = np.random.default_rng(rng)
    if mode is SamplingMode.SCENE:
        eps = rng.standard_normal((count, 1, t_pred, 2))
        index = np.zeros(n, dtype=np.intp)
    elif mode is SamplingMode.PEDESTRIAN:
        eps = rng.standard_normal((count, n, t_pred, 2))
        index = np.arange(n)
    else:
        if part is None or part.n != n:
            raise UsageError("group-level sampling needs a partition covering every pedestrian")
        eps = rng.standard_normal((count, part.k, t_pred, 2))
        index = part.member_of
    return eps[:, index]


def sample(field: GaussianField, mode=SamplingMode.GROUP, part: GroupPartition | None = None, seed=0, count=20, origin=None):
    """Draw ``count`` absolute futures, (count, N, T_pred, 2).

    Displacements are mu + L eps with L the Cholesky factor of each step's
    2x2 covariance; they are accumulated from ``origin`` (the last observed
    position, zeros when omitted).
    """
    mu, sigma, rho = field.mu, np.maximum(field.sigma, SIGMA_FLOOR), field.rho
    n, t_pred = mu.shape[:2]
    eps = draw_noise(mode, n, part, np.random.default_rng(seed), count, t_pred)
    dx = mu[..., 0] + sigma[..., 0] * eps[..., 0]
    dy = mu[..., 1] + sigma[..., 1] * (rho * eps[..., 0] + np.sqrt(1.0 - rho**2) * eps[..., 1])
    steps = np.stack([dx, dy], axis=-1)
    origin = np.zeros((n, 2)) if origin is None else np.asarray(origin, dtype=np.float64)
    return origin[None, :, None, :] + np.cumsum(steps, axis=2)


def mean_path(field: GaussianField, origin=None) -> np.ndarray:
    """Accumulated mean displacements, (N, T_pred, 2)."""
    n = field.mu.shape[0]
    origin = np.zeros((n, 2)) if origin is None else np.asarray(origin, dtype=np.float64)
    return origin[:, None, :] + np.cumsum(field.mu, axis=1)


def best_of_k(samples, fut) -> int:
    """Index of the sample with the lowest ADE against ``fut``."""
    samples = np.asarray(samples)
    err = np.linalg.norm(samples - np.asarray(fut)[None], axis=-1).mean(axis=(1, 2))
    return int(np.argmin(err))
