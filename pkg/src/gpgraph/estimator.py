"""scikit-learn style wrapper around the model, its training loop and sampling."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import metrics
from .model import GRAPHS, GPGraphModel
from .predictor import SamplingMode, best_of_k, mean_path, sample
from .training import TrainConfig, fit
from .validation import check_labels, check_windows


def window_seed(seed: int, index: int) -> list:
    """Seed material for the sampler of window ``index``; independent of job layout."""
    return [int(seed), int(index)]


class GPGraph(BaseEstimator):
    """Group-aware trajectory forecaster.

    ``fit`` takes a list of :class:`~gpgraph.trajectories.TrajectoryWindow`
    and, optionally, one :class:`~gpgraph.partition.GroupPartition` per
    window. Labels only enter the loss when ``group_loss_weight`` > 0.
    """

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
        epochs=200,
        lr=1e-3,
        optimizer="adam",
        schedule="constant",
        batch=1,
        group_loss_weight=0.0,
        mode="group",
        n_samples=20,
        seed=0,
    ):
        self.hidden = hidden
        self.t_obs = t_obs
        self.t_pred = t_pred
        self.pi_init = pi_init
        self.tau = tau
        self.graphs = graphs
        self.share_weights = share_weights
        self.fixed_ratio = fixed_ratio
        self.group_features = group_features
        self.epochs = epochs
        self.lr = lr
        self.optimizer = optimizer
        self.schedule = schedule
        self.batch = batch
        self.group_loss_weight = group_loss_weight
        self.mode = mode
        self.n_samples = n_samples
        self.seed = seed

    def model_config(self) -> dict:
        return dict(
            hidden=self.hidden,
            t_obs=self.t_obs,
            t_pred=self.t_pred,
            pi_init=self.pi_init,
            tau=self.tau,
            graphs=list(self.graphs),
            share_weights=self.share_weights,
            fixed_ratio=self.fixed_ratio,
            group_features=self.group_features,
            seed=self.seed,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            lr=self.lr,
            optimizer=self.optimizer,
            batch=self.batch,
            group_loss_weight=self.group_loss_weight,
            seed=self.seed,
            schedule=self.schedule,
        )

    def fit(self, X, y=None, callback=None):
        windows = check_windows(X, self.t_obs, self.t_pred, need_future=True)
        labels = check_labels(y, windows) if y is not None and self.group_loss_weight else None
        SamplingMode(self.mode)
        self.model_ = GPGraphModel(**self.model_config())
        result = fit(self.model_, windows, self.train_config(), labels=labels, callback=callback)
        self.loss_trace_ = result.trace
        self.n_steps_ = result.steps
        return self

    @classmethod
    def from_model(cls, model: GPGraphModel, model_config: dict, **params):
        """Wrap an already trained model (for example one restored from a checkpoint)."""
        cfg = {k: v for k, v in model_config.items() if k in cls._get_param_names()}
        est = cls(**{**cfg, **params})
        est.model_ = model
        est.loss_trace_ = []
        est.n_steps_ = 0
        return est

    def _forward(self, X):
        check_is_fitted(self, "model_")
        windows = check_windows(X, self.t_obs)
        return windows, [self.model_.forward(_Observed(w.obs)) for w in windows]

    def predict(self, X) -> list:
        """Mean future paths, one (N, T_pred, 2) array per window."""
        windows, results = self._forward(X)
        return [mean_path(r.field, w.obs[:, -1]) for w, r in zip(windows, results)]

    def sample(self, X, count=None, mode=None, offset=0) -> list:
        """Sampled futures, one (count, N, T_pred, 2) array per window.

        Window ``i`` draws from ``window_seed(seed, offset + i)``.
        """
        count = self.n_samples if count is None else count
        mode = self.mode if mode is None else mode
        windows, results = self._forward(X)
        return [
            sample(r.field, mode, r.partition, seed=window_seed(self.seed, offset + i), count=count, origin=w.obs[:, -1])
            for i, (w, r) in enumerate(zip(windows, results))
        ]

    def predict_groups(self, X) -> list:
        check_is_fitted(self, "model_")
        return [self.model_.group(w.obs)[3] for w in check_windows(X, self.t_obs)]

    def score(self, X, y=None) -> float:
        """Negative mean best-of-``n_samples`` ADE (higher is better)."""
        windows = check_windows(X, self.t_obs, self.t_pred, need_future=True)
        errs = []
        for w, s in zip(windows, self.sample(windows)):
            errs.append(metrics.ade(s[best_of_k(s, w.fut)], w.fut))
        return -float(np.mean(errs))


class _Observed:
    """Window view without the future, so inference never touches ground truth."""

    __slots__ = ("obs",)

    def __init__(self, obs):
        self.obs = obs
