"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

import numpy as np

from .errors import AlignmentError, DimensionError
from .partition import GroupPartition


def check_window(window, t_obs=None, t_pred=None, need_future=False):
    obs = np.asarray(getattr(window, "obs", None), dtype=np.float64)
    if obs.ndim != 3 or obs.shape[2] != 2 or obs.shape[0] < 1:
        raise DimensionError(f"observed tracks must be (N>=1, T, 2), got {obs.shape}")
    if t_obs is not None and obs.shape[1] != t_obs:
        raise DimensionError(f"expected {t_obs} observed steps, got {obs.shape[1]}")
    if not np.all(np.isfinite(obs)):
        raise ValueError("observed tracks contain non-finite values")
    fut = getattr(window, "fut", None)
    if need_future:
        if fut is None:
            raise ValueError("window has no ground-truth future")
        fut = np.asarray(fut, dtype=np.float64)
        if fut.shape[0] != obs.shape[0] or fut.shape[2:] != (2,):
            raise DimensionError(f"future {fut.shape} does not match observation {obs.shape}")
        if t_pred is not None and fut.shape[1] != t_pred:
            raise DimensionError(f"expected {t_pred} future steps, got {fut.shape[1]}")
        if not np.all(np.isfinite(fut)):
            raise ValueError("future tracks contain non-finite values")
    return window


def check_windows(windows, t_obs=None, t_pred=None, need_future=False) -> list:
    """Validate a nonempty sequence of windows and return it as a list."""
    if windows is None:
        raise ValueError("expected a sequence of trajectory windows, got None")
    windows = list(windows)
    if not windows:
        raise ValueError("expected at least one trajectory window")
    for w in windows:
        check_window(w, t_obs, t_pred, need_future)
    return windows


def check_labels(labels, windows) -> list:
    """Per-window partitions aligned with ``windows``."""
    labels = list(labels)
    if len(labels) != len(windows):
        raise AlignmentError(f"{len(labels)} label sets for {len(windows)} windows")
    for lab, w in zip(labels, windows):
        if not isinstance(lab, GroupPartition):
            raise TypeError(f"labels must be GroupPartition instances, got {type(lab).__name__}")
        if lab.n != len(w.obs):
            raise AlignmentError(f"labels cover {lab.n} pedestrians but the window has {len(w.obs)}")
    return labels
