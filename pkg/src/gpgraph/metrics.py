"""Trajectory accuracy/reliability metrics and group detection scores."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import AlignmentError
from .partition import GroupPartition

COLLISION_THRESHOLD = 0.2  # meters


@dataclass
class TrajectoryScores:
    ade: float
    fde: float
    col: float
    tcc: float

    def as_dict(self):
        return asdict(self)


@dataclass
class GroupScores:
    pw_precision: float
    pw_recall: float
    gm_precision: float
    gm_recall: float

    def as_dict(self):
        return asdict(self)


def _pair(pred, gt):
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise AlignmentError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    return pred, gt


def ade(pred, gt) -> float:
    """Mean Euclidean error over every pedestrian and step."""
    pred, gt = _pair(pred, gt)
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def fde(pred, gt) -> float:
    """Mean Euclidean error at the last step."""
    pred, gt = _pair(pred, gt)
    return float(np.linalg.norm(pred[:, -1] - gt[:, -1], axis=-1).mean())


def col(samples, threshold=COLLISION_THRESHOLD) -> float:
    """Percentage of pedestrians that come closer than ``threshold`` to anyone,
    averaged over samples. ``samples`` is (S, N, T, 2)."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 3:
        samples = samples[None]
    s, n = samples.shape[:2]
    if n < 2:
        return 0.0
    diff = samples[:, :, None] - samples[:, None, :]  # (S, N, N, T, 2)
    dist = np.linalg.norm(diff, axis=-1)
    close = (dist < threshold).any(axis=-1)
    close[:, np.arange(n), np.arange(n)] = False
    involved = close.any(axis=2)
    return float(involved.mean(axis=1).mean() * 100.0)


def _pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    return 0.0 if denom == 0 else float((a * b).sum() / denom)


def tcc(pred, gt) -> float:
    """Pearson correlation of predicted vs true coordinate series, averaged over
    x/y and then pedestrians. Series with zero variance count as 0."""
    pred, gt = _pair(pred, gt)
    per_ped = [np.mean([_pearson(p[:, k], g[:, k]) for k in range(2)]) for p, g in zip(pred, gt)]
    return float(np.mean(per_ped))


def _check_universe(pred: GroupPartition, gt: GroupPartition):
    if pred.n != gt.n:
        raise AlignmentError(f"partitions cover {pred.n} and {gt.n} pedestrians")


def _same_pairs(part: GroupPartition) -> set:
    return {(i, j) for g in part.groups for a, i in enumerate(g) for j in g[a + 1 :]}


def pw_scores(pred: GroupPartition, gt: GroupPartition):
    """Pairwise precision and recall over same-group pairs (1.0 on empty denominators)."""
    _check_universe(pred, gt)
    p, g = _same_pairs(pred), _same_pairs(gt)
    hit = len(p & g)
    precision = hit / len(p) if p else 1.0
    recall = hit / len(g) if g else 1.0
    return precision, recall


def _with_counterparts(part: GroupPartition) -> list:
    """Add a fake partner to every pedestrian: singletons absorb theirs, group
    members' partners stand alone. Fake partner of i is -(i + 1)."""
    out = []
    for g in part.groups:
        if len(g) == 1:
            out.append((g[0], -(g[0] + 1)))
        else:
            out.append(tuple(g))
            out.extend((-(i + 1),) for i in g)
    return out


def _mitre(target: list, predicted: list) -> float:
    owner = {node: k for k, grp in enumerate(predicted) for node in grp}
    links = sum(len(grp) - 1 for grp in target)
    missing = sum(len({owner[node] for node in grp}) - 1 for grp in target)
    return (links - missing) / links


def gmitre_scores(pred: GroupPartition, gt: GroupPartition):
    """Group-MITRE precision and recall."""
    _check_universe(pred, gt)
    p, g = _with_counterparts(pred), _with_counterparts(gt)
    return _mitre(p, g), _mitre(g, p)


def group_scores(pred: GroupPartition, gt: GroupPartition) -> GroupScores:
    pw_p, pw_r = pw_scores(pred, gt)
    gm_p, gm_r = gmitre_scores(pred, gt)
    return GroupScores(pw_p, pw_r, gm_p, gm_r)


def trajectory_scores(samples, gt, threshold=COLLISION_THRESHOLD) -> TrajectoryScores:
    """Best-of-S ADE/FDE/TCC plus sample-averaged COL for one window."""
    from .predictor import best_of_k

    samples = np.asarray(samples, dtype=np.float64)
    best = samples[best_of_k(samples, gt)]
    return TrajectoryScores(ade(best, gt), fde(best, gt), col(samples, threshold), tcc(best, gt))
