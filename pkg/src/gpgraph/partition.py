"""Disjoint group partitions over pedestrian indices."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import PartitionError


@dataclass(frozen=True)
class GroupPartition:
    """K disjoint, nonempty groups covering pedestrians ``0..n-1``.

    Groups are stored sorted internally and ordered by their smallest member,
    so two partitions describing the same grouping compare equal.
    """

    groups: tuple
    n: int

    def __init__(self, groups: Iterable[Iterable[int]], n: int | None = None):
        canon = [tuple(sorted(int(i) for i in g)) for g in groups]
        if any(len(g) == 0 for g in canon):
            raise PartitionError("partition contains an empty group")
        canon.sort(key=lambda g: g[0])
        members = [i for g in canon for i in g]
        if n is None:
            n = len(members)
        if len(set(members)) != len(members):
            raise PartitionError("groups overlap")
        if sorted(members) != list(range(n)):
            raise PartitionError(f"groups do not cover 0..{n - 1} exactly")
        object.__setattr__(self, "groups", tuple(canon))
        object.__setattr__(self, "n", int(n))

    @classmethod
    def singletons(cls, n: int) -> "GroupPartition":
        return cls([[i] for i in range(n)], n)

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "GroupPartition":
        """Build from a per-pedestrian group label vector."""
        by_label: dict = {}
        for i, lab in enumerate(labels):
            by_label.setdefault(lab, []).append(i)
        return cls(by_label.values(), len(labels))

    @property
    def k(self) -> int:
        return len(self.groups)

    @property
    def member_of(self) -> np.ndarray:
        """Group index of every pedestrian."""
        owner = np.empty(self.n, dtype=np.intp)
        for k, g in enumerate(self.groups):
            owner[list(g)] = k
        return owner

    def same_group(self) -> np.ndarray:
        """Boolean (n, n) matrix, True where two pedestrians share a group."""
        owner = self.member_of
        return owner[:, None] == owner[None, :]

    @property
    def is_all_singletons(self) -> bool:
        return all(len(g) == 1 for g in self.groups)

    def refines(self, other: "GroupPartition") -> bool:
        """True when every group of ``self`` lies inside one group of ``other``."""
        owner = other.member_of
        return all(len({owner[i] for i in g}) == 1 for g in self.groups)

    def permuted(self, perm: Sequence[int]) -> "GroupPartition":
        """Relabel so that new pedestrian ``j`` is old pedestrian ``perm[j]``."""
        inverse = np.argsort(np.asarray(perm))
        return GroupPartition([[int(inverse[i]) for i in g] for g in self.groups], self.n)

    def __len__(self):
        return self.k

    def __iter__(self):
        return iter(self.groups)
