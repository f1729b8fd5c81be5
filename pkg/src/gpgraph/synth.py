"""Synthetic crowds with known groups.

Each group walks in a straight line with one shared velocity; members stand
side by side, offset perpendicular to the heading. Optional i.i.d. Gaussian
noise is added to every recorded position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError
from .trajectories import FRAME_INTERVAL, Scene


@dataclass(frozen=True)
class SynthSpec:
    group_count: int = 3
    min_size: int = 1
    max_size: int = 3
    speed_range: tuple = (1.0, 1.5)  # m/s
    heading_range: tuple = (0.0, 2.0 * math.pi)  # radians, uniform
    spacing: float = 0.7  # m between neighbouring members
    noise: float = 0.0  # positional noise sigma, m
    dt: float = FRAME_INTERVAL
    frame_step: int = 10  # frame-id increment per annotated frame
    frames: int = 20
    area: float = 12.0  # side of the square that holds the group centres at the first frame
    min_separation: float = 2.5  # minimum distance between group centres at the first frame
    seed: int = 0

    def validate(self):
        if self.frames < 1:
            raise ConfigurationError("frames must be >= 1")
        if self.group_count < 1:
            raise ConfigurationError("group_count must be >= 1")
        if not 1 <= self.min_size <= self.max_size:
            raise ConfigurationError(f"invalid size range [{self.min_size}, {self.max_size}]")
        if self.speed_range[0] > self.speed_range[1] or self.heading_range[0] > self.heading_range[1]:
            raise ConfigurationError("speed and heading ranges must be nonempty")
        if self.noise < 0 or self.spacing < 0:
            raise ConfigurationError("noise and spacing must be nonnegative")
        if self.dt <= 0 or self.frame_step < 1:
            raise ConfigurationError("dt and frame_step must be positive")


def _place_centres(rng, spec):
    centres = []
    for _ in range(spec.group_count):
        for _attempt in range(200):
            c = rng.uniform(-spec.area / 2, spec.area / 2, size=2)
            if all(np.linalg.norm(c - o) >= spec.min_separation for o in centres):
                break
        centres.append(c)
    return centres


def _simulate(spec: SynthSpec, split_width=0.0, split_group=0):
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.frames) * spec.dt
    centres = _place_centres(rng, spec)
    positions, labels, ped = {}, [], 1
    for g, centre in enumerate(centres):
        size = int(rng.integers(spec.min_size, spec.max_size + 1))
        heading = rng.uniform(*spec.heading_range)
        speed = rng.uniform(*spec.speed_range)
        direction = np.array([math.cos(heading), math.sin(heading)])
        lateral = np.array([-direction[1], direction[0]])
        path = centre + speed * t[:, None] * direction
        offsets = (np.arange(size) - (size - 1) / 2) * spec.spacing
        if split_width and g == split_group:
            # members left of centre swerve left, the rest right; bump over the middle third
            t0, t1 = t[-1] / 3, 2 * t[-1] / 3
            phase = np.clip((t - t0) / max(t1 - t0, 1e-12), 0.0, 1.0)
            bump = np.sin(math.pi * phase) ** 2
            side = np.where(offsets < 0, -1.0, 1.0)
            extra = side[:, None] * split_width * bump[None, :]
        else:
            extra = np.zeros((size, spec.frames))
        ids = []
        for m in range(size):
            track = path + (offsets[m] + extra[m])[:, None] * lateral
            positions[ped] = track
            ids.append(ped)
            ped += 1
        labels.append(ids)
    frames = [i * spec.frame_step for i in range(spec.frames)]
    tracks = {}
    for pid, track in positions.items():
        if spec.noise:
            track = track + rng.normal(0.0, spec.noise, track.shape)
        tracks[pid] = {f: (float(x), float(y)) for f, (x, y) in zip(frames, track)}
    return Scene(frames=frames, tracks=tracks, dt=spec.dt), labels


def generate(spec: SynthSpec):
    """Return (scene, groups) where groups lists the pedestrian ids of every group."""
    return _simulate(spec)


def scenario_split_merge(spec: SynthSpec, width=1.0, group=0):
    """Like :func:`generate`, but one group splits around an obstacle and rejoins.

    The labels still put the whole group together.
    """
    if not 0 <= group < spec.group_count:
        raise ConfigurationError(f"group {group} out of range for {spec.group_count} groups")
    return _simulate(spec, split_width=width, split_group=group)


def corpus(spec: SynthSpec, scenes: int, group_range=None):
    """Several independent scenes; scene i uses seed ``spec.seed + i``.

    ``group_range`` (lo, hi) draws the group count per scene uniformly.
    """
    rng = np.random.default_rng(spec.seed)
    out = []
    for i in range(scenes):
        s = replace(spec, seed=spec.seed + i)
        if group_range is not None:
            s = replace(s, group_count=int(rng.integers(group_range[0], group_range[1] + 1)))
        out.append(generate(s))
    return out
