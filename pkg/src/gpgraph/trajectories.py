"""Trajectory datasets: parsing, windowing, coordinate conversion, caching.

Text format, one observation per line::

    <frame> <ped> <x> <y>

with positions in world meters. Group label files hold one group per line as
space-separated pedestrian ids; pedestrians not listed are singletons.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DatasetFormatError, DatasetParseError
from .partition import GroupPartition

FRAME_INTERVAL = 0.4  # seconds between annotated frames (2.5 fps)
T_OBS = 8
T_PRED = 12

CACHE_MAGIC = b"GPGW"
CACHE_VERSION = 1


@dataclass
class Scene:
    """Pedestrian tracks on a uniform frame grid."""

    frames: list
    tracks: dict = field(default_factory=dict)  # ped_id -> {frame: (x, y)}
    dt: float = FRAME_INTERVAL

    @property
    def ped_ids(self):
        return sorted(self.tracks)

    @property
    def frame_stride(self) -> int:
        return self.frames[1] - self.frames[0] if len(self.frames) > 1 else 1

    def records(self):
        """All (frame, ped, x, y) tuples sorted by frame then pedestrian."""
        out = []
        for ped, track in self.tracks.items():
            for frame, (x, y) in track.items():
                out.append((frame, ped, x, y))
        out.sort(key=lambda r: (r[0], r[1]))
        return out


@dataclass
class TrajectoryWindow:
    """One observation/prediction slice of a scene.

    ``obs`` is (N, T_obs, 2) and ``fut`` is (N, T_pred, 2), absolute meters,
    rows aligned with ``ped_ids``.
    """

    ped_ids: list
    obs: np.ndarray
    fut: np.ndarray
    start_frame: int = 0

    @property
    def n(self) -> int:
        return len(self.ped_ids)

    @property
    def t_obs(self) -> int:
        return self.obs.shape[1]

    @property
    def t_pred(self) -> int:
        return self.fut.shape[1]


def _as_int(value: float, what: str, line: int) -> int:
    if not value.is_integer():
        raise DatasetParseError(f"{what} must be an integer, got {value}", line)
    return int(value)


def parse_dataset(text: str | Iterable[str]) -> Scene:
    """Parse the 4-column text format into a :class:`Scene`."""
    lines = text.splitlines() if isinstance(text, str) else text
    tracks: dict = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise DatasetParseError(f"expected 4 fields, got {len(parts)}", lineno)
        try:
            frame_f, ped_f, x, y = (float(p) for p in parts)
        except ValueError:
            raise DatasetParseError(f"non-numeric field in {line!r}", lineno) from None
        if not all(math.isfinite(v) for v in (frame_f, ped_f, x, y)):
            raise DatasetParseError("non-finite value", lineno)
        frame = _as_int(frame_f, "frame id", lineno)
        ped = _as_int(ped_f, "pedestrian id", lineno)
        track = tracks.setdefault(ped, {})
        if frame in track:
            raise DatasetParseError(f"duplicate record for frame {frame}, pedestrian {ped}", lineno)
        track[frame] = (x, y)

    observed = sorted({f for track in tracks.values() for f in track})
    if len(observed) > 1:
        diffs = np.diff(observed)
        stride = int(diffs.min())
        bad = diffs[diffs % stride != 0]
        if bad.size:
            raise DatasetFormatError(
                f"frame ids are not on a uniform grid: stride {stride} but found gap {int(bad[0])}"
            )
        frames = list(range(observed[0], observed[-1] + 1, stride))
    else:
        frames = observed
    return Scene(frames=frames, tracks={p: dict(sorted(t.items())) for p, t in sorted(tracks.items())})


def write_dataset(scene: Scene) -> str:
    """Serialize a scene; ``parse_dataset`` inverts this exactly."""
    buf = io.StringIO()
    for frame, ped, x, y in scene.records():
        buf.write(f"{frame} {ped} {x!r} {y!r}\n")
    return buf.getvalue()


def load_dataset(path) -> Scene:
    return parse_dataset(Path(path).read_text(encoding="utf-8"))


def make_windows(scene: Scene, t_obs: int = T_OBS, t_pred: int = T_PRED, stride: int = 1) -> list:
    """Slice a scene into windows of ``t_obs + t_pred`` consecutive grid frames.

    Only pedestrians present at every frame of a window are kept; windows with
    nobody left are dropped.
    """
    if min(t_obs, t_pred, stride) < 1:
        raise ValueError("t_obs, t_pred and stride must all be >= 1")
    length = t_obs + t_pred
    windows = []
    for start in range(0, len(scene.frames) - length + 1, stride):
        span = scene.frames[start : start + length]
        peds = [p for p in scene.ped_ids if all(f in scene.tracks[p] for f in span)]
        if not peds:
            continue
        pos = np.array([[scene.tracks[p][f] for f in span] for p in peds], dtype=np.float64)
        windows.append(
            TrajectoryWindow(ped_ids=peds, obs=pos[:, :t_obs], fut=pos[:, t_obs:], start_frame=span[0])
        )
    return windows


def to_relative(w: TrajectoryWindow | np.ndarray) -> np.ndarray:
    """Per-step displacements of the observed track; step 0 is zero."""
    obs = w.obs if isinstance(w, TrajectoryWindow) else np.asarray(w)
    rel = np.zeros_like(obs)
    rel[:, 1:] = obs[:, 1:] - obs[:, :-1]
    return rel


def from_relative(rel: np.ndarray, origin: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_relative` given each pedestrian's first position."""
    return np.asarray(origin)[:, None, :] + np.cumsum(rel, axis=1)


def future_displacements(w: TrajectoryWindow) -> np.ndarray:
    """(N, T_pred, 2) steps of the ground-truth future, starting from the last observed point."""
    prev = np.concatenate([w.obs[:, -1:], w.fut[:, :-1]], axis=1)
    return w.fut - prev


# -- group labels ------------------------------------------------------------------


def parse_group_labels(text: str) -> list:
    """One group per line, space-separated pedestrian ids."""
    groups, seen = [], set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            ids = [_as_int(float(tok), "pedestrian id", lineno) for tok in line.split()]
        except ValueError as exc:
            if isinstance(exc, DatasetParseError):
                raise
            raise DatasetParseError(f"non-numeric pedestrian id in {line!r}", lineno) from None
        if seen.intersection(ids) or len(set(ids)) != len(ids):
            raise DatasetParseError("pedestrian listed in more than one group", lineno)
        seen.update(ids)
        groups.append(ids)
    return groups


def write_group_labels(groups: Iterable[Iterable[int]]) -> str:
    groups = [list(g) for g in groups]
    lines = [" ".join(str(int(p)) for p in g) for g in groups if len(g) > 1]
    return "".join(line + "\n" for line in lines)


def window_labels(groups: Iterable[Iterable[int]], window: TrajectoryWindow) -> GroupPartition:
    """Restrict scene-level id groups to a window, in window row indices."""
    index = {p: i for i, p in enumerate(window.ped_ids)}
    claimed, out = set(), []
    for g in groups:
        rows = [index[p] for p in g if p in index]
        if rows:
            out.append(rows)
            claimed.update(rows)
    out.extend([i] for i in range(window.n) if i not in claimed)
    return GroupPartition(out, window.n)


# -- binary cache ------------------------------------------------------------------


def dump_windows(windows: Iterable[TrajectoryWindow]) -> bytes:
    """Serialize windows: magic, version byte, count, then length-prefixed records."""
    windows = list(windows)
    out = [CACHE_MAGIC, struct.pack("<BI", CACHE_VERSION, len(windows))]
    for w in windows:
        body = struct.pack("<qIII", w.start_frame, w.n, w.t_obs, w.t_pred)
        body += np.asarray(w.ped_ids, dtype="<i8").tobytes()
        body += np.ascontiguousarray(w.obs, dtype="<f8").tobytes()
        body += np.ascontiguousarray(w.fut, dtype="<f8").tobytes()
        out.append(struct.pack("<I", len(body)))
        out.append(body)
    return b"".join(out)


def load_windows(blob: bytes) -> list:
    if blob[:4] != CACHE_MAGIC:
        raise DatasetFormatError("not a window cache (bad magic)")
    version, count = struct.unpack_from("<BI", blob, 4)
    if version != CACHE_VERSION:
        raise DatasetFormatError(f"unsupported window cache version {version}")
    offset = 9
    windows = []
    for _ in range(count):
        (length,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        body = blob[offset : offset + length]
        if len(body) != length:
            raise DatasetFormatError("truncated window cache")
        offset += length
        start, n, t_obs, t_pred = struct.unpack_from("<qIII", body, 0)
        pos = 20
        ids = np.frombuffer(body, dtype="<i8", count=n, offset=pos)
        pos += 8 * n
        obs = np.frombuffer(body, dtype="<f8", count=n * t_obs * 2, offset=pos).reshape(n, t_obs, 2)
        pos += 8 * n * t_obs * 2
        fut = np.frombuffer(body, dtype="<f8", count=n * t_pred * 2, offset=pos).reshape(n, t_pred, 2)
        windows.append(
            TrajectoryWindow(ped_ids=[int(i) for i in ids], obs=obs.copy(), fut=fut.copy(), start_frame=start)
        )
    return windows
