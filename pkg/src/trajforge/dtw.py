"""Frame costs, dynamic time warping, and pairwise DTW distance matrices.

Two cost modes exist. Joint mode compares min-max normalized joint vectors;
eef mode compares 3D positions and xyzw quaternions. Both add a weighted
L1 gripper term. DTW distances are the optimal cumulative cost divided by
the number of cells on the optimal warping path.
"""
from __future__ import annotations

import json
import logging
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import _jsonio
from .canon import geodesic
from .errors import DTWError

logger = logging.getLogger(__name__)

MODES = ("joint", "eef")
_UNIT_TOL = 1e-6
# below this many pairs a process pool costs more than it saves
_PARALLEL_MIN_PAIRS = 256


@dataclass(frozen=True)
class CostWeights:
    w_pos: float = 1.0
    w_rot: float = 1.0
    w_grip: float = 100.0

    def __post_init__(self):
        for name in ("w_pos", "w_rot", "w_grip"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise DTWError(f"{name} must be a finite non-negative number, got {v!r}")


@dataclass(frozen=True)
class FrameView:
    """One frame as seen by a cost function."""

    joints: np.ndarray | None = None
    eef_position: np.ndarray | None = None
    eef_rotation: np.ndarray | None = None
    gripper: float = 0.0

    @property
    def mode(self):
        has_joint = self.joints is not None
        has_eef = self.eef_position is not None or self.eef_rotation is not None
        if has_joint == has_eef:
            raise DTWError("a frame must carry either joints or an eef pose, not both or neither")
        return "joint" if has_joint else "eef"


@dataclass(frozen=True, eq=False)
class TrajectoryView:
    """A whole sequence in struct-of-arrays form.

    ``joints`` is ``(T, d)`` in joint mode; ``positions`` ``(T, k, 3)`` and
    ``rotations`` ``(T, k, 4)`` hold ``k`` end effectors in eef mode.
    ``gripper`` is ``(T, g)``; with ``g == 0`` the gripper term vanishes.
    """

    mode: str
    gripper: np.ndarray
    joints: np.ndarray | None = None
    positions: np.ndarray | None = None
    rotations: np.ndarray | None = None

    def __len__(self):
        return self.gripper.shape[0]

    @classmethod
    def from_frames(cls, frames):
        if len(frames) == 0:
            raise DTWError("empty sequence")
        modes = {f.mode for f in frames}
        if len(modes) != 1:
            raise DTWError("frames mix joint and eef modes")
        mode = modes.pop()
        grip = np.array([[float(f.gripper)] for f in frames])
        if mode == "joint":
            joints = np.array([np.asarray(f.joints, dtype=np.float64) for f in frames])
            return cls(mode, grip, joints=joints)
        pos = np.array([np.asarray(f.eef_position, dtype=np.float64) for f in frames])[:, None, :]
        rot = np.array([np.asarray(f.eef_rotation, dtype=np.float64) for f in frames])[:, None, :]
        return cls(mode, grip, positions=pos, rotations=rot)

    def frame(self, t):
        g = float(self.gripper[t].sum()) if self.gripper.shape[1] else 0.0
        if self.mode == "joint":
            return FrameView(joints=self.joints[t], gripper=g)
        return FrameView(eef_position=self.positions[t, 0], eef_rotation=self.rotations[t, 0], gripper=g)


def _as_view(seq):
    if isinstance(seq, TrajectoryView):
        if len(seq) == 0:
            raise DTWError("empty sequence")
        return seq
    return TrajectoryView.from_frames(list(seq))


# -- normalization -----------------------------------------------------------------


def minmax_bounds(series_group):
    if len(series_group) == 0:
        raise DTWError("cannot normalize an empty group")
    arrays = [np.asarray(s, dtype=np.float64) for s in series_group]
    dims = {a.shape[-1] for a in arrays}
    if len(dims) != 1:
        raise DTWError(f"group members disagree on dimension count: {sorted(dims)}")
    stacked = np.concatenate([a.reshape(-1, a.shape[-1]) for a in arrays], axis=0)
    return stacked.min(axis=0), stacked.max(axis=0)


def apply_bounds(series, lo, hi):
    span = hi - lo
    constant = span == 0
    out = (np.asarray(series, dtype=np.float64) - lo) / np.where(constant, 1.0, span)
    return np.where(constant, 0.0, out)


def minmax_normalize(series_group):
    """Scale each dimension to [0, 1] using the min and max over the whole group.

    Constant dimensions map to 0. Returns ``(normalized, (lo, hi))``.
    """
    lo, hi = minmax_bounds(series_group)
    return [apply_bounds(s, lo, hi) for s in series_group], (lo, hi)


# -- frame costs ----------------------------------------------------------------------


def frame_cost_joint(x, y, w=CostWeights()):
    if x.joints is None or y.joints is None:
        raise DTWError("joint cost needs joint vectors on both frames")
    jx = np.asarray(x.joints, dtype=np.float64)
    jy = np.asarray(y.joints, dtype=np.float64)
    if jx.shape != jy.shape:
        raise DTWError(f"joint dims differ: {jx.shape} vs {jy.shape}")
    return float(w.w_pos * np.linalg.norm(jx - jy) + w.w_grip * abs(x.gripper - y.gripper))


def quat_geodesic(q1, q2):
    """``2 arccos(|q1 . q2|)`` in radians; raises on non-unit input."""
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    for q in (q1, q2):
        if abs(np.linalg.norm(q) - 1.0) > _UNIT_TOL:
            raise DTWError(f"quaternion {q.tolist()} is not unit norm")
    return float(geodesic(q1, q2))


def frame_cost_eef(x, y, w=CostWeights()):
    for f in (x, y):
        if f.eef_position is None or f.eef_rotation is None:
            raise DTWError("eef cost needs position and rotation on both frames")
    dp = np.linalg.norm(np.asarray(x.eef_position, dtype=np.float64) - np.asarray(y.eef_position, dtype=np.float64))
    return float(w.w_pos * dp + w.w_rot * quat_geodesic(x.eef_rotation, y.eef_rotation) + w.w_grip * abs(x.gripper - y.gripper))


def cost_matrix(a, b, w=CostWeights()):
    """All frame costs between two views as a ``(len(a), len(b))`` array."""
    if a.mode != b.mode:
        raise DTWError(f"cannot compare {a.mode} and {b.mode} sequences")
    if a.gripper.shape[1] != b.gripper.shape[1]:
        raise DTWError("sequences disagree on gripper column count")
    if a.mode == "joint":
        if a.joints.shape[1] != b.joints.shape[1]:
            raise DTWError(f"joint dims differ: {a.joints.shape[1]} vs {b.joints.shape[1]}")
        c = w.w_pos * np.linalg.norm(a.joints[:, None, :] - b.joints[None, :, :], axis=-1)
    else:
        if a.positions.shape[1] != b.positions.shape[1]:
            raise DTWError("sequences disagree on end-effector count")
        dp = np.linalg.norm(a.positions[:, None] - b.positions[None, :], axis=-1)
        dq = geodesic(a.rotations[:, None], b.rotations[None, :])
        c = (w.w_pos * dp + w.w_rot * dq).sum(axis=-1)
    if a.gripper.shape[1]:
        c = c + w.w_grip * np.abs(a.gripper[:, None, :] - b.gripper[None, :, :]).sum(axis=-1)
    return c


# -- dynamic program ------------------------------------------------------------------


class DTWDistance(NamedTuple):
    distance: float
    path_length: int


@dataclass(frozen=True)
class Alignment:
    cost: float
    path: list
    distance: float


def accumulate(c):
    """Cumulative cost table with a padded border: ``D[i, j]`` covers ``c[:i, :j]``."""
    T, U = c.shape
    D = np.full((T + 1, U + 1), np.inf)
    D[0, 0] = 0.0
    # anti-diagonals are independent, so each is one vectorized step
    for s in range(2, T + U + 1):
        i = np.arange(max(1, s - U), min(T, s - 1) + 1)
        j = s - i
        D[i, j] = c[i - 1, j - 1] + np.minimum(np.minimum(D[i - 1, j - 1], D[i - 1, j]), D[i, j - 1])
    return D


def backtrace(D):
    """Optimal path as 0-based index pairs; ties prefer diagonal, then vertical, then horizontal."""
    i, j = D.shape[0] - 1, D.shape[1] - 1
    path = [(i - 1, j - 1)]
    while (i, j) != (1, 1):
        best, step = D[i - 1, j - 1], (i - 1, j - 1)
        if D[i - 1, j] < best:
            best, step = D[i - 1, j], (i - 1, j)
        if D[i, j - 1] < best:
            step = (i, j - 1)
        i, j = step
        path.append((i - 1, j - 1))
    path.reverse()
    return path


def align(a, b, w=CostWeights()):
    a = _as_view(a)
    b = _as_view(b)
    c = cost_matrix(a, b, w)
    D = accumulate(c)
    path = backtrace(D)
    cost = float(D[-1, -1])
    return Alignment(cost=cost, path=path, distance=cost / len(path))


def dtw_distance(a, b, w=CostWeights()):
    """Path-length normalized DTW distance and the number of cells on the optimal path."""
    res = align(a, b, w)
    return DTWDistance(res.distance, len(res.path))


# -- episodes -> views ------------------------------------------------------------------


def episode_mode(ep):
    return "eef" if ep.field_names(role="action", kind="eef") else "joint"


def episode_view(ep, mode=None, role="action"):
    """Build the cost-function view of a canonicalized episode.

    Joint mode concatenates every non-eef field of ``role`` (sorted by name);
    eef mode stacks every eef field as one end effector. Flagged gripper
    columns from any field of ``role`` form the gripper block.
    """
    mode = mode or episode_mode(ep)
    if mode not in MODES:
        raise DTWError(f"unknown mode {mode!r}")
    names = ep.field_names(role=role)
    grip_cols = [ep.fields[n].values[:, -1:] for n in names if ep.fields[n].spec.gripper]
    T = ep.frame_count
    gripper = np.concatenate(grip_cols, axis=1) if grip_cols else np.zeros((T, 0))
    if mode == "joint":
        cols = []
        for n in ep.field_names(role=role, kind="non_eef"):
            spec = ep.fields[n].spec
            v = ep.fields[n].values
            cols.append(v[:, :-1] if spec.gripper else v)
        if not cols:
            raise DTWError(f"no joint-space {role} fields", episode_id=ep.episode_id)
        return TrajectoryView("joint", gripper, joints=np.concatenate(cols, axis=1))
    eef = ep.field_names(role=role, kind="eef")
    if not eef:
        raise DTWError(f"no eef {role} fields", episode_id=ep.episode_id)
    for n in eef:
        if ep.fields[n].spec.suffix != "quat":
            raise DTWError(f"field {n!r} is {ep.fields[n].spec.suffix}; canonicalize first", episode_id=ep.episode_id)
    pos = np.stack([ep.fields[n].values[:, 0:3] for n in eef], axis=1)
    rot = np.stack([ep.fields[n].values[:, 3:7] for n in eef], axis=1)
    return TrajectoryView("eef", gripper, positions=pos, rotations=rot)


def normalize_group(views):
    """Min-max normalize joints (joint mode) and gripper columns across a task group."""
    out = list(views)
    if not out:
        return out
    if out[0].gripper.shape[1]:
        grips, _ = minmax_normalize([v.gripper for v in out])
    else:
        grips = [v.gripper for v in out]
    if out[0].mode == "joint":
        joints, _ = minmax_normalize([v.joints for v in out])
        return [TrajectoryView("joint", g, joints=j) for g, j in zip(grips, joints)]
    return [TrajectoryView("eef", g, positions=v.positions, rotations=v.rotations) for g, v in zip(grips, out)]


# -- pairwise matrix ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    ids: tuple
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        n = len(self.ids)
        if values.shape != (n, n):
            raise DTWError(f"matrix shape {values.shape} does not match {n} ids")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise DTWError("distances must be finite and non-negative")
        if np.any(np.diag(values) != 0) or not np.array_equal(values, values.T):
            raise DTWError("distance matrix must be symmetric with zero diagonal")
        values.setflags(write=False)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.ids)

    def index(self, episode_id):
        return self.ids.index(episode_id)

    def d(self, a, b):
        return float(self.values[self.index(a), self.index(b)])

    def reordered(self, ids):
        idx = [self.index(i) for i in ids]
        return DistanceMatrix(tuple(ids), self.values[np.ix_(idx, idx)])

    def to_dict(self):
        return {"ids": list(self.ids), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(tuple(d["ids"]), np.array(d["values"], dtype=np.float64).reshape(len(d["ids"]), len(d["ids"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise DTWError(f"malformed distance matrix: {exc}") from None


def save_matrix(dm, path):
    _jsonio.dump_file(dm.to_dict(), path)


def load_matrix(path):
    return DistanceMatrix.from_dict(_jsonio.load_file(path))


def save_matrix_binary(dm, path):
    """JSON header line, then row-major little-endian float64 values."""
    header = json.dumps({"ids": list(dm.ids), "shape": list(dm.values.shape), "dtype": "<f8"}, sort_keys=True)
    with open(path, "wb") as f:
        f.write(header.encode("utf-8") + b"\n")
        f.write(np.ascontiguousarray(dm.values, dtype="<f8").tobytes())


def load_matrix_binary(path):
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        n, m = header["shape"]
        data = f.read()
    if len(data) != n * m * struct.calcsize("<d"):
        raise DTWError(f"{path}: expected {n * m} float64 values")
    return DistanceMatrix(tuple(header["ids"]), np.frombuffer(data, dtype="<f8").reshape(n, m))


_WORKER_VIEWS = None
_WORKER_WEIGHTS = None


def _init_worker(views, w):
    global _WORKER_VIEWS, _WORKER_WEIGHTS
    _WORKER_VIEWS, _WORKER_WEIGHTS = views, w


def _pair_chunk(pairs):
    return [align(_WORKER_VIEWS[i], _WORKER_VIEWS[j], _WORKER_WEIGHTS).distance for i, j in pairs]


def default_workers():
    env = os.environ.get("TRAJFORGE_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise DTWError(f"TRAJFORGE_WORKERS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def pairwise_views(ids, views, w=CostWeights(), workers=1):
    n = len(views)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    if workers > 1 and len(pairs) >= _PARALLEL_MIN_PAIRS:
        chunks = [pairs[k::workers] for k in range(workers)]
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(views, w)) as pool:
            results = list(pool.map(_pair_chunk, chunks))
        dist = {}
        for chunk, res in zip(chunks, results):
            dist.update(zip(chunk, res))
        values_flat = [dist[p] for p in pairs]
    else:
        values_flat = [align(views[i], views[j], w).distance for i, j in pairs]
    values = np.zeros((n, n))
    for (i, j), d in zip(pairs, values_flat):
        values[i, j] = values[j, i] = d
    return DistanceMatrix(tuple(ids), values)


def pairwise_matrix(group: Sequence, mode=None, w=CostWeights(), workers=None):
    """Full DTW distance matrix over a task group of canonicalized episodes.

    Normalization bounds are computed once over the whole group. Each cell is
    an independent computation on immutable inputs, so the result does not
    depend on ``workers``.
    """
    if not group:
        raise DTWError("empty group")
    modes = {episode_mode(ep) for ep in group} if mode is None else {mode}
    if len(modes) != 1:
        raise DTWError(f"task group mixes cost modes {sorted(modes)}", hint="pass an explicit mode")
    mode = modes.pop()
    views = normalize_group([episode_view(ep, mode) for ep in group])
    workers = default_workers() if workers is None else max(1, int(workers))
    logger.debug("pairwise DTW over %d episodes (%s mode, %d workers)", len(group), mode, workers)
    return pairwise_views([ep.episode_id for ep in group], views, w, workers)


def save_group_matrices(matrices, out_dir):
    out_dir = Path(out_dir)
    for task_id, dm in matrices.items():
        save_matrix(dm, out_dir / f"{task_id}.json")
