"""Synthetic episodes and distance matrices with known structure.

Used by the test-suite and the demo scripts. Every generator takes an
explicit ``numpy.random.Generator`` or seed, so fixtures are reproducible.
"""
from __future__ import annotations

from itertools import product

import numpy as np

from .dtw import DistanceMatrix
from .model import (
    PREFIXES,
    ROTATION_DIMS,
    Episode,
    FieldSeries,
    FieldSpec,
    FrameStat,
    StepAnnotation,
)

ROT_SUFFIXES = tuple(ROTATION_DIMS)


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def series(name, role, kind, prefix, suffix, values, gripper=False, state=None):
    values = np.asarray(values, dtype=np.float64)
    spec = FieldSpec(name, role, kind, prefix, suffix, values.shape[1], gripper=gripper, state=state)
    return FieldSeries(spec, values)


def episode(episode_id, fields, task_id="task", raw="do the task", fg=None, frame_stats=None, source="synthetic", fps=10.0):
    fields = {f.spec.name: f for f in fields}
    T = len(next(iter(fields.values())))
    steps = None if fg is None else tuple(StepAnnotation(i + 1, t) for i, t in enumerate(fg))
    stats = None if frame_stats is None else tuple(FrameStat(*s) for s in frame_stats)
    return Episode(episode_id, task_id, raw, fields, T, fps, steps, stats, source)


def random_quats(n, rng=None):
    """Uniformly random unit quaternions (xyzw, either sign)."""
    q = _rng(rng).normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def random_rotation_code(suffix, n, rng=None):
    rng = _rng(rng)
    if suffix in ("quat", "wxyz"):
        return random_quats(n, rng)
    if suffix == "rotvec":
        axis = random_quats(n, rng)[:, :3]
        axis /= np.linalg.norm(axis, axis=1, keepdims=True)
        return axis * rng.uniform(0, np.pi, size=(n, 1))
    return rng.uniform(-np.pi, np.pi, size=(n, 3)) * np.array([1.0, 0.49, 1.0])


def random_walk(T, d, rng=None, step=0.05):
    rng = _rng(rng)
    return np.cumsum(rng.normal(scale=step, size=(T, d)), axis=0) + rng.uniform(-1, 1, size=d)


def next_state_actions(states):
    """Absolute actions that exactly reach the next recorded state (last frame holds)."""
    states = np.asarray(states, dtype=np.float64)
    return np.concatenate([states[1:], states[-1:]], axis=0)


def perfect_joint_episode(episode_id, T=20, d=4, rng=None, task_id="task", gripper=True):
    """Joint-space log whose absolute actions equal the next-frame state exactly."""
    rng = _rng(rng)
    s = random_walk(T, d, rng)
    if gripper:
        s[:, -1] = (np.arange(T) >= T // 2).astype(float)
    return episode(
        episode_id,
        [
            series("joint_state", "state", "non_eef", "abs", "joint", s, gripper=gripper),
            series("joint_action", "action", "non_eef", "abs", "joint", next_state_actions(s), gripper=gripper),
        ],
        task_id=task_id,
    )


def mixed_tag_episodes(n=10, T=8, rng=0):
    """``n`` episodes whose fields jointly cover all 20 legal tag tuples (``n >= 6``).

    Every episode has a joint state, two eef states and three actions
    (one joint, two eef) with rotating prefixes and rotation codes.
    """
    rng = _rng(rng)
    eef_combos = list(product(PREFIXES, ROT_SUFFIXES))
    eps = []
    for i in range(n):
        joint_state = random_walk(T, 3, rng)
        joint_prefix = PREFIXES[i % 3]
        if joint_prefix == "abs":
            joint_action = next_state_actions(joint_state)
        elif joint_prefix == "delta":
            joint_action = next_state_actions(joint_state) - joint_state
        else:
            joint_action = next_state_actions(joint_state) - joint_state[0]
        fields = [
            series("joint_state", "state", "non_eef", "abs", "joint", joint_state, gripper=True),
            series("joint_action", "action", "non_eef", joint_prefix, "joint", joint_action, gripper=True),
        ]
        for arm, combo_idx, state_suffix in (
            ("left", (2 * i) % 12, ROT_SUFFIXES[i % 4]),
            ("right", (2 * i + 1) % 12, ROT_SUFFIXES[(i + 1) % 4]),
        ):
            pos = random_walk(T, 3, rng)
            rot = random_rotation_code(state_suffix, T, rng)
            fields.append(series(f"{arm}_state", "state", "eef", "abs", state_suffix, np.hstack([pos, rot])))
            prefix, suffix = eef_combos[combo_idx]
            a_pos = rng.normal(scale=0.1, size=(T, 3))
            a_rot = random_rotation_code(suffix, T, rng)
            a_grip = rng.uniform(0, 1, size=(T, 1))
            fields.append(
                series(
                    f"{arm}_action", "action", "eef", prefix, suffix,
                    np.hstack([a_pos, a_rot, a_grip]), gripper=True, state=f"{arm}_state",
                )
            )
        eps.append(episode(f"mixed-{i:02d}", fields, task_id=f"task-{i % 2}"))
    return eps


def covered_tags(episodes):
    return {
        (s.spec.role, s.spec.kind, s.spec.prefix, s.spec.suffix) for ep in episodes for s in ep.fields.values()
    }


def planted_matrix(sizes, within=0.1, between=1.0, rng=None, jitter=0.2, prefix="e"):
    """Symmetric matrix with block structure and the planted labels.

    Within-cluster distances lie in ``within * [1 - jitter, 1]`` and
    between-cluster distances in ``between * [1, 1 + jitter]``.
    """
    rng = _rng(rng)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    n = len(labels)
    v = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if labels[i] == labels[j]:
                d = within * rng.uniform(1 - jitter, 1)
            else:
                d = between * rng.uniform(1, 1 + jitter)
            v[i, j] = v[j, i] = d
    ids = tuple(f"{prefix}{i:03d}" for i in range(n))
    return DistanceMatrix(ids, v), dict(zip(ids, labels.tolist()))


def planted_joint_trajectories(modes=3, per_mode=4, T=30, rng=None, spread=0.01):
    """Joint-space trajectories drawn around ``modes`` distinct prototypes.

    Prototypes differ strongly (different sinusoid shapes and gripper timing),
    members differ by a small offset, so DTW between/within ratios are large.
    """
    rng = _rng(rng)
    t = np.linspace(0, 1, T)
    eps, truth = [], {}
    for m in range(modes):
        base = np.stack([np.sin(2 * np.pi * (m + 1) * t), np.cos(np.pi * (m + 1) * t), t * (m - 1)], axis=1)
        grip = (t >= (m + 1) / (modes + 1)).astype(float)[:, None]
        for k in range(per_mode):
            s = np.hstack([base + spread * rng.normal(size=(1, 3)), grip])
            ep_id = f"m{m}-{k}"
            eps.append(
                episode(
                    ep_id,
                    [
                        series("joint_state", "state", "non_eef", "abs", "joint", s, gripper=True),
                        series("joint_action", "action", "non_eef", "abs", "joint", next_state_actions(s), gripper=True),
                    ],
                )
            )
            truth[ep_id] = m
    return eps, truth


def _warp(values, repeats):
    return np.repeat(values, repeats, axis=0)


def pipeline_fixture(tasks=3, per_task=4, T=24, rng=0):
    """Episodes for an end-to-end run: ``tasks`` tasks of ``per_task`` near-duplicates.

    Near-duplicates replay the same motion at different speeds (frames
    repeated), so their DTW distance is exactly zero. Actions reach the next
    state exactly, so every episode passes the consistency gate.
    """
    rng = _rng(rng)
    eps = []
    for ti in range(tasks):
        base = random_walk(T, 5, rng)
        base[1] = base[0]  # stationary first step keeps warped actions a warp of the base actions
        base[:, -1] = (np.arange(T) >= T // 2 + ti).astype(float)
        for k in range(per_task):
            repeats = np.ones(T, dtype=int)
            repeats[rng.choice(np.arange(1, T), size=k, replace=False)] += 1
            s = _warp(base, repeats)
            n = len(s)
            steps = [f"move the arm toward object {ti}", "close the gripper around it", "lift it off the table"]
            eps.append(
                episode(
                    f"t{ti}-e{k}",
                    [
                        series("joint_state", "state", "non_eef", "abs", "joint", s, gripper=True),
                        series("joint_action", "action", "non_eef", "abs", "joint", next_state_actions(s), gripper=True),
                    ],
                    task_id=f"task-{ti}",
                    raw=f"pick up object {ti}",
                    fg=steps,
                    frame_stats=[(80.0 + k, True)] * n,
                    source="synthetic",
                )
            )
    return eps
