"""Rotation encodings and temporal-reference conversion to the canonical form.

Canonical form: every action is absolute, every end-effector rotation is a
unit quaternion in xyzw order with ``w >= 0``.

Conventions
-----------
- Quaternions are xyzw throughout; ``wxyz`` input is reordered on entry.
- Euler angles are intrinsic XYZ: rotate about x, then the new y, then the
  new z, so ``R = Rx(a) @ Ry(b) @ Rz(c)``.
- Delta rotations act in the world frame: ``q_abs = q_delta * q_base``.
- A gripper column (last column of a field flagged ``gripper``) is an
  absolute opening in end-effector fields and is passed through unchanged.
  In joint fields it is part of the joint vector and follows the field's
  prefix like every other column.

All functions accept a single rotation or a stack of them along axis 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConversionError
from .model import Episode, FieldSeries, FieldSpec

NORM_EPS = 1e-9
_SMALL_ANGLE = 1e-12
# renormalizing an already-unit quaternion can move the last bit; skip it so that
# canonicalization is idempotent bit-for-bit
_NORM_SKIP = 1e-12
_LOCK_EPS = 1e-12

IDENTITY = np.array([0.0, 0.0, 0.0, 1.0])


def hemisphere(q):
    """Flip sign so that ``w >= 0``."""
    q = np.array(q, dtype=np.float64)
    flip = q[..., 3] < 0
    q[flip] = -q[flip]
    return q


def normalize_quat(q):
    q = np.array(q, dtype=np.float64)
    norms = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norms <= NORM_EPS):
        raise ConversionError("zero-norm quaternion")
    off = np.abs(norms - 1.0) > _NORM_SKIP
    q = np.where(off, q / norms, q)
    return hemisphere(q)


def hamilton(a, b):
    """Hamilton product ``a * b`` of xyzw quaternions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ax, ay, az, aw = np.moveaxis(a, -1, 0)
    bx, by, bz, bw = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ],
        axis=-1,
    )


def conjugate(q):
    q = np.array(q, dtype=np.float64)
    q[..., :3] *= -1
    return q


def rotvec_to_quat(v):
    """Axis-angle vector (radians) to unit xyzw quaternion.

    >>> rotvec_to_quat([0.0, 0.0, 0.0])
    array([0., 0., 0., 1.])
    """
    v = np.asarray(v, dtype=np.float64)
    angle = np.linalg.norm(v, axis=-1, keepdims=True)
    small = angle < _SMALL_ANGLE
    axis = np.where(small, np.array([1.0, 0.0, 0.0]), v / np.where(small, 1.0, angle))
    half = 0.5 * angle
    q = np.concatenate([axis * np.sin(half), np.cos(half)], axis=-1)
    return hemisphere(q)


def quat_to_rotvec(q):
    q = normalize_quat(q)
    xyz = q[..., :3]
    s = np.linalg.norm(xyz, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, q[..., 3:4])
    # angle/sin(angle/2) -> 2 as angle -> 0
    scale = np.where(s < _SMALL_ANGLE, 2.0, angle / np.where(s < _SMALL_ANGLE, 1.0, s))
    return xyz * scale


def _axis_quat(axis, angle):
    angle = np.asarray(angle, dtype=np.float64)
    q = np.zeros(angle.shape + (4,))
    q[..., axis] = np.sin(0.5 * angle)
    q[..., 3] = np.cos(0.5 * angle)
    return q


def euler_to_quat(e):
    """Intrinsic XYZ Euler angles (radians) to unit xyzw quaternion."""
    e = np.asarray(e, dtype=np.float64)
    qx = _axis_quat(0, e[..., 0])
    qy = _axis_quat(1, e[..., 1])
    qz = _axis_quat(2, e[..., 2])
    return hemisphere(hamilton(hamilton(qx, qy), qz))


def quat_to_matrix(q):
    x, y, z, w = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], axis=-1),
            np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], axis=-1),
            np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], axis=-1),
        ],
        axis=-2,
    )


def quat_to_euler(q):
    """Unit xyzw quaternion to intrinsic XYZ Euler angles.

    At gimbal lock (pitch = +-pi/2) yaw is set to 0 and roll absorbs the
    free angle.
    """
    q = normalize_quat(q)
    m = quat_to_matrix(q)
    # atan2/hypot keeps pitch accurate near +-pi/2 where arcsin does not
    pitch = np.arctan2(m[..., 0, 2], np.hypot(m[..., 0, 0], m[..., 0, 1]))
    locked = np.hypot(m[..., 1, 2], m[..., 2, 2]) < _LOCK_EPS
    qy_inv = conjugate(_axis_quat(1, pitch))
    # locked: q = qx(roll) qy(pitch), read roll off q qy^-1
    rx = hemisphere(hamilton(q, qy_inv))
    roll_locked = 2.0 * np.arctan2(rx[..., 0], rx[..., 3])
    roll = np.where(locked, roll_locked, np.arctan2(-m[..., 1, 2], m[..., 2, 2]))
    # yaw from the residual so that the three angles reproduce q as a whole
    rz = hemisphere(hamilton(qy_inv, hamilton(conjugate(_axis_quat(0, roll)), q)))
    yaw = np.where(locked, 0.0, 2.0 * np.arctan2(rz[..., 2], rz[..., 3]))
    return np.stack([roll, pitch, yaw], axis=-1)


def reorder_quat(q, order="xyzw"):
    """Return ``q`` as a unit xyzw quaternion; ``order`` is the input layout."""
    q = np.asarray(q, dtype=np.float64)
    if order == "wxyz":
        q = np.concatenate([q[..., 1:4], q[..., 0:1]], axis=-1)
    elif order != "xyzw":
        raise ConversionError(f"unknown quaternion order {order!r}")
    return normalize_quat(q)


def to_quat(rot, suffix):
    """Convert a rotation block in encoding ``suffix`` to unit xyzw quaternions."""
    if suffix == "quat":
        return reorder_quat(rot, "xyzw")
    if suffix == "wxyz":
        return reorder_quat(rot, "wxyz")
    if suffix == "rotvec":
        return rotvec_to_quat(rot)
    if suffix == "euler":
        return euler_to_quat(rot)
    raise ConversionError(f"no rotation encoding for suffix {suffix!r}")


def geodesic(q1, q2):
    """Rotation angle ``2 arccos(|q1 . q2|)`` between unit quaternions, insensitive to sign.

    Evaluated as ``4 atan2(|q1 - s q2|, |q1 + s q2|)`` with ``s = sign(q1 . q2)``,
    which is the same quantity for unit inputs but keeps full precision near
    zero where ``arccos`` loses about half the digits.
    """
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    s = np.where(np.sum(q1 * q2, axis=-1, keepdims=True) < 0, -1.0, 1.0)
    return 4.0 * np.arctan2(np.linalg.norm(q1 - s * q2, axis=-1), np.linalg.norm(q1 + s * q2, axis=-1))


def geodesic_arccos(q1, q2):
    """Direct ``2 arccos(|q1 . q2|)`` with the dot product clamped to [0, 1]."""
    dot = np.abs(np.sum(np.asarray(q1) * np.asarray(q2), axis=-1))
    return 2.0 * np.arccos(np.clip(dot, 0.0, 1.0))


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "rotation", normalize_quat(self.rotation))


def compose_pose(base, delta):
    """Apply a world-frame ``delta`` pose to ``base``."""
    return Pose(base.position + delta.position, hamilton(delta.rotation, base.rotation))


# -- temporal references ---------------------------------------------------------


def _check_shapes(a, b, what):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConversionError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def delta_to_abs(state_seq, delta_action_seq):
    """Absolute targets ``s[t] + delta[t]`` for joint-space fields."""
    s, d = _check_shapes(state_seq, delta_action_seq, "delta_to_abs")
    return s + d


def abs_to_rel(abs_action_seq, first_state):
    a = np.asarray(abs_action_seq, dtype=np.float64)
    s1 = np.asarray(first_state, dtype=np.float64)
    if a.shape[-1:] != s1.shape[-1:] or s1.ndim != 1:
        raise ConversionError(f"abs_to_rel: dims mismatch {a.shape} vs {s1.shape}")
    return a - s1


def rel_to_abs(rel_action_seq, first_state):
    a = np.asarray(rel_action_seq, dtype=np.float64)
    s1 = np.asarray(first_state, dtype=np.float64)
    if a.shape[-1:] != s1.shape[-1:] or s1.ndim != 1:
        raise ConversionError(f"rel_to_abs: dims mismatch {a.shape} vs {s1.shape}")
    return a + s1


def _split_eef(values, spec):
    pos = values[:, :3]
    rot = values[:, spec.rotation_slice]
    grip = values[:, -1:] if spec.gripper else values[:, :0]
    return pos, rot, grip


def canonical_eef_values(values, spec):
    """Re-encode an eef block as ``[position, quat xyzw, (gripper)]`` without touching the prefix."""
    pos, rot, grip = _split_eef(np.asarray(values, dtype=np.float64), spec)
    return np.concatenate([pos, to_quat(rot, spec.suffix), grip], axis=1)


def _canonical_spec(spec, dims):
    return FieldSpec(
        name=spec.name,
        role=spec.role,
        kind=spec.kind,
        prefix="abs",
        suffix="joint" if spec.kind == "non_eef" else "quat",
        dims=dims,
        gripper=spec.gripper,
        state=spec.state,
    )


def _canonical_state(ep, name):
    series = ep.fields[name]
    spec = series.spec
    if spec.kind == "non_eef":
        return series
    values = canonical_eef_values(series.values, spec)
    return FieldSeries(_canonical_spec(spec, values.shape[1]), values)


def _canonical_action(ep, name, states):
    series = ep.fields[name]
    spec = series.spec
    values = series.values
    if spec.prefix == "abs":
        if spec.kind == "non_eef":
            return series
        out = canonical_eef_values(values, spec)
        return FieldSeries(_canonical_spec(spec, out.shape[1]), out)

    state_name = ep.paired_state(name)
    state = states[state_name]
    if state.spec.kind != spec.kind:
        raise ConversionError(
            f"action {name!r} ({spec.kind}) paired with state {state_name!r} ({state.spec.kind})",
            episode_id=ep.episode_id,
        )
    s = state.values

    if spec.kind == "non_eef":
        if s.shape != values.shape:
            raise ConversionError(
                f"action {name!r} shape {values.shape} != state {state_name!r} shape {s.shape}",
                episode_id=ep.episode_id,
            )
        out = delta_to_abs(s, values) if spec.prefix == "delta" else rel_to_abs(values, s[0])
        return FieldSeries(_canonical_spec(spec, out.shape[1]), out)

    d_pos, d_rot, grip = _split_eef(values, spec)
    d_q = to_quat(d_rot, spec.suffix)
    base_pos = s[:, :3]
    base_q = s[:, 3:7]
    if spec.prefix == "rel":
        base_pos = np.broadcast_to(base_pos[0], d_pos.shape)
        base_q = np.broadcast_to(base_q[0], d_q.shape)
    pos = base_pos + d_pos
    rot = normalize_quat(hamilton(d_q, base_q))
    out = np.concatenate([pos, rot, grip], axis=1)
    return FieldSeries(_canonical_spec(spec, out.shape[1]), out)


def canonicalize_episode(ep: Episode) -> Episode:
    """Convert every action to ``abs`` and every eef rotation to xyzw quaternions."""
    try:
        states = {n: _canonical_state(ep, n) for n in ep.field_names(role="state")}
        fields = dict(states)
        for name in ep.field_names(role="action"):
            fields[name] = _canonical_action(ep, name, states)
    except ConversionError as exc:
        if exc.episode_id is None:
            exc.episode_id = ep.episode_id
        raise
    # keep the original field order
    return ep.with_fields({n: fields[n] for n in ep.fields})


def is_canonical(ep):
    return all(
        s.spec.prefix == "abs" and s.spec.suffix in ("joint", "quat") for s in ep.fields.values()
    )
