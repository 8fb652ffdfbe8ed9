import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from trajforge import synth
from trajforge.canon import (
    IDENTITY,
    Pose,
    abs_to_rel,
    canonicalize_episode,
    compose_pose,
    delta_to_abs,
    euler_to_quat,
    geodesic,
    geodesic_arccos,
    hamilton,
    is_canonical,
    quat_to_euler,
    quat_to_rotvec,
    reorder_quat,
    rotvec_to_quat,
)
from trajforge.errors import ConversionError
from trajforge.model import legal_tags

S2 = np.sqrt(2) / 2


def axis_quat(axis, angle):
    q = np.zeros(4)
    q[axis] = np.sin(angle / 2)
    q[3] = np.cos(angle / 2)
    return q


def hamilton_ref(a, b):
    """Hamilton product from the scalar/vector form, independent of the package's component expansion."""
    av, aw = np.asarray(a[:3]), a[3]
    bv, bw = np.asarray(b[:3]), b[3]
    return np.concatenate([aw * bv + bw * av + np.cross(av, bv), [aw * bw - av @ bv]])


@pytest.mark.parametrize(
    "v,expected",
    [
        ([0, 0, 0], [0, 0, 0, 1]),
        ([np.pi, 0, 0], [1, 0, 0, 0]),
        ([0, 0, np.pi / 2], [0, 0, S2, S2]),
    ],
)
def test_rotvec_to_quat(v, expected):
    np.testing.assert_allclose(rotvec_to_quat(v), expected, atol=1e-12)


@pytest.mark.parametrize(
    "e,expected",
    [([0, 0, 0], [0, 0, 0, 1]), ([np.pi / 2, 0, 0], [S2, 0, 0, S2])],
)
def test_euler_to_quat_simple(e, expected):
    np.testing.assert_allclose(euler_to_quat(e), expected, atol=1e-12)


def test_euler_to_quat_composed_oracle():
    e = [np.pi / 6, np.pi / 4, np.pi / 3]
    expected = hamilton_ref(hamilton_ref(axis_quat(0, e[0]), axis_quat(1, e[1])), axis_quat(2, e[2]))
    if expected[3] < 0:
        expected = -expected
    np.testing.assert_allclose(euler_to_quat(e), expected, atol=1e-12)
    # intrinsic XYZ in scipy's notation
    np.testing.assert_allclose(euler_to_quat(e), Rotation.from_euler("XYZ", e).as_quat(), atol=1e-12)


def test_reorder_quat():
    np.testing.assert_allclose(reorder_quat([1, 0, 0, 0], "wxyz"), [0, 0, 0, 1])
    np.testing.assert_allclose(reorder_quat([0.5, 0.5, 0.5, 0.5], "wxyz"), [0.5, 0.5, 0.5, 0.5])
    q = np.array([0.1, -0.2, 0.3, -0.9])
    out = reorder_quat(q, "xyzw")
    np.testing.assert_allclose(out, -q / np.linalg.norm(q))
    with pytest.raises(ConversionError):
        reorder_quat([0, 0, 0, 0], "wxyz")


def test_hamilton_matches_reference():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a, b = synth.random_quats(2, rng)
        np.testing.assert_allclose(hamilton(a, b), hamilton_ref(a, b), atol=1e-14)


def test_delta_to_abs():
    np.testing.assert_array_equal(delta_to_abs([[1.0, 2.0]], [[0.5, -0.5]]), [[1.5, 1.5]])
    s = np.random.default_rng(0).normal(size=(6, 3))
    np.testing.assert_array_equal(delta_to_abs(s, np.zeros_like(s)), s)
    with pytest.raises(ConversionError):
        delta_to_abs(np.zeros((3, 2)), np.zeros((3, 3)))


def test_abs_to_rel():
    a = np.array([[1.0, 2.0], [3.0, 5.0], [0.5, 0.5]])
    s1 = np.array([1.0, 2.0])
    np.testing.assert_array_equal(abs_to_rel(a, s1), [[0.0, 0.0], [2.0, 3.0], [-0.5, -1.5]])
    np.testing.assert_array_equal(abs_to_rel(a, np.zeros(2)), a)
    with pytest.raises(ConversionError):
        abs_to_rel(a, np.zeros(3))


def test_compose_pose():
    base = Pose([1.0, 0, 0], [0.1, 0.2, 0.3, 0.9])
    same = compose_pose(base, Pose([0, 0, 0], IDENTITY))
    np.testing.assert_allclose(same.rotation, base.rotation, atol=1e-15)
    np.testing.assert_array_equal(same.position, base.position)

    step = Pose([0, 0, 0], axis_quat(2, np.pi / 4))
    two = compose_pose(compose_pose(Pose([0, 0, 0], IDENTITY), step), step)
    expected = hamilton_ref(axis_quat(2, np.pi / 4), axis_quat(2, np.pi / 4))
    np.testing.assert_allclose(two.rotation, expected, atol=1e-12)
    np.testing.assert_allclose(two.rotation, [0, 0, S2, S2], atol=1e-12)

    moved = compose_pose(Pose([1.0, 0, 0], IDENTITY), Pose([0, 1.0, 0], IDENTITY))
    np.testing.assert_array_equal(moved.position, [1, 1, 0])


quats = st.lists(st.floats(-1, 1, allow_nan=False), min_size=4, max_size=4).filter(
    lambda q: np.linalg.norm(q) > 1e-3
)


@settings(max_examples=300, deadline=None)
@given(quats)
def test_rotation_round_trips(q):
    q = reorder_quat(q)
    assert q[3] >= 0
    assert geodesic(rotvec_to_quat(quat_to_rotvec(q)), q) < 1e-9
    assert geodesic(euler_to_quat(quat_to_euler(q)), q) < 1e-9


def test_geodesic_matches_arccos_form():
    rng = np.random.default_rng(8)
    a, b = synth.random_quats(500, rng), synth.random_quats(500, rng)
    np.testing.assert_allclose(geodesic(a, b), geodesic_arccos(a, b), atol=1e-7)
    np.testing.assert_allclose(geodesic(a, b), (Rotation.from_quat(a).inv() * Rotation.from_quat(b)).magnitude(), atol=1e-9)
    assert np.all(geodesic(a, a) == 0) and np.all(geodesic(a, -a) == 0)


def test_quat_to_euler_matches_scipy_and_gimbal():
    q = Rotation.random(200, random_state=5).as_quat()
    np.testing.assert_allclose(quat_to_euler(q), Rotation.from_quat(q).as_euler("XYZ"), atol=1e-9)
    locked = euler_to_quat([0.3, np.pi / 2, 0.0])
    e = quat_to_euler(locked)
    assert abs(e[1] - np.pi / 2) < 1e-6 and e[2] == 0.0
    assert geodesic(euler_to_quat(e), locked) < 1e-6


def test_canonicalize_already_canonical_is_identity():
    ep = synth.perfect_joint_episode("e", rng=2)
    assert canonicalize_episode(ep) == ep


def test_canonicalize_delta_joint():
    ep = synth.mixed_tag_episodes(n=2)[1]
    assert ep.fields["joint_action"].spec.prefix == "delta"
    c = canonicalize_episode(ep)
    s = ep.fields["joint_state"].values
    np.testing.assert_array_equal(c.fields["joint_action"].values, s + ep.fields["joint_action"].values)
    assert c.fields["joint_action"].spec.tag == "abs_joint"


def test_canonicalize_rel_euler_eef_hand_conversion():
    rng = np.random.default_rng(11)
    T = 5
    state_pos = rng.normal(size=(T, 3))
    state_rotvec = rng.normal(size=(T, 3)) * 0.5
    rel_pos = rng.normal(size=(T, 3)) * 0.1
    rel_euler = rng.uniform(-1, 1, size=(T, 3))
    ep = synth.episode(
        "rel",
        [
            synth.series("arm_state", "state", "eef", "abs", "rotvec", np.hstack([state_pos, state_rotvec])),
            synth.series("arm_action", "action", "eef", "rel", "euler", np.hstack([rel_pos, rel_euler])),
        ],
    )
    c = canonicalize_episode(ep)
    assert c.fields["arm_action"].spec.tag == "abs_quat"
    assert c.fields["arm_state"].spec.tag == "abs_quat"
    # hand conversion via scipy: first-frame state pose composed with each world-frame offset
    s1 = Rotation.from_rotvec(state_rotvec[0])
    for t in range(T):
        expected_rot = Rotation.from_euler("XYZ", rel_euler[t]) * s1
        got = c.fields["arm_action"].values[t]
        np.testing.assert_allclose(got[:3], state_pos[0] + rel_pos[t], atol=1e-12)
        assert geodesic(got[3:7], expected_rot.as_quat()) < 1e-9
        assert got[6] >= 0


def test_canonicalize_delta_wxyz_eef_with_gripper():
    rng = np.random.default_rng(4)
    T = 4
    state = np.hstack([rng.normal(size=(T, 3)), synth.random_quats(T, rng)])
    dq_wxyz = synth.random_quats(T, rng)
    action = np.hstack([rng.normal(size=(T, 3)), dq_wxyz, rng.uniform(size=(T, 1))])
    ep = synth.episode(
        "d",
        [
            synth.series("s", "state", "eef", "abs", "quat", state),
            synth.series("a", "action", "eef", "delta", "wxyz", action, gripper=True, state="s"),
        ],
    )
    c = canonicalize_episode(ep).fields["a"].values
    for t in range(T):
        dq = Rotation.from_quat(np.r_[dq_wxyz[t, 1:], dq_wxyz[t, 0]])
        expected = dq * Rotation.from_quat(state[t, 3:])
        assert geodesic(c[t, 3:7], expected.as_quat()) < 1e-9
        np.testing.assert_allclose(c[t, :3], state[t, :3] + action[t, :3], atol=1e-15)
        assert c[t, 7] == action[t, 7]


def test_canonicalize_mixed_fixture_idempotent_and_unit():
    eps = synth.mixed_tag_episodes(n=10)
    assert synth.covered_tags(eps) == legal_tags()
    for ep in eps:
        once = canonicalize_episode(ep)
        assert is_canonical(once)
        assert canonicalize_episode(once) == once
        for s in once.fields.values():
            if s.spec.suffix == "quat":
                q = s.values[:, 3:7]
                np.testing.assert_allclose(np.linalg.norm(q, axis=1), 1.0, atol=1e-12)
                assert np.all(q[:, 3] >= 0)


def test_canonicalize_requires_pairable_state():
    ep = synth.episode(
        "x",
        [
            synth.series("a", "action", "non_eef", "delta", "joint", np.zeros((3, 2))),
        ],
    )
    with pytest.raises(Exception, match="cannot pair"):
        canonicalize_episode(ep)
