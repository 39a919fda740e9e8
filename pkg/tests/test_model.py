import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from importlib import resources

from objmimic.errors import DimensionError, ModelError
from objmimic.model import (
    KinematicModel,
    clamp_to_limits,
    forward_kinematics,
    frame_jacobian,
    frame_pose,
    load_bundled_model,
    load_model,
)
from objmimic.se3 import Pose

TOY_DOC = """
# one revolute joint about z, arm sticking out along +x
joint spin parent=base child=arm axis=0,0,1 origin=1,0,0,0,0,0,0 limits=-3.14,3.14
frame tip link=arm offset=1,0,0,0,1,0,0
frame root link=base offset=1,0,0,0,0,0,0
"""


def test_bundled_humanoid_joint_count_matches_document(humanoid):
    doc = resources.files("objmimic.data").joinpath("humanoid.model").read_text("utf-8")
    declared = sum(
        1 for line in doc.splitlines() if line.split("#")[0].strip().startswith("joint ")
    )
    assert humanoid.n_joints == declared == 26


def test_bundled_humanoid_named_frames(humanoid):
    names = set(humanoid.frame_names)
    assert "torso" in names
    for side in "lr":
        for part in ("shoulder", "elbow", "wrist", "palm"):
            assert f"{side}_{part}" in names
        for finger in ("thumb", "index", "middle", "ring", "pinky"):
            assert f"{side}_{finger}_tip" in names


def test_empty_document_rejected():
    with pytest.raises(ModelError):
        load_model("# only comments\n")


def test_cycle_rejected():
    doc = """
joint a parent=x child=y axis=0,0,1 origin=1,0,0,0,0,0,0 limits=-1,1
joint b parent=y child=x axis=0,0,1 origin=1,0,0,0,0,0,0 limits=-1,1
"""
    with pytest.raises(ModelError):
        load_model(doc)


def test_duplicate_joint_name_rejected():
    doc = """
joint a parent=x child=y axis=0,0,1 origin=1,0,0,0,0,0,0 limits=-1,1
joint a parent=y child=z axis=0,0,1 origin=1,0,0,0,0,0,0 limits=-1,1
"""
    with pytest.raises(ModelError, match="duplicate"):
        load_model(doc)


def test_malformed_limits_rejected():
    doc = "joint a parent=x child=y axis=0,0,1 origin=1,0,0,0,0,0,0 limits=1,-1\n"
    with pytest.raises(ModelError, match="lo < hi"):
        load_model(doc)


def test_non_unit_axis_rejected():
    doc = "joint a parent=x child=y axis=0,0,2 origin=1,0,0,0,0,0,0 limits=-1,1\n"
    with pytest.raises(ModelError, match="unit"):
        load_model(doc)


def test_parse_error_names_line():
    doc = "joint a parent=x child=y axis=0,0,1 origin=1,0,0,0,0,0 limits=-1,1\n"
    with pytest.raises(ModelError, match="line 1"):
        load_model(doc)


def test_unknown_frame_link_rejected():
    doc = TOY_DOC + "frame bad link=nowhere offset=1,0,0,0,0,0,0\n"
    with pytest.raises(ModelError, match="nowhere"):
        load_model(doc)


def test_toy_fk_oracle():
    model = load_model(TOY_DOC)
    fk = forward_kinematics(model, np.array([np.pi / 2]))
    tip = fk["tip"]
    assert np.allclose(tip.translation, [0, 1, 0], atol=1e-12)
    expected = Pose.from_axis_angle([0, 0, 1], np.pi / 2)
    assert tip.rotation_angle_to(expected) < 1e-12


def test_home_pose_equals_chained_origins():
    doc = """
joint a parent=base child=l1 axis=0,0,1 origin=1,0,0,0,0.5,0,0 limits=-1,1
joint b parent=l1 child=l2 axis=0,1,0 origin=1,0,0,0,0,0,0.3 limits=-1,1
frame end link=l2 offset=1,0,0,0,0.1,0,0
"""
    model = load_model(doc)
    fk = forward_kinematics(model, np.zeros(2))
    assert np.allclose(fk["end"].translation, [0.6, 0, 0.3], atol=1e-12)


def test_fk_at_limits_is_finite(humanoid):
    for q in (humanoid.lower, humanoid.upper):
        fk = forward_kinematics(humanoid, q)
        for pose in fk.values():
            assert np.all(np.isfinite(pose.translation))
            assert np.all(np.isfinite(pose.rotation))


def test_fk_dimension_mismatch(humanoid):
    with pytest.raises(DimensionError):
        forward_kinematics(humanoid, np.zeros(7))


def test_clamp_cases(humanoid):
    q = np.zeros(26)
    assert np.array_equal(clamp_to_limits(humanoid, q), q)
    q_hi = humanoid.upper.copy()
    q_hi[3] += 0.5
    out = clamp_to_limits(humanoid, q_hi)
    assert out[3] == humanoid.upper[3]
    out = clamp_to_limits(humanoid, np.full(26, -1e9))
    assert np.array_equal(out, humanoid.lower)


@settings(max_examples=30, deadline=None, derandomize=True)
@given(st.integers(min_value=0, max_value=10_000))
def test_clamp_is_projection(seed):
    model = load_bundled_model("humanoid")
    rng = np.random.default_rng(seed)
    q = rng.uniform(-5, 5, model.n_joints)
    once = clamp_to_limits(model, q)
    assert np.array_equal(clamp_to_limits(model, once), once)


def test_fk_continuity_lipschitz(humanoid, rng):
    # 1e-6 rad on any single joint moves any frame by < 1e-4 m
    for _ in range(3):
        q = rng.uniform(humanoid.lower, humanoid.upper)
        base = forward_kinematics(humanoid, q)
        for j in range(humanoid.n_joints):
            qp = q.copy()
            qp[j] += 1e-6
            fk = forward_kinematics(humanoid, qp)
            for name in base:
                delta = np.linalg.norm(fk[name].translation - base[name].translation)
                assert delta < 1e-4


def test_frame_jacobian_matches_finite_differences(humanoid, rng):
    q = rng.uniform(humanoid.lower, humanoid.upper)
    jac, _ = frame_jacobian(humanoid, q, "l_palm")
    h = 1e-6
    for i in range(humanoid.n_joints):
        qp, qm = q.copy(), q.copy()
        qp[i] += h
        qm[i] -= h
        fp = frame_pose(humanoid, qp, "l_palm")
        fm = frame_pose(humanoid, qm, "l_palm")
        dp = (fp.translation - fm.translation) / (2 * h)
        dw = (fp @ fm.inverse()).log().angular / (2 * h)
        assert np.allclose(dp, jac[0:3, i], atol=1e-5)
        assert np.allclose(dw, jac[3:6, i], atol=1e-5)


def test_hand_subtree_matches_standalone_submodel(humanoid, hand_model, rng):
    """The humanoid's hand branches must agree geometrically with the bundled
    hand submodel: fingertips in the palm frame coincide for any hand pose."""
    tip_names = ["thumb_tip", "index_tip", "middle_tip", "ring_tip", "pinky_tip"]
    for side in ("l", "r"):
        sub = humanoid.subtree(f"{side}_hand", strip_prefix=f"{side}_")
        assert sub.n_joints == 6
        for _ in range(5):
            q_hand = rng.uniform(hand_model.lower, hand_model.upper)
            q_full = np.zeros(humanoid.n_joints)
            for name, value in zip(hand_model.joint_names, q_hand):
                q_full[humanoid.joint_index[f"{side}_{name}"]] = value
            fk_full = forward_kinematics(
                humanoid, q_full, [f"{side}_palm"] + [f"{side}_{t}" for t in tip_names]
            )
            palm = fk_full[f"{side}_palm"]
            fk_sub = forward_kinematics(hand_model, q_hand, tip_names)
            for t in tip_names:
                in_palm = palm.inverse() @ fk_full[f"{side}_{t}"]
                assert np.allclose(
                    in_palm.translation, fk_sub[t].translation, atol=1e-9
                ), f"{side} {t}"


def test_subtree_unknown_link(humanoid):
    with pytest.raises(ModelError):
        humanoid.subtree("no_such_link")
