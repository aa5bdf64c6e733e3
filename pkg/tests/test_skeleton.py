import json

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from hoikit import nn
from hoikit.errors import DimensionMismatch, InvalidConfig, MalformedSkeleton
from hoikit.skeleton import (AvatarRig, PoseParams, Skeleton, attribute_width, avatar_attributes,
                             axis_angle_matrix, default_skeleton, forward_kinematics, lbs_deform)


def homogeneous(R, t):
    T = np.eye(4)
    T[:3, :3], T[:3, 3] = R, t
    return T


def fk_oracle(skel, theta):
    """World transforms by explicit 4x4 chaining."""
    world = [None] * skel.n_joints
    for j in range(skel.n_joints):          # default skeleton lists parents first
        local = homogeneous(Rotation.from_rotvec(theta[j]).as_matrix(), skel.rest_offsets[j])
        p = skel.parent[j]
        world[j] = local if p < 0 else world[p] @ local
    return world


def lbs_oracle(rig, skel, theta):
    world = fk_oracle(skel, theta)
    rest = skel.rest_positions()
    out = np.zeros_like(rig.P_c)
    for i, x in enumerate(rig.P_c + rig.dP):
        acc = np.zeros(3)
        for j in range(skel.n_joints):
            inv_rest = homogeneous(np.eye(3), -rest[j])
            acc += rig.W[i, j] * (world[j] @ inv_rest @ np.r_[x, 1.0])[:3]
        out[i] = rig.alpha * acc
    return out


def random_rig(rng, skel, n=25, alpha=1.3):
    W = rng.uniform(0, 1, (n, skel.n_joints)) ** 3
    return AvatarRig(rng.normal(0, 0.5, (n, 3)) + [0, 1, 0], W / W.sum(1, keepdims=True), alpha,
                     dP=rng.normal(0, 0.01, (n, 3)))


def test_default_skeleton_shape():
    s = default_skeleton()
    assert s.n_joints == 7 and s.partition_joints == [1, 2, 4, 5, 3, 6]
    assert np.allclose(s.rest_positions()[6], [-0.73, 1.35, 0.0])
    assert abs(s.chain_length("right_hand") - (np.hypot(0.2, 0.45) + 0.53)) < 1e-12


def test_malformed_skeletons():
    with pytest.raises(MalformedSkeleton):
        Skeleton(["a", "b"], [-1, 1], np.zeros((2, 3)))
    with pytest.raises(MalformedSkeleton):
        Skeleton(["a", "b", "c"], [-1, 2, 1], np.zeros((3, 3)))
    with pytest.raises(MalformedSkeleton):
        Skeleton(["a", "b"], [-1, 0], np.zeros((2, 3)), partition={"body": []})
    with pytest.raises(MalformedSkeleton):
        Skeleton(["a"], [-1], np.zeros((2, 3)))


def test_rodrigues_matches_scipy(rng):
    v = rng.normal(size=(10, 3))
    R = axis_angle_matrix(v).data
    assert np.abs(R - Rotation.from_rotvec(v).as_matrix()).max() < 1e-12
    assert np.array_equal(axis_angle_matrix(np.zeros(3)).data, np.eye(3))


def test_fk_matches_homogeneous_chain(rng):
    skel = default_skeleton()
    theta = rng.normal(0, 0.8, (skel.n_joints, 3))
    R, t = forward_kinematics(skel, theta)
    for j, T in enumerate(fk_oracle(skel, theta)):
        assert np.abs(R.data[j] - T[:3, :3]).max() < 1e-12
        assert np.abs(t.data[j] - T[:3, 3]).max() < 1e-12


def test_rest_pose_is_identity(rng):
    skel = default_skeleton()
    rig = random_rig(rng, skel, alpha=1.0)
    rig.dP[:] = 0
    out = lbs_deform(rig, skel, np.zeros((skel.n_joints, 3))).data
    assert np.abs(out - rig.P_c).max() < 1e-14


def test_lbs_matches_oracle_batched(rng):
    skel = default_skeleton()
    rig = random_rig(rng, skel)
    thetas = rng.normal(0, 0.7, (4, skel.n_joints, 3))
    out = lbs_deform(rig, skel, thetas).data
    assert out.shape == (4, rig.n_points, 3)
    for k in range(4):
        assert np.abs(out[k] - lbs_oracle(rig, skel, thetas[k])).max() < 1e-12


def test_lbs_gradients(rng):
    skel = default_skeleton()
    rig = random_rig(rng, skel, n=8)
    theta = nn.param(rng.normal(0, 0.5, (skel.n_joints, 3)))
    alpha = nn.param(np.array(0.9))
    dP = nn.param(np.zeros((8, 3)))
    tgt = rng.normal(size=(8, 3))
    err = nn.grad_check(lambda: nn.tsum((lbs_deform(rig, skel, theta, alpha, dP) - tgt) ** 2),
                        [theta, alpha, dP])
    assert err < 1e-6


def test_rig_validation(rng):
    with pytest.raises(InvalidConfig):
        AvatarRig(np.zeros((2, 3)), [[0.5, 0.6], [1.0, 0.0]])
    with pytest.raises(InvalidConfig):
        AvatarRig(np.zeros((1, 3)), [[1.0]], alpha=0.0)
    with pytest.raises(DimensionMismatch):
        AvatarRig(np.zeros((2, 3)), [[1.0]])
    rig = AvatarRig(np.zeros((2, 3)), [[1.0], [1.0]])
    with pytest.raises(DimensionMismatch):
        lbs_deform(rig, default_skeleton(), np.zeros((7, 3)))


def test_pose_params_view(rng):
    skel = default_skeleton()
    th = rng.normal(size=(7, 3))
    assert np.array_equal(PoseParams(th, skel).view("rhand"), th[[6]])


def test_avatar_attributes(rng):
    J = 7
    head = nn.Mlp.init([5, 8, attribute_width(J)], rng)
    a = avatar_attributes(head, rng.normal(size=(6, 5)), J)
    assert np.allclose(np.linalg.norm(a.rotation, axis=-1), 1)
    assert np.allclose(a.weights.sum(-1), 1) and np.all(a.scale > 0)
    assert np.all((a.opacity > 0) & (a.opacity < 1)) and a.color.shape == (6, 3)
    with pytest.raises(DimensionMismatch):
        avatar_attributes(nn.Mlp.init([5, 3], rng), np.zeros((1, 5)), J)


def test_json_round_trip(rng):
    skel = default_skeleton()
    s2 = Skeleton.from_json(json.loads(json.dumps(skel.to_json())))
    assert s2.parent == skel.parent and s2.partition == skel.partition
    rig = random_rig(rng, skel)
    r2 = AvatarRig.from_json(json.loads(json.dumps(rig.to_json())))
    assert np.array_equal(r2.W, rig.W) and r2.alpha == rig.alpha
