"""Articulated avatar: joint tree, forward kinematics, linear blend skinning and
the canonical attribute head.

All deformation functions accept plain arrays or :class:`nn.Tensor` inputs and
record on the active tape, so pose fitting and the residual pipeline share one
code path with evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import DimensionMismatch, InvalidConfig, MalformedSkeleton

# generators of so(3): hat(v) = sum_c v_c * _HAT[..., c]
_HAT = np.zeros((3, 3, 3))
_HAT[2, 1, 0], _HAT[1, 2, 0] = 1.0, -1.0
_HAT[0, 2, 1], _HAT[2, 0, 1] = 1.0, -1.0
_HAT[1, 0, 2], _HAT[0, 1, 2] = 1.0, -1.0


@dataclass
class Skeleton:
    names: list
    parent: list
    rest_offsets: np.ndarray
    partition: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rest_offsets = np.asarray(self.rest_offsets, dtype=np.float64)
        self.parent = [int(p) for p in self.parent]
        J = len(self.parent)
        if len(self.names) != J or self.rest_offsets.shape != (J, 3):
            raise MalformedSkeleton("names, parents and offsets disagree in length")
        self.order = _topological_order(self.parent)
        if not self.partition:
            self.partition = {"body": list(range(1, J))}
        self.partition = {k: [int(i) for i in v] for k, v in self.partition.items()}
        seen = sorted(i for v in self.partition.values() for i in v)
        if seen != list(range(1, J)):
            raise MalformedSkeleton("pose partition must cover every non-root joint exactly once")

    @property
    def n_joints(self) -> int:
        return len(self.parent)

    def index(self, name: str) -> int:
        return self.names.index(name)

    @property
    def partition_joints(self) -> list[int]:
        """Joints receiving pose residuals, in partition order (body, lhand, rhand, ...)."""
        return [j for key in self.partition for j in self.partition[key]]

    def rest_positions(self) -> np.ndarray:
        pos = np.zeros((self.n_joints, 3))
        for j in self.order:
            p = self.parent[j]
            pos[j] = self.rest_offsets[j] + (pos[p] if p >= 0 else 0.0)
        return pos

    def chain_length(self, joint: str) -> float:
        """Summed bone length from the root to ``joint``."""
        j, total = self.index(joint), 0.0
        while self.parent[j] >= 0:
            total += float(np.linalg.norm(self.rest_offsets[j]))
            j = self.parent[j]
        return total

    def to_json(self):
        return {"names": list(self.names), "parent": list(self.parent),
                "rest_offsets": self.rest_offsets.tolist(), "partition": self.partition}

    @classmethod
    def from_json(cls, d):
        return cls(list(d["names"]), list(d["parent"]), d["rest_offsets"], dict(d.get("partition", {})))


def _topological_order(parent):
    J = len(parent)
    if J == 0 or parent[0] != -1:
        raise MalformedSkeleton("joint 0 must be the root (parent -1)")
    children = {j: [] for j in range(J)}
    for j in range(1, J):
        p = parent[j]
        if not 0 <= p < J or p == j:
            raise MalformedSkeleton(f"joint {j} has invalid parent {p}")
        children[p].append(j)
    order, stack = [], [0]
    while stack:
        j = stack.pop()
        order.append(j)
        stack.extend(reversed(children[j]))
    if len(order) != J:
        raise MalformedSkeleton("parent array contains a cycle or unreachable joints")
    return order


def default_skeleton() -> Skeleton:
    """Pelvis plus a two-segment arm and a hand on each side (J = 7)."""
    names = ["pelvis", "left_shoulder", "left_elbow", "left_hand",
             "right_shoulder", "right_elbow", "right_hand"]
    parent = [-1, 0, 1, 2, 0, 4, 5]
    offsets = [[0.0, 0.9, 0.0],
               [0.2, 0.45, 0.0], [0.28, 0.0, 0.0], [0.25, 0.0, 0.0],
               [-0.2, 0.45, 0.0], [-0.28, 0.0, 0.0], [-0.25, 0.0, 0.0]]
    partition = {"body": [1, 2, 4, 5], "lhand": [3], "rhand": [6]}
    return Skeleton(names, parent, offsets, partition)


@dataclass
class PoseParams:
    """Axis-angle per joint (J, 3) with named views over the skeleton partition."""

    theta: np.ndarray
    skeleton: Skeleton

    def view(self, key: str) -> np.ndarray:
        return self.theta[self.skeleton.partition[key]]


# ---- kinematics -----------------------------------------------------------------

def axis_angle_matrix(v):
    """Taped Rodrigues map for (..., 3) axis-angle input.

    Written on the unnormalized hat matrix so v = 0 gives exactly I with a
    well-defined gradient.
    """
    v = nn.as_tensor(v)
    th = nn.sqrt(nn.tsum(v * v, axis=-1) + 1e-30)
    a = nn.sinc(th)
    hb = nn.sinc(th * 0.5)
    b = hb * hb * 0.5
    lead = v.shape[:-1]
    K = nn.tsum(nn.reshape(v, lead + (1, 1, 3)) * _HAT, axis=-1)
    K2 = nn.matmul(K, K)
    a = nn.reshape(a, lead + (1, 1))
    b = nn.reshape(b, lead + (1, 1))
    return np.eye(3) + a * K + b * K2


def forward_kinematics(skel: Skeleton, theta):
    """World-from-joint rotations (..., J, 3, 3) and translations (..., J, 3).

    Joint j composes parent * Translate(rest_offset_j) * Rot(theta_j).
    """
    theta = nn.as_tensor(theta)
    J = skel.n_joints
    if theta.shape[-2:] != (J, 3):
        raise DimensionMismatch(f"pose must be (..., {J}, 3), got {theta.shape}")
    local = axis_angle_matrix(theta)
    Rs, ts = [None] * J, [None] * J
    for j in skel.order:
        Rl = local[..., j, :, :]
        p = skel.parent[j]
        off = skel.rest_offsets[j]
        if p < 0:
            Rs[j] = Rl
            ts[j] = nn.as_tensor(np.broadcast_to(off, theta.shape[:-2] + (3,)).copy())
        else:
            Rs[j] = nn.matmul(Rs[p], Rl)
            ts[j] = ts[p] + nn.tsum(Rs[p] * off, axis=-1)
    return nn.stack(Rs, axis=-3), nn.stack(ts, axis=-2)


@dataclass
class AvatarRig:
    P_c: np.ndarray                      # (V, 3) canonical points
    W: np.ndarray                        # (V, J) skinning weights
    alpha: float = 1.0
    dP: np.ndarray | None = None         # (V, 3) canonical offsets
    color: np.ndarray | None = None      # (V, 3)
    opacity: np.ndarray | None = None    # (V,)
    rotation: np.ndarray | None = None   # (V, 4)
    scale: np.ndarray | None = None      # (V, 3)

    def __post_init__(self):
        self.P_c = np.asarray(self.P_c, dtype=np.float64)
        self.W = np.asarray(self.W, dtype=np.float64)
        V = len(self.P_c)
        if self.W.shape[0] != V:
            raise DimensionMismatch("one skinning-weight row per canonical point")
        if np.any(self.W < 0) or not np.allclose(self.W.sum(axis=1), 1.0, atol=1e-9, rtol=0):
            raise InvalidConfig("skinning weights must be non-negative rows summing to 1")
        if not self.alpha > 0:
            raise InvalidConfig("alpha must be positive")
        defaults = {"dP": np.zeros((V, 3)), "color": np.full((V, 3), 0.7),
                    "opacity": np.ones(V), "rotation": np.tile([1.0, 0, 0, 0], (V, 1)),
                    "scale": np.full((V, 3), 0.02)}
        for k, d in defaults.items():
            val = getattr(self, k)
            setattr(self, k, d if val is None else np.asarray(val, dtype=np.float64))

    @property
    def n_points(self) -> int:
        return len(self.P_c)

    def to_json(self):
        return {"P_c": self.P_c.tolist(), "W": self.W.tolist(), "alpha": float(self.alpha),
                "dP": self.dP.tolist(), "color": self.color.tolist(),
                "opacity": self.opacity.tolist(), "rotation": self.rotation.tolist(),
                "scale": self.scale.tolist()}

    @classmethod
    def from_json(cls, d):
        return cls(d["P_c"], d["W"], d["alpha"], d.get("dP"), d.get("color"),
                   d.get("opacity"), d.get("rotation"), d.get("scale"))


def lbs_deform(rig: AvatarRig, skel: Skeleton, theta, alpha=None, dP=None):
    """alpha * sum_j W_ij (T_j T_rest_j^-1 (P_c + dP)) for pose(s) ``theta``.

    ``alpha`` and ``dP`` default to the rig's values; pass tensors to learn them.
    Returns a tensor of shape (..., V, 3).
    """
    J = skel.n_joints
    if rig.W.shape[1] != J:
        raise DimensionMismatch(f"rig has {rig.W.shape[1]} weight columns, skeleton has {J} joints")
    alpha = rig.alpha if alpha is None else alpha
    dP = rig.dP if dP is None else dP
    R, t = forward_kinematics(skel, theta)
    x = nn.as_tensor(dP) + rig.P_c
    rest = skel.rest_positions()
    local = nn.reshape(x, (1,) + x.shape) - rest[:, None, :]            # (J, V, 3)
    y = nn.matmul(local, nn.swapaxes(R, -1, -2))                        # (..., J, V, 3)
    y = y + nn.reshape(t, t.shape[:-1] + (1, 3))
    blended = nn.tsum(y * rig.W.T[:, :, None], axis=-3)
    return blended * alpha


@dataclass
class AvatarAttributes:
    color: np.ndarray
    opacity: np.ndarray
    offset: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    weights: np.ndarray


def attribute_width(n_joints: int) -> int:
    return 3 + 1 + 3 + 4 + 3 + n_joints


def avatar_attributes(head: nn.Mlp, features, n_joints: int) -> AvatarAttributes:
    """Split a head's output into squashed color/opacity, offsets, unit
    rotations, positive scales and softmax skinning weights."""
    if head.widths[-1] != attribute_width(n_joints):
        raise DimensionMismatch(f"head must output {attribute_width(n_joints)} values")
    raw = head(features)
    c = nn.sigmoid(raw[..., 0:3])
    o = nn.sigmoid(raw[..., 3])
    dP = raw[..., 4:7]
    q = raw[..., 7:11] + np.array([1.0, 0.0, 0.0, 0.0])
    q = q / nn.sqrt(nn.tsum(q * q, axis=-1, keepdims=True))
    s = nn.exp(raw[..., 11:14])
    w = nn.masked_softmax(raw[..., 14:], True, axis=-1)
    return AvatarAttributes(c.data, o.data, dP.data, q.data, s.data, w.data)
