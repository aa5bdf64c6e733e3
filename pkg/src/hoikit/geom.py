"""Rotations, pinhole cameras, 2D boxes and object scale/world alignment."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateProjection, EmptyPointSet, InvalidConfig, PointBehindCamera

SLERP_LINEAR_THRESHOLD = 1.0 - 1e-6


# ---- quaternion arrays (w, x, y, z) -------------------------------------------

def quat_canonical(q):
    """Normalize quaternions along the last axis and flip so that w >= 0."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    return np.where(q[..., :1] < 0, -q, q)


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle
    return quat_canonical(np.concatenate([[math.cos(h)], math.sin(h) * axis]))


def quat_to_matrix(q):
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1 - 2 * (y * y + z * z)
    out[..., 0, 1] = 2 * (x * y - w * z)
    out[..., 0, 2] = 2 * (x * z + w * y)
    out[..., 1, 0] = 2 * (x * y + w * z)
    out[..., 1, 1] = 1 - 2 * (x * x + z * z)
    out[..., 1, 2] = 2 * (y * z - w * x)
    out[..., 2, 0] = 2 * (x * z - w * y)
    out[..., 2, 1] = 2 * (y * z + w * x)
    out[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def matrix_to_quat(m):
    """Single 3x3 rotation matrix to a canonical quaternion (Shepperd's method)."""
    m = np.asarray(m, dtype=np.float64)
    tr = np.trace(m)
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_canonical(q)


def axis_angle_to_matrix(v):
    """Rodrigues map for axis-angle vectors of shape (..., 3)."""
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v, axis=-1)
    small = theta < 1e-12
    safe = np.where(small, 1.0, theta)
    k = v / safe[..., None]
    kx, ky, kz = k[..., 0], k[..., 1], k[..., 2]
    K = np.zeros(v.shape[:-1] + (3, 3))
    K[..., 0, 1], K[..., 0, 2] = -kz, ky
    K[..., 1, 0], K[..., 1, 2] = kz, -kx
    K[..., 2, 0], K[..., 2, 1] = -ky, kx
    s = np.sin(theta)[..., None, None]
    c = (1.0 - np.cos(theta))[..., None, None]
    R = np.eye(3) + s * K + c * (K @ K)
    return np.where(small[..., None, None], np.eye(3), R)


def rot_x(angle):
    return axis_angle_to_matrix([angle, 0.0, 0.0])


def rot_y(angle):
    return axis_angle_to_matrix([0.0, angle, 0.0])


def rot_z(angle):
    return axis_angle_to_matrix([0.0, 0.0, angle])


def slerp_array(q0, q1, u):
    """Vectorized slerp over leading axes; ``u`` broadcasts against them."""
    q0 = np.asarray(q0, dtype=np.float64)
    q1_in = np.asarray(q1, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)[..., None]
    dot = np.sum(q0 * q1_in, axis=-1, keepdims=True)
    q1 = np.where(dot < 0, -q1_in, q1_in)
    dot = np.abs(dot)
    linear = dot > SLERP_LINEAR_THRESHOLD
    omega = np.arccos(np.clip(dot, -1.0, 1.0))
    so = np.where(linear, 1.0, np.sin(omega))
    w0 = np.where(linear, 1.0 - u, np.sin((1.0 - u) * omega) / so)
    w1 = np.where(linear, u, np.sin(u * omega) / so)
    out = quat_canonical(w0 * q0 + w1 * q1)
    # stored keyframe quaternions are already canonical: return them untouched
    out = np.where(u == 0, q0, out)
    return np.where(u == 1, q1_in, out)


@dataclass(frozen=True)
class UnitRotation:
    """Unit quaternion kept on the w >= 0 half of the double cover."""

    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        q = quat_canonical([self.w, self.x, self.y, self.z])
        for name, val in zip("wxyz", q):
            object.__setattr__(self, name, float(val))

    @classmethod
    def identity(cls):
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, q):
        return cls(*np.asarray(q, dtype=np.float64).tolist())

    @classmethod
    def from_axis_angle(cls, axis, angle):
        return cls.from_array(quat_from_axis_angle(axis, angle))

    @classmethod
    def from_matrix(cls, m):
        return cls.from_array(matrix_to_quat(m))

    def as_array(self):
        return np.array([self.w, self.x, self.y, self.z])

    def as_matrix(self):
        return quat_to_matrix(self.as_array())

    def norm(self):
        return math.sqrt(self.w ** 2 + self.x ** 2 + self.y ** 2 + self.z ** 2)


def slerp(q0: UnitRotation, q1: UnitRotation, u: float) -> UnitRotation:
    """Shortest-arc interpolation; exact endpoints at u = 0 and u = 1."""
    if u == 0:
        return q0
    if u == 1:
        return q1
    return UnitRotation.from_array(slerp_array(q0.as_array(), q1.as_array(), u))


# ---- cameras ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CameraPose:
    """World-to-camera pinhole: x_cam = R @ x_world + t. ``v`` is the per-frame
    camera-space object shift used when placing canonical points."""

    R: np.ndarray
    t: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9, rtol=0) or np.linalg.det(R) <= 0:
            raise InvalidConfig("camera rotation must be orthonormal with det +1")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=np.float64).reshape(3))
        for k in ("fx", "fy", "cx", "cy"):
            object.__setattr__(self, k, float(getattr(self, k)))

    def to_camera(self, p):
        return np.asarray(p, dtype=np.float64) @ self.R.T + self.t

    def project(self, p_world):
        """Pixel coordinates (u, v) and depth for world points of shape (..., 3)."""
        pc = self.to_camera(p_world)
        z = pc[..., 2]
        u = self.fx * pc[..., 0] / z + self.cx
        v = self.fy * pc[..., 1] / z + self.cy
        return u, v, z

    def to_json(self):
        return {"R": self.R.reshape(-1).tolist(), "t": self.t.tolist(),
                "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "v": self.v.tolist()}

    @classmethod
    def from_json(cls, d):
        return cls(np.asarray(d["R"]).reshape(3, 3), d["t"], d["fx"], d["fy"], d["cx"], d["cy"],
                   d.get("v", [0.0, 0.0, 0.0]))


def look_at(eye, target, up=(0.0, 1.0, 0.0)):
    """World-to-camera (R, t) for a camera at ``eye`` looking at ``target`` (+z forward)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(np.asarray(up, dtype=np.float64), fwd)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    return R, -R @ eye


@dataclass(frozen=True)
class BBox2D:
    min_x: float
    min_y: float
    max_x: float
    max_y: float

    def __post_init__(self):
        if self.max_x < self.min_x or self.max_y < self.min_y:
            raise InvalidConfig("bbox max must be >= min")

    @property
    def area(self) -> float:
        return (self.max_x - self.min_x) * (self.max_y - self.min_y)

    def to_json(self):
        return [self.min_x, self.min_y, self.max_x, self.max_y]

    @classmethod
    def from_json(cls, d):
        return cls(*map(float, d))


def project_bbox_area(points, cam: CameraPose) -> tuple[BBox2D, float]:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyPointSet("no points to project")
    u, v, z = cam.project(pts)
    if np.any(z <= 0):
        raise PointBehindCamera("point at or behind the camera plane")
    box = BBox2D(float(u.min()), float(v.min()), float(u.max()), float(v.max()))
    return box, box.area


def to_world(mu_can, S: float, cam: CameraPose):
    """Scale canonical means, shift by ``cam.v`` in camera space, map to world.

    The rotation inverse is its transpose; works on (3,) or (N, 3).
    """
    mu = np.asarray(mu_can, dtype=np.float64)
    return (S * mu + cam.v - cam.t) @ cam.R


def from_world(p_world, S: float, cam: CameraPose):
    """Inverse of :func:`to_world`."""
    return (cam.to_camera(p_world) - cam.v) / S


def estimate_scale(canonical_means, masks, cams) -> float:
    """Mean over frames of sqrt(mask box area / projected canonical box area).

    The unscaled canonical points are placed with :func:`to_world` at S = 1.
    Frames whose projection fails or has zero area are skipped.
    """
    if len(masks) != len(cams) or len(cams) == 0:
        raise InvalidConfig("need one mask per camera and at least one frame")
    ratios = []
    for box, cam in zip(masks, cams):
        try:
            _, a_proj = project_bbox_area(to_world(canonical_means, 1.0, cam), cam)
        except PointBehindCamera:
            continue
        if a_proj <= 0:
            continue
        ratios.append(math.sqrt(box.area / a_proj))
    if not ratios:
        raise DegenerateProjection("no frame gave a usable projected area")
    return float(np.mean(ratios))
