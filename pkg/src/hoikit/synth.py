"""Seeded generator of coupled human-object scenes with known ground truth.

Three motion templates drive the right arm:

carry  hand reaches the resting object, carries it, lets go, arm returns
place  object starts in the hand, is set down, hand retracts
swing  arm swings sinusoidally with the object held throughout

Each phase blends between key poses with a cosine ease, so joint angles and
the coupled object path have zero velocity at every phase boundary (C1).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .errors import InvalidConfig
from .geom import BBox2D, CameraPose, look_at, project_bbox_area
from .hexplane import PartPartition
from .skeleton import AvatarRig, Skeleton, default_skeleton, forward_kinematics, lbs_deform
from .spline import TimeGrid

TEMPLATES = ("carry", "place", "swing")
GRIP_OFFSET = np.array([0.0, -0.10, 0.06])
BOX_HALF = 0.04
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SceneConfig:
    template: str = "carry"
    n_frames: int = 33
    key_stride: int = 4
    n_points: int = 60
    noise: float = 0.01
    alpha: float = 1.0
    image_width: int = 96
    image_height: int = 72
    object_scale: float = 2.5     # true size / canonical size for the scale-estimation step
    far_object: bool = False      # park the object beyond the interaction threshold

    def validate(self):
        if self.template not in TEMPLATES:
            raise InvalidConfig(f"template must be one of {TEMPLATES}")
        if self.n_frames < 2 * self.key_stride or (self.n_frames - 1) % self.key_stride:
            raise InvalidConfig("n_frames must be >= 2*key_stride and n_frames-1 a multiple of key_stride")
        if self.noise < 0 or self.alpha <= 0 or self.object_scale <= 0:
            raise InvalidConfig("noise must be >= 0; alpha and object_scale positive")
        if self.n_points < 16:
            raise InvalidConfig("need at least 16 avatar points (one per part)")
        if min(self.image_width, self.image_height) < 11:
            raise InvalidConfig("images must be at least 11 pixels on each side")


@dataclass
class SyntheticScene:
    config: SceneConfig
    seed: int
    grid: TimeGrid
    skeleton: Skeleton
    rig: AvatarRig
    partition: PartPartition
    hands: dict                 # {"left": idx, "right": idx} avatar point indices
    gt_theta: np.ndarray        # (T, J, 3)
    gt_object_pos: np.ndarray   # (T, 3) object centre
    gt_object_rot: np.ndarray   # (T, 4) wxyz
    object_local: np.ndarray    # (N, 3) object points about its centre
    object_color: np.ndarray    # (N, 3)
    cameras: list
    contacts: list
    obs_human: np.ndarray       # (T, V, 3)
    obs_object: np.ndarray      # (T, N, 3)
    masks: list                 # per-frame BBox2D of the true object projection
    canonical_object: np.ndarray
    d_th: float

    @property
    def n_frames(self) -> int:
        return self.grid.n_frames

    def gt_human_points(self) -> np.ndarray:
        return lbs_deform(self.rig, self.skeleton, self.gt_theta).data

    def gt_object_points(self) -> np.ndarray:
        return self.gt_object_pos[:, None, :] + self.object_local[None]

    def hand_joint_positions(self, side: str = "right") -> np.ndarray:
        _, t = forward_kinematics(self.skeleton, self.gt_theta)
        return self.rig.alpha * t.data[:, self.skeleton.index(f"{side}_hand")]

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "config": asdict(self.config),
            "seed": self.seed,
            "grid": self.grid.to_json(),
            "skeleton": self.skeleton.to_json(),
            "rig": self.rig.to_json(),
            "partition": self.partition.to_json(),
            "hands": {k: list(map(int, v)) for k, v in self.hands.items()},
            "gt_poses": self.gt_theta.tolist(),
            "gt_object": {"positions": self.gt_object_pos.tolist(),
                          "rotations_wxyz": self.gt_object_rot.tolist(),
                          "local_points": self.object_local.tolist(),
                          "colors": self.object_color.tolist()},
            "cameras": [c.to_json() for c in self.cameras],
            "contacts": list(map(int, self.contacts)),
            "observations": {"noise": self.config.noise, "human": self.obs_human.tolist(),
                             "object": self.obs_object.tolist()},
            "object_init": {"canonical_points": self.canonical_object.tolist(),
                            "masks": [m.to_json() for m in self.masks]},
            "d_th": self.d_th,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SyntheticScene":
        if d.get("schema") != SCHEMA_VERSION:
            raise InvalidConfig(f"unsupported scene schema {d.get('schema')!r}")
        g = d["gt_object"]
        return cls(
            config=SceneConfig(**d["config"]), seed=int(d["seed"]),
            grid=TimeGrid(**d["grid"]), skeleton=Skeleton.from_json(d["skeleton"]),
            rig=AvatarRig.from_json(d["rig"]), partition=PartPartition.from_json(d["partition"]),
            hands={k: np.asarray(v, dtype=np.int64) for k, v in d["hands"].items()},
            gt_theta=np.asarray(d["gt_poses"], dtype=np.float64),
            gt_object_pos=np.asarray(g["positions"], dtype=np.float64),
            gt_object_rot=np.asarray(g["rotations_wxyz"], dtype=np.float64),
            object_local=np.asarray(g["local_points"], dtype=np.float64),
            object_color=np.asarray(g["colors"], dtype=np.float64),
            cameras=[CameraPose.from_json(c) for c in d["cameras"]],
            contacts=[int(c) for c in d["contacts"]],
            obs_human=np.asarray(d["observations"]["human"], dtype=np.float64),
            obs_object=np.asarray(d["observations"]["object"], dtype=np.float64),
            masks=[BBox2D.from_json(m) for m in d["object_init"]["masks"]],
            canonical_object=np.asarray(d["object_init"]["canonical_points"], dtype=np.float64),
            d_th=float(d["d_th"]),
        )


def save_scene(scene: SyntheticScene, path):
    with open(path, "w") as fh:
        json.dump(scene.to_json(), fh, sort_keys=True)
        fh.write("\n")


def load_scene(path) -> SyntheticScene:
    with open(path) as fh:
        return SyntheticScene.from_json(json.load(fh))


def box_points(half: float = BOX_HALF) -> np.ndarray:
    """8 corners and 6 face centres of an axis-aligned cube."""
    corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float)
    faces = np.vstack([np.eye(3), -np.eye(3)])
    return half * np.vstack([corners, faces])


# ---- avatar construction ----------------------------------------------------------

_HAND_LENGTH = 0.08
_BONE_RADIUS = 0.03


def _allocate(n_points):
    """Points per (joint, n_parts) group; 16 parts in total."""
    share = {0: 16, 1: 8, 2: 8, 3: 6, 4: 8, 5: 8, 6: 6}
    counts = {j: max(2 if j else 4, int(round(s * n_points / 60))) for j, s in share.items()}
    counts[0] += n_points - sum(counts.values())
    if counts[0] < 4:
        raise InvalidConfig("too few avatar points for the part layout")
    return counts


def build_avatar(skel: Skeleton, n_points: int, rng: np.random.Generator):
    """Canonical points, skinning weights, 16-part partition and hand indices."""
    rest = skel.rest_positions()
    J = skel.n_joints
    counts = _allocate(n_points)
    P, W, owner, frac = [], [], [], []
    for j in range(J):
        n = counts[j]
        if j == 0:
            lo = np.array([-0.15, rest[0, 1], -0.08])
            hi = np.array([0.15, rest[0, 1] + 0.45, 0.08])
            pts = lo + rng.uniform(size=(n, 3)) * (hi - lo)
            s = np.zeros(n)
        else:
            kids = [c for c in range(J) if skel.parent[c] == j]
            start = rest[j]
            if kids:
                end = rest[kids[0]]
            else:
                d = rest[j] - rest[skel.parent[j]]
                end = start + _HAND_LENGTH * d / np.linalg.norm(d)
            axis = (end - start) / np.linalg.norm(end - start)
            perp1 = np.cross(axis, [0.0, 0.0, 1.0])
            if np.linalg.norm(perp1) < 1e-6:
                perp1 = np.cross(axis, [1.0, 0.0, 0.0])
            perp1 /= np.linalg.norm(perp1)
            perp2 = np.cross(axis, perp1)
            s = (np.arange(n) + 0.5) / n
            ang = rng.uniform(0, 2 * np.pi, size=n)
            rad = _BONE_RADIUS * np.sqrt(rng.uniform(0.3, 1.0, size=n))
            pts = (start + s[:, None] * (end - start)
                   + rad[:, None] * (np.cos(ang)[:, None] * perp1 + np.sin(ang)[:, None] * perp2))
        for i in range(n):
            w = np.zeros(J)
            if j > 0 and s[i] < 0.3:
                blend = 0.5 * (1.0 - s[i] / 0.3)
                w[skel.parent[j]] = blend
                w[j] = 1.0 - blend
            else:
                w[j] = 1.0
            P.append(pts[i])
            W.append(w)
            owner.append(j)
            frac.append(s[i])
    P, W, owner, frac = np.array(P), np.array(W), np.array(owner), np.array(frac)

    parts = []
    torso = np.flatnonzero(owner == 0)
    x_side = P[torso, 0] >= 0
    y_high = P[torso, 1] >= np.median(P[torso, 1])
    for xs in (False, True):
        for yh in (False, True):
            sel = torso[(x_side == xs) & (y_high == yh)]
            parts.append(sel)
    # make sure no torso quadrant is empty when points are few
    parts = [p for p in parts if len(p)]
    while len(parts) < 4:
        big = max(range(len(parts)), key=lambda i: len(parts[i]))
        p = parts.pop(big)
        parts[big:big] = [p[: len(p) // 2], p[len(p) // 2:]]
    for j in range(1, J):
        idx = np.flatnonzero(owner == j)
        idx = idx[np.argsort(frac[idx], kind="stable")]
        h = len(idx) // 2
        parts.extend([idx[:h], idx[h:]])
    hands = {"left": np.flatnonzero(owner == skel.index("left_hand")),
             "right": np.flatnonzero(owner == skel.index("right_hand"))}
    return P, W, PartPartition(parts), hands, owner


# ---- motion ------------------------------------------------------------------------

def _ease(s):
    s = np.clip(s, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(np.pi * s))


def _phase_blend(t, knots, poses):
    """Piecewise cosine-eased blend between key poses at frame knots."""
    for (a, b), p0, p1 in zip(zip(knots[:-1], knots[1:]), poses[:-1], poses[1:]):
        if t <= b:
            w = _ease((t - a) / (b - a))
            return (1.0 - w) * p0 + w * p1
    return poses[-1]


def _key_poses(skel: Skeleton, rng: np.random.Generator):
    J = skel.n_joints
    jit = lambda: rng.uniform(0.85, 1.15)
    ls, le, rs, re, rh = (skel.index(n) for n in
                          ("left_shoulder", "left_elbow", "right_shoulder", "right_elbow", "right_hand"))

    def pose(r_shoulder, r_elbow, r_hand=(0.0, 0.0, 0.0), yaw=0.0, l_shoulder=-1.25):
        th = np.zeros((J, 3))
        th[0] = [0.0, yaw, 0.0]
        th[ls] = [0.0, 0.0, l_shoulder]
        th[le] = [0.0, 0.15, 0.0]
        th[rs] = r_shoulder
        th[re] = r_elbow
        th[rh] = r_hand
        return th

    rest = pose([0.0, 0.0, 1.25], [0.0, 0.0, 0.0])
    reach = pose([0.0, -0.5 * jit(), 1.0 * jit()], [0.0, -0.7 * jit(), 0.0], [0.2 * jit(), 0.0, 0.0], yaw=0.1 * jit())
    lift = pose([0.0, -0.9 * jit(), 0.7 * jit()], [0.0, -0.9 * jit(), 0.1], [0.0, 0.2 * jit(), 0.0],
                yaw=-0.15 * jit(), l_shoulder=-1.1 * jit())
    low = pose([0.0, -0.3 * jit(), 1.1 * jit()], [0.0, -0.5 * jit(), 0.0], [0.1, 0.0, 0.0], yaw=0.05)
    return rest, reach, lift, low


def _motion(cfg: SceneConfig, skel: Skeleton, rng):
    """Per-frame poses, the frame range where the object is held, and contacts."""
    T = cfg.n_frames
    last = T - 1
    rest, reach, lift, low = _key_poses(skel, rng)
    if cfg.template == "carry":
        c0, c1 = round(0.25 * last), round(0.75 * last)
        knots, poses = [0, c0, c1, last], [rest, reach, lift, rest]
        held = (c0, c1)
    elif cfg.template == "place":
        c1 = round(0.5 * last)
        knots, poses = [0, c1, last], [lift, low, rest]
        held = (0, c1)
    else:
        amp = rng.uniform(0.3, 0.45)
        base = reach
        ax = np.zeros_like(base)
        ax[skel.index("right_shoulder")] = [0.0, -1.0, 0.4]
        ax[skel.index("right_elbow")] = [0.0, -0.5, 0.0]
        ax[0] = [0.0, 0.3, 0.0]
        theta = np.stack([base + amp * math.sin(2 * math.pi * t / last) * ax for t in range(T)])
        return theta, (0, last), list(range(T))
    theta = np.stack([_phase_blend(t, knots, poses) for t in range(T)])
    return theta, held, list(range(held[0], held[1] + 1))


def generate_scene(config: SceneConfig = SceneConfig(), seed: int = 0) -> SyntheticScene:
    config.validate()
    rng = np.random.default_rng(seed)
    skel = default_skeleton()
    grid = TimeGrid.from_stride(config.n_frames, config.key_stride)
    P, W, partition, hands, owner = build_avatar(skel, config.n_points, np.random.default_rng(seed + 7919))
    palette = np.array([[0.9, 0.75, 0.6], [0.2, 0.4, 0.8], [0.25, 0.5, 0.85], [0.95, 0.8, 0.65],
                        [0.2, 0.4, 0.8], [0.25, 0.5, 0.85], [0.95, 0.8, 0.65]])
    rig = AvatarRig(P, W, alpha=config.alpha, color=palette[owner])

    theta, held, contacts = _motion(config, skel, rng)
    _, joint_t = forward_kinematics(skel, theta)
    hand = config.alpha * joint_t.data[:, skel.index("right_hand")]
    T = config.n_frames
    frames = np.arange(T)
    held_frame = np.clip(frames, held[0], held[1])
    obj = hand[held_frame] + GRIP_OFFSET
    if config.far_object:
        obj = np.broadcast_to(hand[0] + np.array([3.0, 0.0, 0.0]), obj.shape).copy()
        contacts = []
    rot = np.tile([1.0, 0.0, 0.0, 0.0], (T, 1))
    local = box_points()
    obj_color = np.tile([0.85, 0.2, 0.15], (len(local), 1))

    R, t = look_at([0.0, 1.2, 3.0], [0.0, 1.0, 0.0])
    fx = 0.95 * config.image_width
    cams, masks = [], []
    for f in range(T):
        v = R @ obj[f] + t
        cam = CameraPose(R, t, fx, fx, config.image_width / 2.0, config.image_height / 2.0, v)
        cams.append(cam)
        box, _ = project_bbox_area(obj[f] + local, cam)
        masks.append(box)

    human_gt = lbs_deform(rig, skel, theta).data
    obj_pts = obj[:, None, :] + local[None]
    noise = config.noise
    obs_h = human_gt + (rng.normal(0.0, noise, human_gt.shape) if noise > 0 else 0.0)
    obs_o = obj_pts + (rng.normal(0.0, noise, obj_pts.shape) if noise > 0 else 0.0)

    return SyntheticScene(
        config=config, seed=seed, grid=grid, skeleton=skel, rig=rig, partition=partition,
        hands=hands, gt_theta=theta, gt_object_pos=obj, gt_object_rot=rot, object_local=local,
        object_color=obj_color, cameras=cams, contacts=contacts, obs_human=obs_h, obs_object=obs_o,
        masks=masks, canonical_object=local / config.object_scale,
        d_th=skel.chain_length("right_hand") * config.alpha,
    )
