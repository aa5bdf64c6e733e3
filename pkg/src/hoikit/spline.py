"""Keyframe cubic Hermite trajectories for rigid-object Gaussians.

Positions follow the Hermite basis between keyframe control points ``m`` with
free velocity tangents ``tau``; rotations slerp between keyframe quaternions,
opacity interpolates linearly and scale is shared by all frames.

Tangents are expressed per unit of segment-normalized time ``t_r``.
Arrays may carry any number of leading Gaussian axes: ``m`` is (..., K, 3).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DimensionMismatch, InvalidConfig, OutOfRangeTime
from .geom import quat_canonical, slerp_array

DEFAULT_KEY_STRIDE = 4


@dataclass(frozen=True)
class TimeGrid:
    n_frames: int
    n_keys: int

    def __post_init__(self):
        if self.n_keys < 2 or self.n_frames < self.n_keys:
            raise InvalidConfig("need n_keys >= 2 and n_frames >= n_keys")

    @classmethod
    def from_stride(cls, n_frames: int, key_stride: int = DEFAULT_KEY_STRIDE) -> "TimeGrid":
        if key_stride < 1 or (n_frames - 1) % key_stride:
            raise InvalidConfig(f"n_frames - 1 = {n_frames - 1} is not a multiple of key_stride {key_stride}")
        return cls(n_frames, (n_frames - 1) // key_stride + 1)

    @property
    def key_stride(self) -> float:
        return (self.n_frames - 1) / (self.n_keys - 1)

    @property
    def key_frames(self) -> np.ndarray:
        return np.arange(self.n_keys) * self.key_stride

    def t_norm(self, t) -> float:
        return t / (self.n_frames - 1)

    def to_json(self):
        return {"n_frames": self.n_frames, "n_keys": self.n_keys}


def normalize_time(t: float, grid: TimeGrid) -> tuple[int, float]:
    """Segment index and local parameter t_r for frame ``t``.

    The last frame maps to (n_keys - 2, 1) instead of opening a new segment.
    """
    if not (0 <= t <= grid.n_frames - 1) or math.isnan(t):
        raise OutOfRangeTime(f"frame {t} outside [0, {grid.n_frames - 1}]")
    # multiply before dividing so keyframe indices come out exact
    t_s = (t * (grid.n_keys - 1)) / (grid.n_frames - 1)
    k = math.floor(t_s)
    t_r = t_s - k
    if k >= grid.n_keys - 1:
        k, t_r = grid.n_keys - 2, 1.0
    return int(k), float(t_r)


def hermite_basis(t_r):
    t2 = t_r * t_r
    t3 = t2 * t_r
    return (2 * t3 - 3 * t2 + 1, t3 - 2 * t2 + t_r, -2 * t3 + 3 * t2, t3 - t2)


def hermite_basis_derivative(t_r):
    t2 = t_r * t_r
    return (6 * t2 - 6 * t_r, 3 * t2 - 4 * t_r + 1, -6 * t2 + 6 * t_r, 3 * t2 - 2 * t_r)


@dataclass
class ChsTrack:
    m: np.ndarray          # (..., K, 3) keyframe positions
    tau: np.ndarray        # (..., K, 3) keyframe velocity tangents
    q: np.ndarray          # (..., K, 4) keyframe rotations, wxyz
    opacity: np.ndarray    # (..., K)
    scale: np.ndarray      # (..., 3), no time index
    color: np.ndarray      # (..., 3)

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=np.float64)
        self.tau = np.asarray(self.tau, dtype=np.float64)
        self.q = quat_canonical(self.q)
        self.opacity = np.asarray(self.opacity, dtype=np.float64)
        self.scale = np.asarray(self.scale, dtype=np.float64)
        self.color = np.asarray(self.color, dtype=np.float64)
        lead, K = self.m.shape[:-2], self.m.shape[-2]
        if self.m.shape[-1] != 3 or self.tau.shape != self.m.shape:
            raise DimensionMismatch("m and tau must both be (..., K, 3)")
        if self.q.shape != lead + (K, 4) or self.opacity.shape != lead + (K,):
            raise DimensionMismatch("rotations/opacities must have one entry per keyframe")
        if self.scale.shape != lead + (3,) or self.color.shape != lead + (3,):
            raise DimensionMismatch("scale and color are (..., 3)")
        if np.any(self.scale <= 0):
            raise InvalidConfig("scale must be positive")
        if np.any((self.opacity < 0) | (self.opacity > 1)):
            raise InvalidConfig("opacities must lie in [0, 1]")

    @property
    def n_keys(self) -> int:
        return self.m.shape[-2]

    @classmethod
    def from_positions(cls, m, tau=None, scale=0.01, color=0.5, opacity=1.0) -> "ChsTrack":
        """Track with identity rotations and constant appearance."""
        m = np.asarray(m, dtype=np.float64)
        lead, K = m.shape[:-2], m.shape[-2]
        tau = np.zeros_like(m) if tau is None else tau
        q = np.zeros(lead + (K, 4))
        q[..., 0] = 1.0
        return cls(m, tau, q, np.full(lead + (K,), float(opacity)),
                   np.full(lead + (3,), float(scale)), np.full(lead + (3,), float(color)))

    def copy(self) -> "ChsTrack":
        return ChsTrack(self.m.copy(), self.tau.copy(), self.q.copy(), self.opacity.copy(),
                        self.scale.copy(), self.color.copy())

    def to_json(self):
        return {"m": self.m.tolist(), "tau": self.tau.tolist(), "q_wxyz": self.q.tolist(),
                "opacity": self.opacity.tolist(), "scale": self.scale.tolist(),
                "color": self.color.tolist()}

    @classmethod
    def from_json(cls, d) -> "ChsTrack":
        return cls(d["m"], d["tau"], d["q_wxyz"], d["opacity"], d["scale"], d["color"])


def _check(track: ChsTrack, grid: TimeGrid):
    if track.n_keys != grid.n_keys:
        raise DimensionMismatch(f"track has {track.n_keys} keyframes, grid expects {grid.n_keys}")


def eval_segment(m, tau, k: int, t_r: float):
    """Hermite polynomial on segment ``k`` at local parameter ``t_r``."""
    h00, h10, h01, h11 = hermite_basis(t_r)
    return (h00 * m[..., k, :] + h10 * tau[..., k, :]
            + h01 * m[..., k + 1, :] + h11 * tau[..., k + 1, :])


def derivative_segment(m, tau, k: int, t_r: float):
    d00, d10, d01, d11 = hermite_basis_derivative(t_r)
    return (d00 * m[..., k, :] + d10 * tau[..., k, :]
            + d01 * m[..., k + 1, :] + d11 * tau[..., k + 1, :])


def chs_eval(track: ChsTrack, t: float, grid: TimeGrid):
    _check(track, grid)
    k, t_r = normalize_time(t, grid)
    return eval_segment(track.m, track.tau, k, t_r)


def chs_derivative(track: ChsTrack, t: float, grid: TimeGrid):
    """Velocity d/dt_r of the position polynomial at frame ``t``."""
    _check(track, grid)
    k, t_r = normalize_time(t, grid)
    return derivative_segment(track.m, track.tau, k, t_r)


@dataclass
class GaussianSnapshot:
    position: np.ndarray
    rotation: np.ndarray
    opacity: np.ndarray
    scale: np.ndarray
    color: np.ndarray


def track_state(track: ChsTrack, t: float, grid: TimeGrid) -> GaussianSnapshot:
    _check(track, grid)
    k, t_r = normalize_time(t, grid)
    pos = eval_segment(track.m, track.tau, k, t_r)
    rot = slerp_array(track.q[..., k, :], track.q[..., k + 1, :], t_r)
    o0, o1 = track.opacity[..., k], track.opacity[..., k + 1]
    op = o0 if t_r == 0 else (o1 if t_r == 1 else np.clip((1 - t_r) * o0 + t_r * o1, 0.0, 1.0))
    return GaussianSnapshot(pos, rot, np.asarray(op), track.scale, track.color)


# ---- matrix form, for taped fitting -------------------------------------------------

def hermite_matrices(grid: TimeGrid, frames=None):
    """Basis matrices (F, K) so positions over ``frames`` are Bm @ m + Bt @ tau."""
    frames = np.arange(grid.n_frames) if frames is None else np.asarray(frames)
    Bm = np.zeros((len(frames), grid.n_keys))
    Bt = np.zeros((len(frames), grid.n_keys))
    for row, t in enumerate(frames):
        k, t_r = normalize_time(float(t), grid)
        h00, h10, h01, h11 = hermite_basis(t_r)
        Bm[row, k], Bt[row, k], Bm[row, k + 1], Bt[row, k + 1] = h00, h10, h01, h11
    return Bm, Bt


def chs_eval_frames(m, tau, grid: TimeGrid, frames=None):
    """Taped positions (..., F, 3) for tensors ``m`` and ``tau`` of shape (..., K, 3)."""
    Bm, Bt = hermite_matrices(grid, frames)
    return nn.matmul(nn.Tensor(Bm), m) + nn.matmul(nn.Tensor(Bt), tau)


def interp_values(values, grid: TimeGrid, frames=None):
    """Hermite interpolation with zero tangents of per-key features (..., K, D)."""
    Bm, _ = hermite_matrices(grid, frames)
    return nn.matmul(nn.Tensor(Bm), values)


def finite_difference_tangents(m):
    """Classical tangents 0.5 (m_{k+1} - m_{k-1}), one-sided at the ends."""
    m = np.asarray(m, dtype=np.float64)
    tau = np.empty_like(m)
    tau[..., 1:-1, :] = 0.5 * (m[..., 2:, :] - m[..., :-2, :])
    tau[..., 0, :] = m[..., 1, :] - m[..., 0, :]
    tau[..., -1, :] = m[..., -1, :] - m[..., -2, :]
    return tau


def write_trajectory_csv(path, track: ChsTrack, grid: TimeGrid):
    """One row per (gaussian_id, frame, x, y, z)."""
    m = track.m.reshape(-1, track.n_keys, 3)
    tau = track.tau.reshape(-1, track.n_keys, 3)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gaussian_id", "frame", "x", "y", "z"])
        for t in range(grid.n_frames):
            k, t_r = normalize_time(t, grid)
            pos = eval_segment(m, tau, k, t_r)
            for g in range(len(m)):
                w.writerow([g, t] + [repr(float(c)) for c in pos[g]])
